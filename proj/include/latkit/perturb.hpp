#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "latkit/autodiff.hpp"
#include "latkit/dataset.hpp"
#include "latkit/rng.hpp"

namespace latkit {

enum class NormOrder { l2, linf };

std::string_view to_string(NormOrder p);
NormOrder parse_norm_order(std::string_view text);

struct PerturbationBudget {
  double epsilon = 0.0;
  NormOrder norm = NormOrder::l2;
  /// Scale the constrained perturbation per neuron by max(sigma, alpha).
  bool normalized = false;
  double alpha = 0.0;

  /// Throws ConfigError unless epsilon >= 0 and alpha >= 0.
  void validate() const;
};

/// Per-neuron scale: each neuron's intra-batch standard deviation divided by
/// the mean of all neuron-wise standard deviations.
struct ScaleVector {
  std::vector<double> sigma;
};

double lp_norm(std::span<const double> v, NormOrder p);

/// Perturbations act per example: axis 0 of every tensor below is the batch
/// and the norm constraint applies to each example's slice separately.

/// delta ~ N(0, I), r ~ U(0, 1), delta <- delta * r * eps / ||delta||_p.
ad::Tensor random_init(const ad::Shape& shape, const PerturbationBudget& budget, Rng& rng);

/// Euclidean projection of one vector onto the eps-ball; points inside the
/// ball are returned unchanged.
std::vector<double> project_lp(std::span<const double> delta, double epsilon, NormOrder p);
/// Row-wise projection of a batch of perturbations.
ad::Tensor project_lp(const ad::Tensor& delta, double epsilon, NormOrder p);

/// Rows and neurons of a latent batch: [B,T,D] activations are treated as
/// B*T rows of D neurons; any other rank as B rows of prod(rest) neurons.
struct NeuronLayout {
  std::size_t rows = 0;
  std::size_t neurons = 0;
};
NeuronLayout neuron_layout(const ad::Shape& latent_shape);

/// Population standard deviation per neuron, normalized to mean 1. A batch
/// with all standard deviations zero yields all ones. Requires >= 2 rows.
ScaleVector compute_sigma(const ad::Tensor& batch_latents);

/// delta ⊙ max(sigma, alpha), with sigma tiled along the neuron layout.
/// Differentiable in delta.
ad::Tensor apply_normalized(const ad::Tensor& delta, const ScaleVector& sigma, double alpha);

struct BatchRange {
  double lo = 0.0;
  double hi = 0.0;
};
/// Global minimum and maximum over every element of a clean batch.
BatchRange batch_range(const ad::Tensor& clean_batch);

/// Clamps every element into [min(clean_batch), max(clean_batch)].
ad::Tensor clip_to_batch_range(const ad::Tensor& perturbed, const ad::Tensor& clean_batch);
ad::Tensor clip_to_range(const ad::Tensor& perturbed, BatchRange range);

}  // namespace latkit
