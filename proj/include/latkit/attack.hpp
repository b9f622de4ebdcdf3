#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "latkit/autodiff.hpp"
#include "latkit/model.hpp"
#include "latkit/perturb.hpp"

namespace latkit {

enum class IteratePolicy { last, best_loss };

std::string_view to_string(IteratePolicy policy);
IteratePolicy parse_iterate_policy(std::string_view text);

struct AttackConfig {
  std::size_t steps = 10;  // T_delta
  double step_size = 0.1;  // eta_delta
  PerturbationBudget budget;
  IteratePolicy policy = IteratePolicy::last;
  std::uint64_t seed = 0;
  /// delta += eta * sign(grad) instead of delta += eta * grad.
  bool sign_step = false;
  /// Latent attacks clamp perturbed activations to the clean batch range.
  bool clip_latents = true;

  /// Throws ConfigError on eta <= 0 or an invalid budget.
  void validate() const;
};

/// Where and how a perturbation enters the network for one batch. The scale
/// vector and clip bounds come from the clean batch and stay fixed while
/// the adversary iterates.
struct PerturbationSite {
  /// Activation index the perturbation is added to (0 = model input).
  std::size_t index = 0;
  std::optional<ScaleVector> sigma;
  double alpha = 0.0;
  std::optional<BatchRange> clip;

  /// activation + delta, with normalization and clipping as configured.
  ad::Tensor apply(const ad::Tensor& activation, const ad::Tensor& delta) const;
};

struct AttackOutcome {
  /// Per-example perturbation before normalization; obeys the budget.
  ad::Tensor delta;
  /// Mean task loss at the initial draw and after every ascent step.
  std::vector<double> loss_trace;
  /// Loss of the returned delta.
  double final_loss = 0.0;
  PerturbationSite site;
};

/// PGD on the input (on the embedding output for token models). With a
/// range, x + delta is kept inside it after every step.
AttackOutcome pgd_input_attack(const SplitModel& model, const ad::Tensor& x, std::span<const int> labels,
                               const AttackConfig& config, std::optional<InputRange> range = std::nullopt);

/// PGD on the activation at model.split().
AttackOutcome pgd_latent_attack(const SplitModel& model, const ad::Tensor& x, std::span<const int> labels,
                                const AttackConfig& config);

/// One random_init draw at model.split() passed through the same site
/// transform as the latent attack. No ascent steps, so the trace holds a
/// single value.
AttackOutcome random_latent_perturbation(const SplitModel& model, const ad::Tensor& x,
                                         std::span<const int> labels, const AttackConfig& config);

/// Mean task loss with the outcome's perturbation applied. Builds a graph to
/// the model parameters, so it doubles as the training objective.
ad::Tensor perturbed_loss(const SplitModel& model, const ad::Tensor& x, std::span<const int> labels,
                          const AttackOutcome& outcome);

}  // namespace latkit
