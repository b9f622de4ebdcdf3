#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "latkit/autodiff.hpp"
#include "latkit/parameters.hpp"

namespace latkit {

enum class ArchKind { mlp, cnn, transformer_classifier, transformer_generator };

std::string_view to_string(ArchKind kind);
ArchKind parse_arch_kind(std::string_view text);

/// Hyperparameters of a splittable model. Fields irrelevant to `kind` are
/// ignored.
struct ModelSpec {
  ArchKind kind = ArchKind::mlp;
  /// Per-example input shape: {features} for mlp, {C,H,W} for cnn, {T} for
  /// the transformer kinds.
  ad::Shape input_shape;
  /// Class count, or vocabulary size for the generator.
  std::size_t outputs = 0;
  std::uint64_t seed = 0;

  std::size_t hidden = 64;  // mlp width
  std::size_t depth = 3;    // mlp hidden layers
  std::vector<std::size_t> conv_channels = {8, 16};
  std::size_t conv_kernel = 3;
  std::size_t dense_width = 64;  // cnn dense layer
  std::size_t vocab = 0;
  std::size_t width = 32;  // transformer embedding width
  std::size_t heads = 2;
  std::size_t blocks = 2;

  static ModelSpec default_for(ArchKind kind, ad::Shape input_shape, std::size_t outputs,
                               std::uint64_t seed);
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual ad::Tensor forward(const ad::Tensor& x) const = 0;
  virtual std::string_view kind() const = 0;
  virtual std::unique_ptr<Layer> clone() const = 0;
  /// Parameter tensors owned by this layer (shared handles).
  virtual std::vector<std::pair<std::string, ad::Tensor>> parameters() const = 0;
};

struct LayerHandle {
  std::size_t split = 0;
  /// Per-example latent shape at `split`.
  ad::Shape latent_shape;
};

/// A layered network g ∘ f where f = layers [0, split) and g = layers
/// [split, depth). Activations are exposed after each whole layer.
class SplitModel {
 public:
  static SplitModel build(const ModelSpec& spec);

  SplitModel(const SplitModel& other);
  SplitModel& operator=(const SplitModel& other);
  SplitModel(SplitModel&&) noexcept = default;
  SplitModel& operator=(SplitModel&&) noexcept = default;
  ~SplitModel() = default;

  const ModelSpec& spec() const { return spec_; }
  ArchKind kind() const { return spec_.kind; }
  std::size_t depth() const { return layers_.size(); }
  std::size_t split() const { return split_; }
  void set_split(std::size_t split);
  LayerHandle handle() const { return handle(split_); }
  LayerHandle handle(std::size_t split) const;
  const ad::Shape& input_shape() const { return spec_.input_shape; }
  bool is_generator() const { return spec_.kind == ArchKind::transformer_generator; }
  bool is_token_model() const;

  /// Split at which input-space attacks act: 0 for continuous inputs, 1
  /// (post-embedding) for token models.
  std::size_t input_attack_split() const { return is_token_model() ? 1 : 0; }

  ad::Tensor forward(const ad::Tensor& x) const;
  ad::Tensor forward_f(const ad::Tensor& x) const;
  ad::Tensor forward_g(const ad::Tensor& latent) const;
  /// Layers [begin, end) applied to an activation at index `begin`.
  ad::Tensor forward_range(const ad::Tensor& activation, std::size_t begin, std::size_t end) const;

  Parameters& parameters() { return params_; }
  const Parameters& parameters() const { return params_; }
  const Layer& layer(std::size_t i) const { return *layers_.at(i); }

  /// Deep copy whose parameters do not require gradients. Forward passes on
  /// it record no parameter graph, so attacks and evaluation can share one
  /// source model across threads.
  SplitModel frozen() const;

 private:
  SplitModel() = default;
  void rebuild_parameters();
  void check_activation(const ad::Tensor& t, std::size_t index) const;

  ModelSpec spec_;
  std::vector<std::unique_ptr<Layer>> layers_;
  /// Per-example activation shape at every index 0..depth.
  std::vector<ad::Shape> activation_shapes_;
  std::size_t split_ = 0;
  Parameters params_;
};

/// Split used for LAT when none is configured: after the first hidden layer
/// for mlp, after the convolution stack for cnn, after the first block for
/// transformers.
std::size_t default_lat_split(ArchKind kind);

bool parameters_bit_equal(const SplitModel& a, const SplitModel& b);

/// Cross-entropy of model output against per-row targets. Classifier output
/// [B,C] takes B labels; generator output [B,T,V] takes B*T next-token labels.
ad::Tensor task_loss(const ad::Tensor& output, std::span<const int> labels,
                     ad::Reduction reduction = ad::Reduction::mean);

}  // namespace latkit
