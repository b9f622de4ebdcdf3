#pragma once

// Minimal reverse-mode differentiation over dense float64 tensors.
//
// A Tensor is a shared handle (copies alias the same storage, as with
// torch::Tensor). Operations whose inputs require gradients record a Node on
// their output; backward() walks those nodes in reverse topological order.
// Operations on tensors that do not require gradients record nothing, so
// evaluation code builds no graph.

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace latkit::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

struct TensorImpl;

struct Node {
  std::string_view kind;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  // Reads out.grad and accumulates into the gradient slots of `inputs`.
  std::function<void(const TensorImpl& out)> backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> values;
  std::optional<std::vector<double>> grad;
  bool requires_grad = false;
  std::shared_ptr<Node> producer;
};

class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t dim() const { return impl_->shape.size(); }
  std::size_t size(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->values.size(); }

  std::span<const double> values() const { return impl_->values; }
  std::span<double> mutable_values() { return impl_->values; }
  double item() const;
  double operator[](std::size_t i) const { return impl_->values[i]; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool flag);
  bool has_grad() const { return impl_->grad.has_value(); }
  /// Gradient values; throws ContractError when the slot is empty.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();
  void clear_grad();

  /// Same values, fresh storage, no graph history, requires_grad = false.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  bool is_leaf() const { return impl_->producer == nullptr; }
  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<TensorImpl> impl_;
};

bool bit_equal(const Tensor& a, const Tensor& b);

/// Operation records reachable from a root, ordered so that every node's
/// inputs precede it.
class Graph {
 public:
  static Graph from_root(const Tensor& root);

  const std::vector<std::shared_ptr<TensorImpl>>& topological_order() const {
    return order_;
  }
  std::size_t size() const { return order_.size(); }

 private:
  std::vector<std::shared_ptr<TensorImpl>> order_;
};

/// Populates gradient slots of every requires-grad leaf reachable from
/// `loss`. Leaf gradients accumulate across calls; intermediate gradients are
/// rebuilt on every call.
void backward(const Tensor& loss);

// ---- primitives ----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
/// Batched product of [B,M,K] and [B,K,N]; with transpose_b, b is [B,N,K].
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false);

/// Valid-padding cross-correlation. input NCHW, kernel OIHW.
Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride = 1);
/// Adds bias[c] to every element of channel c of an NCHW tensor.
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);
/// Adds `bias` to every trailing block of x; bias.shape must equal the
/// trailing dims of x (row bias for [N,M], positional table for [B,T,D]).
Tensor add_bias(const Tensor& x, const Tensor& bias);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);
/// Elementwise clamp to [lo, hi]; gradient passes only where lo <= x <= hi.
Tensor clamp(const Tensor& x, double lo, double hi);

enum class ElementwiseKind { relu, gelu, add, mul, scale };
/// Dispatching form of the elementwise primitives; `factor` is used by scale.
Tensor elementwise(ElementwiseKind kind, std::span<const Tensor> operands,
                   double factor = 1.0);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, std::span<const std::size_t> axes);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// [B,T,D] -> [B,D] average over the middle axis.
Tensor mean_axis1(const Tensor& x);

/// Softmax over the last axis. With causal, x must have rank >= 2 and entry
/// (.., i, j) is masked out for j > i.
Tensor softmax(const Tensor& x, bool causal = false);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);
/// ids holds integral token ids; the result has shape ids.shape + [D].
Tensor embedding(const Tensor& ids, const Tensor& table);

inline constexpr int kIgnoreLabel = -1;

enum class Reduction { mean, sum };

/// Negative log-likelihood of `labels` under softmax(logits). Rows whose
/// label is kIgnoreLabel contribute nothing; mean divides by the number of
/// counted rows.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels,
                             Reduction reduction = Reduction::mean);

double gelu_value(double x);

}  // namespace latkit::ad
