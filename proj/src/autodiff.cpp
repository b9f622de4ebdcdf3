#include "latkit/autodiff.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <unordered_set>

#include "latkit/error.hpp"

namespace latkit::ad {

namespace {

using ImplPtr = std::shared_ptr<TensorImpl>;

std::vector<double>& grad_slot(TensorImpl& t) {
  if (!t.grad) t.grad.emplace(t.values.size(), 0.0);
  return *t.grad;
}

bool wants_grad(const TensorImpl& t) { return t.requires_grad; }

// Builds the output tensor and, when any input requires gradients, attaches a
// Node carrying `backward`.
Tensor make_result(std::string_view kind, Shape shape, std::vector<double> values,
                   std::initializer_list<Tensor> inputs,
                   std::function<void(const TensorImpl&)> backward) {
  auto out = std::make_shared<TensorImpl>();
  out->shape = std::move(shape);
  out->values = std::move(values);
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (any) {
    auto node = std::make_shared<Node>();
    node->kind = kind;
    for (const auto& in : inputs) node->inputs.push_back(in.impl());
    node->backward = std::move(backward);
    out->producer = std::move(node);
    out->requires_grad = true;
  }
  return Tensor(std::move(out));
}

void require_same_shape(const Tensor& a, const Tensor& b, std::string_view op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) +
                         " vs " + to_string(b.shape()));
  }
}

void require_rank(const Tensor& t, std::size_t rank, std::string_view op) {
  if (t.dim() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got " + to_string(t.shape()));
  }
}

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// ---- Tensor ----------------------------------------------------------------

Tensor::Tensor() = default;

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
  for (auto e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive: " + to_string(shape));
  }
  if (ad::numel(shape) != values.size()) {
    throw DimensionError("shape " + to_string(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  }
  impl_->shape = std::move(shape);
  impl_->values = std::move(values);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = ad::numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
  return impl_->values[0];
}

void Tensor::set_requires_grad(bool flag) {
  if (!is_leaf()) throw ContractError("requires_grad can only be set on leaf tensors");
  impl_->requires_grad = flag;
}

std::span<const double> Tensor::grad() const {
  if (!impl_->grad) throw ContractError("gradient slot is empty");
  return *impl_->grad;
}

std::span<double> Tensor::mutable_grad() {
  if (!impl_->grad) throw ContractError("gradient slot is empty");
  return *impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_->grad) std::fill(impl_->grad->begin(), impl_->grad->end(), 0.0);
}

void Tensor::clear_grad() { impl_->grad.reset(); }

Tensor Tensor::detach() const { return Tensor(impl_->shape, impl_->values, false); }

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  auto va = a.values();
  auto vb = b.values();
  // memcmp semantics: distinguishes -0.0 from 0.0 and compares NaN payloads.
  return std::equal(va.begin(), va.end(), vb.begin(), [](double x, double y) {
    return std::bit_cast<std::uint64_t>(x) == std::bit_cast<std::uint64_t>(y);
  });
}

// ---- graph / backward -------------------------------------------------------

Graph Graph::from_root(const Tensor& root) {
  Graph g;
  if (!root.defined() || !root.requires_grad()) return g;
  std::unordered_set<const TensorImpl*> visited;
  // Iterative post-order DFS.
  std::vector<std::pair<ImplPtr, std::size_t>> stack;
  stack.emplace_back(root.impl(), 0);
  visited.insert(root.impl().get());
  while (!stack.empty()) {
    auto& [impl, next] = stack.back();
    const auto* node = impl->producer.get();
    if (node && next < node->inputs.size()) {
      const auto& child = node->inputs[next++];
      if (wants_grad(*child) && visited.insert(child.get()).second) {
        stack.emplace_back(child, 0);
      }
      continue;
    }
    g.order_.push_back(impl);
    stack.pop_back();
  }
  return g;
}

void backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward() requires a scalar loss, got shape " + to_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;
  const auto graph = Graph::from_root(loss);
  const auto& order = graph.topological_order();
  for (const auto& impl : order) {
    if (impl->producer) impl->grad.emplace(impl->values.size(), 0.0);
  }
  grad_slot(*loss.impl())[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const auto& impl = *it;
    if (impl->producer) impl->producer->backward(*impl);
  }
}

// ---- linear algebra --------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const auto m = a.size(0), k = a.size(1), n = b.size(1);
  if (b.size(0) != k) {
    throw DimensionError("matmul: inner extents differ for " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      const double* brow = bv.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += aip * brow[j];
    }
  }
  auto ai = a.impl();
  auto bi = b.impl();
  return make_result("matmul", {m, n}, std::move(out), {a, b}, [ai, bi, m, k, n](const TensorImpl& o) {
    const auto& g = *o.grad;
    if (ai->requires_grad) {
      auto& ga = grad_slot(*ai);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          const double* grow = g.data() + i * n;
          const double* brow = bi->values.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          ga[i * k + p] += acc;
        }
      }
    }
    if (bi->requires_grad) {
      auto& gb = grad_slot(*bi);
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = g.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = ai->values[i * k + p];
          double* gbrow = gb.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
        }
      }
    }
  });
}

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b) {
  require_rank(a, 3, "bmm");
  require_rank(b, 3, "bmm");
  const auto batch = a.size(0), m = a.size(1), k = a.size(2);
  const auto n = transpose_b ? b.size(1) : b.size(2);
  const auto bk = transpose_b ? b.size(2) : b.size(1);
  if (b.size(0) != batch || bk != k) {
    throw DimensionError("bmm: incompatible shapes " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
  }
  // b element (p, j) of batch s.
  auto b_at = [=](std::size_t s, std::size_t p, std::size_t j) -> std::size_t {
    return transpose_b ? s * n * k + j * k + p : s * k * n + p * n + j;
  };
  std::vector<double> out(batch * m * n, 0.0);
  const auto& av = a.impl()->values;
  const auto& bv = b.impl()->values;
  for (std::size_t s = 0; s < batch; ++s) {
    for (std::size_t i = 0; i < m; ++i) {
      double* row = out.data() + (s * m + i) * n;
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = av[(s * m + i) * k + p];
        for (std::size_t j = 0; j < n; ++j) row[j] += aip * bv[b_at(s, p, j)];
      }
    }
  }
  auto ai = a.impl();
  auto bi = b.impl();
  return make_result("bmm", {batch, m, n}, std::move(out), {a, b},
                     [ai, bi, batch, m, k, n, b_at](const TensorImpl& o) {
                       const auto& g = *o.grad;
                       if (ai->requires_grad) {
                         auto& ga = grad_slot(*ai);
                         for (std::size_t s = 0; s < batch; ++s)
                           for (std::size_t i = 0; i < m; ++i)
                             for (std::size_t p = 0; p < k; ++p) {
                               double acc = 0.0;
                               for (std::size_t j = 0; j < n; ++j)
                                 acc += g[(s * m + i) * n + j] * bi->values[b_at(s, p, j)];
                               ga[(s * m + i) * k + p] += acc;
                             }
                       }
                       if (bi->requires_grad) {
                         auto& gb = grad_slot(*bi);
                         for (std::size_t s = 0; s < batch; ++s)
                           for (std::size_t i = 0; i < m; ++i)
                             for (std::size_t p = 0; p < k; ++p) {
                               const double aip = ai->values[(s * m + i) * k + p];
                               for (std::size_t j = 0; j < n; ++j)
                                 gb[b_at(s, p, j)] += aip * g[(s * m + i) * n + j];
                             }
                       }
                     });
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride) {
  require_rank(input, 4, "conv2d");
  require_rank(kernel, 4, "conv2d");
  if (stride == 0) throw DimensionError("conv2d: stride must be positive");
  const auto n = input.size(0), c = input.size(1), h = input.size(2), w = input.size(3);
  const auto o = kernel.size(0), kc = kernel.size(1), kh = kernel.size(2), kw = kernel.size(3);
  if (kc != c) {
    throw DimensionError("conv2d: channel mismatch between input " + to_string(input.shape()) +
                         " and kernel " + to_string(kernel.shape()));
  }
  if (kh > h || kw > w) {
    throw DimensionError("conv2d: kernel " + to_string(kernel.shape()) + " larger than input " +
                         to_string(input.shape()));
  }
  const auto oh = (h - kh) / stride + 1, ow = (w - kw) / stride + 1;
  std::vector<double> out(n * o * oh * ow, 0.0);
  const auto& xv = input.impl()->values;
  const auto& kv = kernel.impl()->values;
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oc = 0; oc < o; ++oc) {
      double* plane = out.data() + (b * o + oc) * oh * ow;
      for (std::size_t ic = 0; ic < c; ++ic) {
        const double* src = xv.data() + (b * c + ic) * h * w;
        for (std::size_t i = 0; i < kh; ++i)
          for (std::size_t j = 0; j < kw; ++j) {
            const double wt = kv[((oc * c + ic) * kh + i) * kw + j];
            for (std::size_t y = 0; y < oh; ++y) {
              const double* srow = src + (y * stride + i) * w + j;
              double* orow = plane + y * ow;
              for (std::size_t x = 0; x < ow; ++x) orow[x] += wt * srow[x * stride];
            }
          }
      }
    }
  auto xi = input.impl();
  auto ki = kernel.impl();
  return make_result(
      "conv2d", {n, o, oh, ow}, std::move(out), {input, kernel},
      [=](const TensorImpl& res) {
        const auto& g = *res.grad;
        std::vector<double>* gx = xi->requires_grad ? &grad_slot(*xi) : nullptr;
        std::vector<double>* gk = ki->requires_grad ? &grad_slot(*ki) : nullptr;
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t oc = 0; oc < o; ++oc) {
            const double* gplane = g.data() + (b * o + oc) * oh * ow;
            for (std::size_t ic = 0; ic < c; ++ic) {
              const std::size_t in_off = (b * c + ic) * h * w;
              for (std::size_t i = 0; i < kh; ++i)
                for (std::size_t j = 0; j < kw; ++j) {
                  const std::size_t kidx = ((oc * c + ic) * kh + i) * kw + j;
                  const double wt = ki->values[kidx];
                  double acc = 0.0;
                  for (std::size_t y = 0; y < oh; ++y) {
                    const std::size_t row = in_off + (y * stride + i) * w + j;
                    const double* grow = gplane + y * ow;
                    for (std::size_t x = 0; x < ow; ++x) {
                      const std::size_t idx = row + x * stride;
                      if (gx) (*gx)[idx] += wt * grow[x];
                      acc += xi->values[idx] * grow[x];
                    }
                  }
                  if (gk) (*gk)[kidx] += acc;
                }
            }
          }
      });
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  require_rank(x, 4, "add_channel_bias");
  if (bias.dim() != 1 || bias.size(0) != x.size(1)) {
    throw DimensionError("add_channel_bias: bias " + to_string(bias.shape()) +
                         " does not match channels of " + to_string(x.shape()));
  }
  const auto n = x.size(0), c = x.size(1), plane = x.size(2) * x.size(3);
  std::vector<double> out(x.values().begin(), x.values().end());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double v = bias[ch];
      double* p = out.data() + (b * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] += v;
    }
  auto xi = x.impl();
  auto bi = bias.impl();
  return make_result("add_channel_bias", x.shape(), std::move(out), {x, bias},
                     [xi, bi, n, c, plane](const TensorImpl& o) {
                       const auto& g = *o.grad;
                       if (xi->requires_grad) {
                         auto& gx = grad_slot(*xi);
                         for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                       }
                       if (bi->requires_grad) {
                         auto& gb = grad_slot(*bi);
                         for (std::size_t b = 0; b < n; ++b)
                           for (std::size_t ch = 0; ch < c; ++ch) {
                             double acc = 0.0;
                             const double* p = g.data() + (b * c + ch) * plane;
                             for (std::size_t i = 0; i < plane; ++i) acc += p[i];
                             gb[ch] += acc;
                           }
                       }
                     });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const auto& xs = x.shape();
  const auto& bs = bias.shape();
  if (bs.size() > xs.size() || !std::equal(bs.rbegin(), bs.rend(), xs.rbegin())) {
    throw DimensionError("add_bias: bias " + to_string(bs) + " is not a trailing block of " +
                         to_string(xs));
  }
  const auto block = bias.numel();
  std::vector<double> out(x.values().begin(), x.values().end());
  const auto& bv = bias.impl()->values;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % block];
  auto xi = x.impl();
  auto bi = bias.impl();
  return make_result("add_bias", xs, std::move(out), {x, bias}, [xi, bi, block](const TensorImpl& o) {
    const auto& g = *o.grad;
    if (xi->requires_grad) {
      auto& gx = grad_slot(*xi);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (bi->requires_grad) {
      auto& gb = grad_slot(*bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % block] += g[i];
    }
  });
}

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  auto ai = a.impl();
  auto bi = b.impl();
  return make_result("add", a.shape(), std::move(out), {a, b}, [ai, bi](const TensorImpl& o) {
    const auto& g = *o.grad;
    for (const auto& t : {ai, bi}) {
      if (!t->requires_grad) continue;
      auto& gt = grad_slot(*t);
      for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  auto ai = a.impl();
  auto bi = b.impl();
  return make_result("sub", a.shape(), std::move(out), {a, b}, [ai, bi](const TensorImpl& o) {
    const auto& g = *o.grad;
    if (ai->requires_grad) {
      auto& ga = grad_slot(*ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (bi->requires_grad) {
      auto& gb = grad_slot(*bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  auto ai = a.impl();
  auto bi = b.impl();
  return make_result("mul", a.shape(), std::move(out), {a, b}, [ai, bi](const TensorImpl& o) {
    const auto& g = *o.grad;
    if (ai->requires_grad) {
      auto& ga = grad_slot(*ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bi->values[i];
    }
    if (bi->requires_grad) {
      auto& gb = grad_slot(*bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ai->values[i];
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  auto xi = x.impl();
  return make_result("scale", x.shape(), std::move(out), {x}, [xi, factor](const TensorImpl& o) {
    const auto& g = *o.grad;
    auto& gx = grad_slot(*xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
  });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  auto xi = x.impl();
  return make_result("relu", x.shape(), std::move(out), {x}, [xi](const TensorImpl& o) {
    const auto& g = *o.grad;
    auto& gx = grad_slot(*xi);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xi->values[i] > 0.0) gx[i] += g[i];
  });
}

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

Tensor gelu(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_value(x[i]);
  auto xi = x.impl();
  return make_result("gelu", x.shape(), std::move(out), {x}, [xi](const TensorImpl& o) {
    const auto& g = *o.grad;
    auto& gx = grad_slot(*xi);
    constexpr double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = xi->values[i];
      const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      gx[i] += g[i] * (cdf + v * pdf);
    }
  });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(x[i], lo, hi);
  auto xi = x.impl();
  return make_result("clamp", x.shape(), std::move(out), {x}, [xi, lo, hi](const TensorImpl& o) {
    const auto& g = *o.grad;
    auto& gx = grad_slot(*xi);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = xi->values[i];
      if (v >= lo && v <= hi) gx[i] += g[i];
    }
  });
}

Tensor elementwise(ElementwiseKind kind, std::span<const Tensor> operands, double factor) {
  const std::size_t arity =
      (kind == ElementwiseKind::add || kind == ElementwiseKind::mul) ? 2 : 1;
  if (operands.size() != arity) {
    throw ContractError("elementwise: expected " + std::to_string(arity) + " operands, got " +
                        std::to_string(operands.size()));
  }
  switch (kind) {
    case ElementwiseKind::relu: return relu(operands[0]);
    case ElementwiseKind::gelu: return gelu(operands[0]);
    case ElementwiseKind::add: return add(operands[0], operands[1]);
    case ElementwiseKind::mul: return mul(operands[0], operands[1]);
    case ElementwiseKind::scale: return scale(operands[0], factor);
  }
  throw ContractError("elementwise: unknown kind");
}

// ---- shape ops ---------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
  if (ad::numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  auto xi = x.impl();
  return make_result("reshape", std::move(shape), std::move(out), {x}, [xi](const TensorImpl& o) {
    const auto& g = *o.grad;
    auto& gx = grad_slot(*xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Tensor permute(const Tensor& x, std::span<const std::size_t> axes) {
  const auto rank = x.dim();
  if (axes.size() != rank) throw DimensionError("permute: axis count does not match rank");
  std::vector<bool> seen(rank, false);
  for (auto a : axes) {
    if (a >= rank || seen[a]) throw DimensionError("permute: invalid axis permutation");
    seen[a] = true;
  }
  const auto& in_shape = x.shape();
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * in_shape[i];
  Shape out_shape(rank);
  std::vector<std::size_t> src_stride(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = in_shape[axes[i]];
    src_stride[i] = in_strides[axes[i]];
  }
  // Source offset for every output element, in output order.
  const auto total = x.numel();
  auto source = std::make_shared<std::vector<std::size_t>>(total);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t offset = 0;
  for (std::size_t flat = 0; flat < total; ++flat) {
    (*source)[flat] = offset;
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      offset += src_stride[d];
      if (idx[d] < out_shape[d]) break;
      offset -= src_stride[d] * idx[d];
      idx[d] = 0;
    }
  }
  std::vector<double> out(total);
  const auto& xv = x.impl()->values;
  for (std::size_t i = 0; i < total; ++i) out[i] = xv[(*source)[i]];
  auto xi = x.impl();
  return make_result("permute", std::move(out_shape), std::move(out), {x}, [xi, source](const TensorImpl& o) {
    const auto& g = *o.grad;
    auto& gx = grad_slot(*xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[(*source)[i]] += g[i];
  });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  auto xi = x.impl();
  return make_result("sum", {1}, {acc}, {x}, [xi](const TensorImpl& o) {
    const double g = (*o.grad)[0];
    auto& gx = grad_slot(*xi);
    for (auto& v : gx) v += g;
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor mean_axis1(const Tensor& x) {
  require_rank(x, 3, "mean_axis1");
  const auto b = x.size(0), t = x.size(1), d = x.size(2);
  std::vector<double> out(b * d, 0.0);
  const auto& xv = x.impl()->values;
  const double inv = 1.0 / static_cast<double>(t);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t s = 0; s < t; ++s)
      for (std::size_t k = 0; k < d; ++k) out[i * d + k] += xv[(i * t + s) * d + k] * inv;
  auto xi = x.impl();
  return make_result("mean_axis1", {b, d}, std::move(out), {x}, [xi, b, t, d, inv](const TensorImpl& o) {
    const auto& g = *o.grad;
    auto& gx = grad_slot(*xi);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t s = 0; s < t; ++s)
        for (std::size_t k = 0; k < d; ++k) gx[(i * t + s) * d + k] += g[i * d + k] * inv;
  });
}

// ---- normalization / attention helpers ---------------------------------------

Tensor softmax(const Tensor& x, bool causal) {
  if (x.dim() == 0) throw DimensionError("softmax: rank-0 input");
  if (causal && x.dim() < 2) throw DimensionError("softmax: causal mask needs rank >= 2");
  const auto cols = x.shape().back();
  const auto rows = x.numel() / cols;
  const auto mrows = causal ? x.shape()[x.dim() - 2] : 0;
  std::vector<double> out(x.numel(), 0.0);
  const auto& xv = x.impl()->values;
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t limit = causal ? std::min(cols, r % mrows + 1) : cols;
    const double* src = xv.data() + r * cols;
    double* dst = out.data() + r * cols;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < limit; ++j) mx = std::max(mx, src[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < limit; ++j) {
      dst[j] = std::exp(src[j] - mx);
      z += dst[j];
    }
    for (std::size_t j = 0; j < limit; ++j) dst[j] /= z;
  }
  auto xi = x.impl();
  auto y = std::make_shared<std::vector<double>>(out);
  return make_result("softmax", x.shape(), std::move(out), {x}, [xi, y, rows, cols](const TensorImpl& o) {
    const auto& g = *o.grad;
    auto& gx = grad_slot(*xi);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* yr = y->data() + r * cols;
      const double* gr = g.data() + r * cols;
      double dot = 0.0;
      for (std::size_t j = 0; j < cols; ++j) dot += yr[j] * gr[j];
      for (std::size_t j = 0; j < cols; ++j) gx[r * cols + j] += yr[j] * (gr[j] - dot);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const auto d = x.shape().back();
  if (gamma.dim() != 1 || gamma.size(0) != d || beta.shape() != gamma.shape()) {
    throw DimensionError("layer_norm: gamma/beta must have shape [" + std::to_string(d) + "]");
  }
  const auto rows = x.numel() / d;
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(x.numel());
  const auto& xv = x.impl()->values;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += src[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (src[j] - mu) * (src[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (src[j] - mu) * is;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gamma[j] + beta[j];
    }
  }
  auto xi = x.impl();
  auto gi = gamma.impl();
  auto bi = beta.impl();
  return make_result("layer_norm", x.shape(), std::move(out), {x, gamma, beta},
                     [xi, gi, bi, xhat, inv_std, rows, d](const TensorImpl& o) {
                       const auto& g = *o.grad;
                       if (gi->requires_grad || bi->requires_grad) {
                         auto* gg = gi->requires_grad ? &grad_slot(*gi) : nullptr;
                         auto* gb = bi->requires_grad ? &grad_slot(*bi) : nullptr;
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t j = 0; j < d; ++j) {
                             if (gg) (*gg)[j] += g[r * d + j] * (*xhat)[r * d + j];
                             if (gb) (*gb)[j] += g[r * d + j];
                           }
                       }
                       if (!xi->requires_grad) return;
                       auto& gx = grad_slot(*xi);
                       const double inv_d = 1.0 / static_cast<double>(d);
                       for (std::size_t r = 0; r < rows; ++r) {
                         double mean_dh = 0.0, mean_dh_h = 0.0;
                         for (std::size_t j = 0; j < d; ++j) {
                           const double dh = g[r * d + j] * gi->values[j];
                           mean_dh += dh;
                           mean_dh_h += dh * (*xhat)[r * d + j];
                         }
                         mean_dh *= inv_d;
                         mean_dh_h *= inv_d;
                         for (std::size_t j = 0; j < d; ++j) {
                           const double dh = g[r * d + j] * gi->values[j];
                           gx[r * d + j] +=
                               (*inv_std)[r] * (dh - mean_dh - (*xhat)[r * d + j] * mean_dh_h);
                         }
                       }
                     });
}

Tensor embedding(const Tensor& ids, const Tensor& table) {
  require_rank(table, 2, "embedding");
  const auto vocab = table.size(0), d = table.size(1);
  const auto count = ids.numel();
  auto rows = std::make_shared<std::vector<std::size_t>>(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double v = ids[i];
    if (!(v >= 0.0) || v >= static_cast<double>(vocab) || v != std::floor(v)) {
      throw IndexError("embedding: token id " + std::to_string(v) + " outside [0, " +
                       std::to_string(vocab) + ")");
    }
    (*rows)[i] = static_cast<std::size_t>(v);
  }
  std::vector<double> out(count * d);
  const auto& tv = table.impl()->values;
  for (std::size_t i = 0; i < count; ++i)
    std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>((*rows)[i] * d), d,
                out.begin() + static_cast<std::ptrdiff_t>(i * d));
  Shape shape = ids.shape();
  shape.push_back(d);
  auto ti = table.impl();
  return make_result("embedding", std::move(shape), std::move(out), {table}, [ti, rows, d](const TensorImpl& o) {
    const auto& g = *o.grad;
    auto& gt = grad_slot(*ti);
    for (std::size_t i = 0; i < rows->size(); ++i)
      for (std::size_t j = 0; j < d; ++j) gt[(*rows)[i] * d + j] += g[i * d + j];
  });
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels, Reduction reduction) {
  require_rank(logits, 2, "softmax_cross_entropy");
  const auto n = logits.size(0), c = logits.size(1);
  if (labels.size() != n) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for logits " + to_string(logits.shape()));
  }
  std::size_t counted = 0;
  for (int y : labels) {
    if (y == kIgnoreLabel) continue;
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw IndexError("softmax_cross_entropy: label " + std::to_string(y) + " outside [0, " +
                       std::to_string(c) + ")");
    }
    ++counted;
  }
  const auto& lv = logits.impl()->values;
  auto probs = std::make_shared<std::vector<double>>(n * c, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] == kIgnoreLabel) continue;
    const double* z = lv.data() + i * c;
    const double mx = *std::max_element(z, z + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(z[j] - mx);
    const double lse = mx + std::log(s);
    total += lse - z[labels[i]];
    for (std::size_t j = 0; j < c; ++j) (*probs)[i * c + j] = std::exp(z[j] - lse);
  }
  const double denom =
      reduction == Reduction::mean ? static_cast<double>(std::max<std::size_t>(counted, 1)) : 1.0;
  std::vector<int> lab(labels.begin(), labels.end());
  auto li = logits.impl();
  return make_result("softmax_cross_entropy", {1}, {total / denom}, {logits},
                     [li, probs, lab = std::move(lab), n, c, denom](const TensorImpl& o) {
                       const double g = (*o.grad)[0] / denom;
                       auto& gl = grad_slot(*li);
                       for (std::size_t i = 0; i < n; ++i) {
                         if (lab[i] == kIgnoreLabel) continue;
                         for (std::size_t j = 0; j < c; ++j) {
                           const double target = static_cast<int>(j) == lab[i] ? 1.0 : 0.0;
                           gl[i * c + j] += g * ((*probs)[i * c + j] - target);
                         }
                       }
                     });
}

}  // namespace latkit::ad
