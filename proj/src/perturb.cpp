#include "latkit/perturb.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "latkit/error.hpp"

namespace latkit {

std::string_view to_string(NormOrder p) { return p == NormOrder::l2 ? "2" : "inf"; }

NormOrder parse_norm_order(std::string_view text) {
  if (text == "2" || text == "l2") return NormOrder::l2;
  if (text == "inf" || text == "linf") return NormOrder::linf;
  throw ConfigError("unsupported norm order '" + std::string(text) + "' (expected 2 or inf)");
}

void PerturbationBudget::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ConfigError("epsilon must be finite and >= 0");
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be >= 0");
}

double lp_norm(std::span<const double> v, NormOrder p) {
  if (p == NormOrder::linf) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
  }
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

namespace {

std::size_t row_count(const ad::Shape& shape) {
  if (shape.empty()) throw DimensionError("perturbation needs a batch axis");
  return shape[0];
}

}  // namespace

ad::Tensor random_init(const ad::Shape& shape, const PerturbationBudget& budget, Rng& rng) {
  budget.validate();
  auto out = ad::Tensor::zeros(shape);
  if (budget.epsilon == 0.0) return out;
  const auto rows = row_count(shape);
  const auto width = out.numel() / rows;
  auto v = out.mutable_values();
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  for (std::size_t r = 0; r < rows; ++r) {
    auto row = v.subspan(r * width, width);
    for (auto& x : row) x = normal(rng);
    const double radius = uniform(rng) * budget.epsilon;
    const double norm = lp_norm(row, budget.norm);
    if (norm == 0.0) continue;
    for (auto& x : row) x *= radius / norm;
    // Guard against the scaled norm landing one ulp above eps.
    const double after = lp_norm(row, budget.norm);
    if (after > budget.epsilon) {
      for (auto& x : row) x *= budget.epsilon / after;
    }
  }
  return out;
}

std::vector<double> project_lp(std::span<const double> delta, double epsilon, NormOrder p) {
  std::vector<double> out(delta.begin(), delta.end());
  if (p == NormOrder::linf) {
    for (auto& x : out) x = std::clamp(x, -epsilon, epsilon);
    return out;
  }
  const double norm = lp_norm(delta, p);
  if (norm > epsilon) {
    const double factor = epsilon / norm;
    for (auto& x : out) x *= factor;
    // Rounding can leave the rescaled norm a hair above eps; shrink by one
    // more ulp-scale factor so the result lies in the closed ball.
    while (lp_norm(out, p) > epsilon) {
      for (auto& x : out) x = std::nextafter(x, 0.0);
    }
  }
  return out;
}

ad::Tensor project_lp(const ad::Tensor& delta, double epsilon, NormOrder p) {
  const auto rows = row_count(delta.shape());
  const auto width = delta.numel() / rows;
  std::vector<double> out;
  out.reserve(delta.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    auto projected = project_lp(delta.values().subspan(r * width, width), epsilon, p);
    out.insert(out.end(), projected.begin(), projected.end());
  }
  return ad::Tensor(delta.shape(), std::move(out));
}

NeuronLayout neuron_layout(const ad::Shape& shape) {
  const auto total = ad::numel(shape);
  if (shape.size() == 3) return {shape[0] * shape[1], shape[2]};
  const auto rows = row_count(shape);
  return {rows, total / rows};
}

ScaleVector compute_sigma(const ad::Tensor& batch_latents) {
  const auto layout = neuron_layout(batch_latents.shape());
  if (layout.rows < 2) {
    throw ContractError("compute_sigma needs at least 2 rows, got " + std::to_string(layout.rows));
  }
  const auto v = batch_latents.values();
  std::vector<double> mean(layout.neurons, 0.0), var(layout.neurons, 0.0);
  for (std::size_t r = 0; r < layout.rows; ++r)
    for (std::size_t j = 0; j < layout.neurons; ++j) mean[j] += v[r * layout.neurons + j];
  for (auto& m : mean) m /= static_cast<double>(layout.rows);
  for (std::size_t r = 0; r < layout.rows; ++r)
    for (std::size_t j = 0; j < layout.neurons; ++j) {
      const double d = v[r * layout.neurons + j] - mean[j];
      var[j] += d * d;
    }
  ScaleVector out;
  out.sigma.resize(layout.neurons);
  double mean_std = 0.0;
  for (std::size_t j = 0; j < layout.neurons; ++j) {
    out.sigma[j] = std::sqrt(var[j] / static_cast<double>(layout.rows));
    mean_std += out.sigma[j];
  }
  mean_std /= static_cast<double>(layout.neurons);
  if (mean_std == 0.0) {
    std::fill(out.sigma.begin(), out.sigma.end(), 1.0);
    return out;
  }
  for (auto& s : out.sigma) s /= mean_std;
  return out;
}

ad::Tensor apply_normalized(const ad::Tensor& delta, const ScaleVector& sigma, double alpha) {
  const auto n = sigma.sigma.size();
  if (n == 0 || delta.numel() % n != 0) {
    throw DimensionError("apply_normalized: " + std::to_string(n) + " scale entries do not tile " +
                         ad::to_string(delta.shape()));
  }
  std::vector<double> factors(delta.numel());
  for (std::size_t i = 0; i < factors.size(); ++i) {
    const double s = sigma.sigma[i % n];
    if (s < 0.0) throw ContractError("apply_normalized: sigma must be non-negative");
    factors[i] = std::max(s, alpha);
  }
  return ad::mul(delta, ad::Tensor(delta.shape(), std::move(factors)));
}

BatchRange batch_range(const ad::Tensor& clean_batch) {
  const auto v = clean_batch.values();
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  return {*lo, *hi};
}

ad::Tensor clip_to_range(const ad::Tensor& perturbed, BatchRange range) {
  return ad::clamp(perturbed, range.lo, range.hi);
}

ad::Tensor clip_to_batch_range(const ad::Tensor& perturbed, const ad::Tensor& clean_batch) {
  return clip_to_range(perturbed, batch_range(clean_batch));
}

}  // namespace latkit
