#include "latkit/eval.hpp"

#include <algorithm>
#include <cmath>

#include "latkit/error.hpp"

namespace latkit {

std::string EvalRecord::metric_kind() const {
  return std::string(to_string(clean_kind)) + "/" + std::string(to_string(robust_kind)) + "/" +
         std::string(to_string(backdoor_kind));
}

double EvalRecord::oriented_clean() const { return higher_is_better(clean_kind) ? clean : -clean; }

double EvalRecord::oriented_robust() const {
  // Undesirable-sequence loss: higher means the model resists the behaviour.
  if (robust_kind == MetricKind::token_loss) return robust;
  return higher_is_better(robust_kind) ? robust : -robust;
}

double EvalRecord::oriented_backdoor() const {
  if (backdoor_kind == MetricKind::token_loss) return backdoor;
  return higher_is_better(backdoor_kind) ? backdoor : -backdoor;
}

void EvalRecord::validate() const {
  auto check = [&](const std::string& what, double v, MetricKind kind) {
    if (!std::isfinite(v)) throw ContractError(run_id + ": " + what + " metric is not finite");
    if (kind != MetricKind::token_loss && (v < 0.0 || v > 1.0)) {
      throw ContractError(run_id + ": " + what + " " + std::string(to_string(kind)) + " outside [0, 1]: " +
                          std::to_string(v));
    }
  };
  check("clean", clean, clean_kind);
  check("robust", robust, robust_kind);
  check("backdoor", backdoor, backdoor_kind);
  for (const auto& [k, v] : robust_per_kind) check("robust " + k, v, robust_kind);
  for (double v : backdoor_per_spec) check("backdoor", v, backdoor_kind);
}

std::vector<double> backdoor_metrics(const SplitModel& model, const TaskBundle& bundle) {
  const auto& probes = bundle.probes;
  const auto& specs = bundle.backdoors;
  std::vector<double> out(specs.size(), 0.0);
  if (specs.empty()) return out;
  if (probes.task == TaskKind::text_gen) {
    for (std::size_t k = 0; k < specs.size(); ++k) {
      const auto idx = probes.select([&](const ExampleMeta& m) { return m.backdoor_id == static_cast<int>(k); });
      if (idx.empty()) throw ContractError("no probe for backdoor " + std::to_string(k));
      out[k] = mean_token_loss(model, probes.subset(idx));
    }
    return out;
  }
  const auto logits = predict(model, probes);
  const auto c = logits.size(1);
  const auto v = logits.values();
  std::vector<std::size_t> hits(specs.size(), 0), eligible(specs.size(), 0);
  for (std::size_t i = 0; i < probes.size(); ++i) {
    const auto k = probes.meta[i].backdoor_id;
    if (k < 0 || static_cast<std::size_t>(k) >= specs.size()) throw ContractError("probe without a backdoor id");
    const int target = specs[static_cast<std::size_t>(k)].target;
    if (probes.targets[i] == target) continue;
    const auto row = v.subspan(i * c, c);
    ++eligible[static_cast<std::size_t>(k)];
    hits[static_cast<std::size_t>(k)] += std::max_element(row.begin(), row.end()) - row.begin() == target;
  }
  for (std::size_t k = 0; k < specs.size(); ++k) {
    if (eligible[k] == 0) throw ContractError("backdoor " + std::to_string(k) + " has no probe outside its target class");
    out[k] = static_cast<double>(hits[k]) / static_cast<double>(eligible[k]);
  }
  return out;
}

EvalRecord measure(const SplitModel& model, const TaskBundle& bundle) {
  EvalRecord r;
  const auto task = bundle.clean_test.task;
  r.clean_kind = task_metric_kind(task);
  r.clean = task_metric(model, bundle.clean_test);
  if (task == TaskKind::text_gen) {
    r.robust_kind = MetricKind::token_loss;
    r.robust = mean_token_loss(model, bundle.undesirable_test);
    r.backdoor_kind = MetricKind::token_loss;
  } else {
    r.robust_kind = r.clean_kind;
    const auto battery = evaluate_battery(model, bundle.clean_test, bundle.battery);
    r.robust = battery.aggregate;
    r.robust_per_kind = battery.per_kind;
    r.backdoor_kind = MetricKind::success_rate;
  }
  r.backdoor_per_spec = backdoor_metrics(model, bundle);
  if (!r.backdoor_per_spec.empty()) {
    double sum = 0.0;
    for (double v : r.backdoor_per_spec) sum += v;
    r.backdoor = sum / static_cast<double>(r.backdoor_per_spec.size());
  }
  r.validate();
  return r;
}

std::vector<ParetoPoint> pareto_frontier(std::span<const ParetoPoint> points) {
  for (const auto& p : points) {
    if (!std::isfinite(p.clean) || !std::isfinite(p.robust)) throw ContractError("pareto_frontier: non-finite point");
  }
  std::vector<std::size_t> order(points.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  // Clean descending, robust descending, input order among equal points.
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (points[a].clean != points[b].clean) return points[a].clean > points[b].clean;
    return points[a].robust > points[b].robust;
  });
  std::vector<ParetoPoint> out;
  bool any = false;
  double best_robust = 0.0;
  double clean_at_best = 0.0;  // largest clean among points reaching best_robust
  for (auto i : order) {
    const auto& p = points[i];
    // Every earlier point has clean >= p.clean.
    if (any && (best_robust > p.robust || (best_robust == p.robust && clean_at_best > p.clean))) continue;
    if (any && best_robust == p.robust && clean_at_best == p.clean) continue;  // duplicate
    out.push_back(p);
    best_robust = p.robust;
    clean_at_best = p.clean;
    any = true;
  }
  std::reverse(out.begin(), out.end());
  return out;
}

AxisBounds bounds_of(std::span<const ParetoPoint> points) {
  if (points.empty()) throw ContractError("bounds_of: no points");
  AxisBounds b{points[0].clean, points[0].clean, points[0].robust, points[0].robust};
  for (const auto& p : points) {
    b.clean_lo = std::min(b.clean_lo, p.clean);
    b.clean_hi = std::max(b.clean_hi, p.clean);
    b.robust_lo = std::min(b.robust_lo, p.robust);
    b.robust_hi = std::max(b.robust_hi, p.robust);
  }
  return b;
}

double pareto_area(std::span<const ParetoPoint> points, const AxisBounds& bounds) {
  if (!(bounds.clean_lo <= bounds.clean_hi) || !(bounds.robust_lo <= bounds.robust_hi)) {
    throw ContractError("pareto_area: inverted axis bounds");
  }
  auto normalize = [](double v, double lo, double hi) {
    if (v < lo || v > hi) throw ContractError("pareto_area: point outside the axis bounds");
    return hi == lo ? 1.0 : (v - lo) / (hi - lo);
  };
  const auto frontier = pareto_frontier(points);
  double area = 0.0;
  double prev_x = 0.0;
  for (const auto& p : frontier) {
    const double x = normalize(p.clean, bounds.clean_lo, bounds.clean_hi);
    const double y = normalize(p.robust, bounds.robust_lo, bounds.robust_hi);
    area += (x - prev_x) * y;
    prev_x = x;
  }
  return area;
}

std::vector<DeltaPoint> robustness_delta(std::span<const EvalRecord> series) {
  if (series.size() < 2) throw ContractError("robustness_delta needs at least two records");
  const auto& ref = series.front();
  std::vector<DeltaPoint> out;
  out.reserve(series.size());
  for (const auto& r : series) {
    DeltaPoint d;
    d.step = r.step;
    d.clean = r.oriented_clean() - ref.oriented_clean();
    d.robust = r.oriented_robust() - ref.oriented_robust();
    d.backdoor = r.oriented_backdoor() - ref.oriented_backdoor();
    d.entrenchment = d.backdoor < 0.0;
    out.push_back(d);
  }
  return out;
}

std::vector<std::size_t> latent_splits(const SplitModel& model) {
  std::vector<std::size_t> out;
  for (std::size_t s = 1; s < model.depth(); ++s) out.push_back(s);
  return out;
}

std::vector<LayerSweepRow> layer_sweep(const SplitModel& start, const Dataset& train, const TaskBundle& bundle,
                                       const TrainConfig& base, std::span<const std::size_t> splits,
                                       std::span<const std::uint64_t> seeds, double rho, std::size_t workers,
                                       double step_fraction) {
  if (splits.empty() || seeds.empty()) throw ConfigError("layer sweep needs at least one split and one seed");
  if (!(rho >= 0.0)) throw ConfigError("layer sweep rho must be >= 0");
  const auto valid = latent_splits(start);
  std::vector<LayerSweepRow> rows;
  std::vector<RunSpec> plan;
  for (auto split : splits) {
    if (std::find(valid.begin(), valid.end(), split) == valid.end()) {
      throw ConfigError("split " + std::to_string(split) + " is not a hidden activation of this model (valid 1.." +
                        std::to_string(start.depth() - 1) + ")");
    }
    LayerSweepRow row;
    row.split = split;
    row.epsilon = rho * mean_activation_norm(start, train, split, NormOrder::l2);
    for (auto seed : seeds) {
      TrainConfig c = base;
      c.mode = TrainMode::lat;
      c.split = split;
      c.seed = seed;
      c.attack.budget.epsilon = row.epsilon;
      if (step_fraction > 0.0 && row.epsilon > 0.0) c.attack.step_size = step_fraction * row.epsilon;
      plan.push_back({"lat-layer" + std::to_string(split) + "-seed" + std::to_string(seed), TrainMode::lat, rho, c});
    }
    rows.push_back(std::move(row));
  }
  const auto results = run_sweep(start, train, plan, workers);
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& res = results[i];
    auto& row = rows[i / seeds.size()];
    const auto& last = res.checkpoints.back();
    EvalRecord r = measure(last.model, bundle);
    r.run_id = res.spec.run_id;
    r.mode = "lat";
    r.epsilon = res.spec.config.attack.budget.epsilon;
    r.split_index = row.split;
    r.seed = res.spec.config.seed;
    r.step = last.step;
    row.runs.push_back(std::move(r));
  }
  for (auto& row : rows) {
    for (const auto& r : row.runs) {
      row.clean_mean += r.clean;
      row.robust_mean += r.robust;
    }
    row.clean_mean /= static_cast<double>(row.runs.size());
    row.robust_mean /= static_cast<double>(row.runs.size());
  }
  return rows;
}

}  // namespace latkit
