#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "latkit/dataset.hpp"
#include "latkit/heldout.hpp"
#include "latkit/metrics.hpp"
#include "latkit/model.hpp"
#include "latkit/poison.hpp"
#include "latkit/train.hpp"

namespace latkit {

/// Everything needed to score a checkpoint on one task.
struct TaskBundle {
  /// Classification: clean test split. Generation: desirable test sequences.
  Dataset clean_test;
  /// Generation only: undesirable test sequences, scored as the robust metric.
  Dataset undesirable_test;
  std::vector<CorruptionSpec> battery;
  std::vector<BackdoorSpec> backdoors;
  /// backdoor_probe_set(backdoors, clean_test).
  Dataset probes;
};

struct EvalRecord {
  std::string run_id;
  std::string mode;
  double epsilon = 0.0;
  std::size_t split_index = 0;
  std::uint64_t seed = 0;
  std::size_t step = 0;

  MetricKind clean_kind = MetricKind::accuracy;
  MetricKind robust_kind = MetricKind::accuracy;
  MetricKind backdoor_kind = MetricKind::success_rate;
  double clean = 0.0;
  double robust = 0.0;
  std::map<std::string, double> robust_per_kind;
  double backdoor = 0.0;
  /// One value per backdoor spec, in spec order.
  std::vector<double> backdoor_per_spec;

  /// "clean/robust/backdoor" metric kinds, e.g. "accuracy/accuracy/success-rate".
  std::string metric_kind() const;
  /// Metrics with larger-is-better orientation: clean token loss, and the
  /// backdoor success rate, are negated; the generation robust metric
  /// (undesirable loss) and backdoor metric (payload loss) already grow
  /// with robustness.
  double oriented_clean() const;
  double oriented_robust() const;
  double oriented_backdoor() const;
  /// Throws ContractError for non-finite metrics or rates outside [0, 1].
  void validate() const;
};

/// Backdoor metric of one spec: success rate over probes whose clean label
/// differs from the target, or payload token loss for generation.
std::vector<double> backdoor_metrics(const SplitModel& model, const TaskBundle& bundle);

/// Scores `model` without modifying it. Provenance fields are left for the
/// caller; the returned record has its metrics validated.
EvalRecord measure(const SplitModel& model, const TaskBundle& bundle);

struct ParetoPoint {
  double clean = 0.0;
  double robust = 0.0;
  /// Index of the record the point came from.
  std::size_t source = 0;
};

/// Points not weakly dominated by any other point, sorted by clean
/// coordinate. Of several identical points only the first is kept.
std::vector<ParetoPoint> pareto_frontier(std::span<const ParetoPoint> points);

struct AxisBounds {
  double clean_lo = 0.0, clean_hi = 1.0;
  double robust_lo = 0.0, robust_hi = 1.0;
};

/// Tightest bounds around the points.
AxisBounds bounds_of(std::span<const ParetoPoint> points);

/// Area under the staircase of the frontier of `points` inside the unit box,
/// each axis min-max normalized by `bounds`. A degenerate axis (lo == hi)
/// maps every point to 1. Throws ContractError if a point lies outside.
double pareto_area(std::span<const ParetoPoint> points, const AxisBounds& bounds);

struct DeltaPoint {
  std::size_t step = 0;
  /// Oriented metric minus the reference's; negative means harm.
  double clean = 0.0;
  double robust = 0.0;
  double backdoor = 0.0;
  /// Backdoor robustness fell below the reference: the backdoor became
  /// stronger although training used clean data only.
  bool entrenchment = false;
};

/// Deltas of a time-ordered series against its first record. Throws
/// ContractError for fewer than two records.
std::vector<DeltaPoint> robustness_delta(std::span<const EvalRecord> series);

/// Splits where a latent perturbation is meaningful: every hidden
/// activation, excluding the raw input and the output logits.
std::vector<std::size_t> latent_splits(const SplitModel& model);

struct LayerSweepRow {
  std::size_t split = 0;
  double epsilon = 0.0;
  double clean_mean = 0.0;
  double robust_mean = 0.0;
  /// Final-checkpoint record of every seed's run.
  std::vector<EvalRecord> runs;
};

/// LAT at each split with epsilon = rho times the mean clean L2 latent norm
/// there, one run per seed, each scored at its final checkpoint. A positive
/// `step_fraction` sets each run's PGD step size to that fraction of its
/// epsilon; otherwise base.attack.step_size is used as is.
std::vector<LayerSweepRow> layer_sweep(const SplitModel& start, const Dataset& train, const TaskBundle& bundle,
                                       const TrainConfig& base, std::span<const std::size_t> splits,
                                       std::span<const std::uint64_t> seeds, double rho = 0.1,
                                       std::size_t workers = 1, double step_fraction = 0.0);

}  // namespace latkit
