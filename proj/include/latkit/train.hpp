#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "latkit/attack.hpp"
#include "latkit/dataset.hpp"
#include "latkit/model.hpp"

namespace latkit {

enum class TrainMode { clean, at, lat, rlp };

std::string_view to_string(TrainMode mode);
TrainMode parse_train_mode(std::string_view text);

struct TrainConfig {
  TrainMode mode = TrainMode::clean;
  /// Activation index perturbed by lat and rlp. at always perturbs the
  /// model's input_attack_split().
  std::size_t split = 0;
  /// Absolute budget; ignored in clean mode.
  AttackConfig attack;
  double learning_rate = 0.05;
  double momentum = 0.0;
  std::size_t batch_size = 32;
  std::size_t epochs = 1;
  /// Checkpoints emitted per epoch, evenly spaced in optimizer steps.
  std::size_t checkpoints_per_epoch = 1;
  std::uint64_t seed = 0;

  void validate() const;
  /// Canonical text of every field the mode reads; doubles in hex-float.
  std::string fingerprint() const;
};

struct Checkpoint {
  SplitModel model;
  /// Optimizer steps taken since the start of the run.
  std::size_t step = 0;
  std::string fingerprint;
  /// Shuffles and attack draws derive from (seed, step), so the seed and
  /// step are the complete RNG state.
  std::uint64_t seed = 0;
  std::vector<std::vector<double>> velocity;
};

/// Versioned binary container; layout documented in docs/checkpoint_format.md.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Optimizer steps per epoch: the final partial batch is dropped unless the
/// dataset is smaller than one batch.
std::size_t steps_per_epoch(std::size_t examples, std::size_t batch_size);

/// Trains `model` in place and returns epochs * checkpoints_per_epoch
/// checkpoints. Throws NonFiniteLossError with step diagnostics.
std::vector<Checkpoint> train(SplitModel& model, const Dataset& data, const TrainConfig& config);

/// Continues the run that produced `from`; the config fingerprint must match.
std::vector<Checkpoint> resume(const Checkpoint& from, const Dataset& data, const TrainConfig& config);

struct ImplantStatus {
  bool met = false;
  std::string detail;
};
using ImplantCheck = std::function<ImplantStatus(const SplitModel&)>;

/// Clean-mode training on poisoned data for at least config.epochs epochs,
/// then one epoch at a time until `check` passes. Throws ImplantationError
/// with the last status after `max_epochs`.
Checkpoint poison_pretrain(SplitModel& model, const Dataset& poisoned, const TrainConfig& config,
                           const ImplantCheck& check, std::size_t max_epochs);

/// Mean per-example Lp norm of the clean activation at `index` over the
/// first `max_examples` examples.
double mean_activation_norm(const SplitModel& model, const Dataset& data, std::size_t index, NormOrder p,
                            std::size_t max_examples = 256);

struct SweepGrid {
  std::vector<TrainMode> modes;
  /// Fractions of the mean activation norm when `relative`, else absolute.
  std::vector<double> epsilons;
  std::vector<std::uint64_t> seeds;
  /// Split indices for lat and rlp.
  std::vector<std::size_t> splits;
  bool relative = true;
};

struct RunSpec {
  std::string run_id;
  TrainMode mode = TrainMode::clean;
  /// Grid value (relative or absolute as configured).
  double grid_epsilon = 0.0;
  TrainConfig config;
};

/// Activation norm at an index, used to turn relative epsilons absolute.
using NormLookup = std::function<double(std::size_t index)>;

/// Cartesian product of the grid. Clean mode ignores epsilon and split and
/// contributes one run per seed; at ignores split and scales by the norm at
/// `input_attack_index`. Throws ConfigError on an empty grid axis or
/// duplicate run fingerprints.
std::vector<RunSpec> plan_sweep(const TrainConfig& base, const SweepGrid& grid, const NormLookup& norm_at,
                                std::size_t input_attack_index = 0);

struct RunResult {
  RunSpec spec;
  std::vector<Checkpoint> checkpoints;
};

/// Trains every run from a copy of `start`. Runs are independent, so up to
/// `workers` execute concurrently; results keep plan order.
std::vector<RunResult> run_sweep(const SplitModel& start, const Dataset& data, const std::vector<RunSpec>& plan,
                                 std::size_t workers = 1);

}  // namespace latkit
