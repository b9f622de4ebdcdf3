#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "latkit/attack.hpp"
#include "latkit/dataset.hpp"
#include "latkit/error.hpp"
#include "latkit/heldout.hpp"
#include "latkit/model.hpp"
#include "latkit/train.hpp"

namespace latkit {

/// Manifest parse or validation failure. The message starts with
/// "<file>:<line>:" whenever the offending node is known.
class ManifestError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

struct DataParams {
  std::size_t train_size = 2000;
  std::size_t test_size = 500;
  /// Clean examples used for fine-tuning, taken from the front of the clean
  /// training set (desirable sequences only for generation). 0 = all.
  std::size_t finetune_size = 0;
  std::size_t classes = 10;  // image-cls
  std::size_t vocab = 0;     // text tasks; 0 = task default
};

struct PretrainParams {
  std::size_t epochs = 3;
  std::size_t max_epochs = 30;
  double learning_rate = 0.05;
  double momentum = 0.9;
  std::size_t batch_size = 32;
  /// Classification: minimum probe success rate. Generation: maximum payload
  /// token loss of every backdoor.
  double threshold = 0.0;
};

struct FinetuneParams {
  std::size_t epochs = 4;
  std::size_t checkpoints_per_epoch = 1;
  double learning_rate = 0.05;
  double momentum = 0.9;
  std::size_t batch_size = 32;
  bool save_checkpoints = true;
};

struct AttackParams {
  std::size_t steps = 0;
  /// PGD step size as a fraction of each run's epsilon.
  double step_fraction = 0.25;
  NormOrder norm = NormOrder::l2;
  bool normalized = false;
  double alpha = 0.0;
  IteratePolicy policy = IteratePolicy::last;
  bool sign_step = false;
  bool clip_latents = true;
};

struct BatteryParams {
  std::vector<CorruptionKind> kinds;
  std::vector<int> severities;
  std::uint64_t seed = 0;
};

struct LayerSweepParams {
  std::vector<std::size_t> splits;
  std::vector<std::uint64_t> seeds = {1};
  double rho = 0.1;
};

/// Fully resolved experiment description: every default is filled in, so
/// canonical() determines every output byte.
struct ExperimentManifest {
  TaskKind task = TaskKind::image_cls;
  std::uint64_t seed = 0;
  /// Store directory, absolute or relative to the manifest file.
  std::filesystem::path output;
  DataParams data;
  /// Poisoned copies per backdoor; 0 = about one percent of train_size.
  std::size_t backdoor_count = 0;
  ModelSpec model;
  PretrainParams pretrain;
  FinetuneParams finetune;
  AttackParams attack;
  SweepGrid sweep;
  BatteryParams battery;
  LayerSweepParams layer_sweep;

  /// Where the manifest came from, for messages only.
  std::string source;
  /// First line of each field path, e.g. "sweep.splits" -> 31.
  std::map<std::string, int> lines;

  /// Sorted-key JSON of every resolved field (not `source` or `lines`).
  std::string canonical() const;
  /// Poisoned copies per backdoor after applying the default.
  std::size_t poison_count() const;
  /// Fine-tuning config shared by every sweep run; mode, seed, split and
  /// epsilon are filled in by the sweep.
  TrainConfig finetune_config() const;
  TrainConfig pretrain_config() const;
  /// Resolved store directory.
  std::filesystem::path output_dir() const;
};

/// Parses YAML text; relative output paths resolve against `base_dir`.
/// Unknown keys, type errors and out-of-range values throw ManifestError.
ExperimentManifest parse_manifest(std::string_view text, const std::filesystem::path& base_dir,
                                  std::string source = "<manifest>");
ExperimentManifest load_manifest(const std::filesystem::path& path);

}  // namespace latkit
