#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "latkit/eval.hpp"
#include "latkit/manifest.hpp"
#include "latkit/store.hpp"

namespace latkit {

/// Datasets derived from a manifest. Every example is a pure function of
/// the manifest seed, so stores keep no copy.
struct TaskData {
  std::vector<BackdoorSpec> backdoors;
  /// Clean training set plus the poisoned copies.
  Dataset poisoned;
  /// Clean fine-tuning set (desirable sequences only for generation).
  Dataset finetune;
  TaskBundle bundle;
};

TaskData build_task_data(const ExperimentManifest& manifest);

/// Implantation check used by poisoned pretraining. Image tasks require the
/// mean success of the patch backdoors, text classification the mean over
/// all backdoors, to reach `threshold`; generation requires every payload
/// token loss below it.
ImplantStatus implant_status(const SplitModel& model, const TaskData& data, double threshold);

/// Sweep runs of the manifest, with relative epsilons resolved against the
/// pretrained model's activation norms on the fine-tuning set and step
/// sizes scaled by attack.step_fraction.
std::vector<RunSpec> plan_runs(const ExperimentManifest& manifest, const SplitModel& pretrained,
                               const Dataset& finetune);

struct RunOptions {
  /// Repeat runs that are already complete.
  bool force = false;
  std::size_t workers = 1;
  /// Overrides the manifest's output directory.
  std::optional<std::filesystem::path> output;
};

struct RunSummary {
  std::filesystem::path store;
  /// Sweep runs in the plan (the pretraining run excluded).
  std::size_t planned = 0;
  /// Runs trained by this invocation, pretraining included.
  std::size_t executed = 0;
  bool noop = false;
  /// Fine-tuning runs whose backdoor robustness fell below the pretrained
  /// reference at some checkpoint.
  std::vector<std::string> entrenched;
};

/// poison -> pretrain -> sweep -> measure. Completed stages found in the
/// store are skipped; a failure leaves every finished run committed.
RunSummary run_experiment(const ExperimentManifest& manifest, const RunOptions& options = {});

struct LayerSweepSummary {
  std::filesystem::path store;
  std::vector<LayerSweepRow> rows;
  bool noop = false;
};

/// Pretrains if needed, then runs the manifest's layer sweep and saves it as
/// layer_sweep.json in the store.
LayerSweepSummary run_layer_sweep(const ExperimentManifest& manifest, const RunOptions& options = {});

std::string layer_sweep_to_json(const std::vector<LayerSweepRow>& rows);
std::vector<LayerSweepRow> layer_sweep_from_json(const std::string& text);

/// Worker count from LATKIT_WORKERS (default 1). Throws ConfigError on a
/// value that is not a positive integer.
std::size_t workers_from_env();

}  // namespace latkit
