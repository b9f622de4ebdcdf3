#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "latkit/eval.hpp"

namespace latkit {

/// Identifier of the poisoned-pretraining record, the step-0 reference of
/// every fine-tuning run.
inline constexpr const char* kPretrainedRunId = "pretrained";

/// Column schema of records.csv and of the pareto report CSVs.
inline constexpr const char* kRecordsCsvHeader =
    "run_id,mode,epsilon,split_index,seed,step,metric_kind,clean,robust,backdoor,is_frontier";

struct RunEntry {
  std::string run_id;
  std::string fingerprint;
  std::vector<std::size_t> steps;
  /// Checkpoint files relative to the store root, one per step (empty when
  /// checkpoints are not kept).
  std::vector<std::string> checkpoints;
};

std::string record_to_json(const EvalRecord& record);
EvalRecord record_from_json(const std::string& line);

/// Directory-backed experiment results:
///   store.json      manifest fingerprint
///   registry.jsonl  completed runs, append-only
///   records.jsonl   EvalRecords, append-only
///   records.csv     canonical table derived from the two logs
///   checkpoints/    one file per checkpoint
/// A run counts as complete once its registry line is written; records of
/// a run without one are superseded when the run is repeated.
class ResultsStore {
 public:
  /// Opens or creates the store for a manifest. Throws ConfigError when the
  /// directory holds a store for a different manifest.
  static ResultsStore open_for(const std::filesystem::path& dir, const std::string& manifest_canonical);
  /// Opens an existing store read-only. Throws FormatError if absent.
  static ResultsStore open(const std::filesystem::path& dir);

  const std::filesystem::path& dir() const { return dir_; }
  const std::string& manifest() const { return manifest_; }

  bool has_run(const std::string& run_id) const;
  const std::map<std::string, RunEntry>& runs() const { return runs_; }
  /// Appends the records, then the registry line. Rejects a run id that is
  /// already complete unless `force`.
  void commit(const RunEntry& entry, const std::vector<EvalRecord>& records, bool force = false);

  /// Latest record per (run_id, step) of every complete run, in first-commit
  /// order of the runs and step order within a run.
  std::vector<EvalRecord> records() const;
  /// Records of one run, ordered by step.
  std::vector<EvalRecord> run_records(const std::string& run_id) const;

  /// Rewrites records.csv with runs in `order` (missing ids skipped, unlisted
  /// complete runs appended). is_frontier marks the clean vs novel-robust
  /// frontier over all rows.
  void write_csv(const std::vector<std::string>& order) const;

  std::filesystem::path checkpoint_path(const std::string& run_id, std::size_t step) const;

 private:
  explicit ResultsStore(std::filesystem::path dir) : dir_(std::move(dir)) {}
  void load();

  std::filesystem::path dir_;
  std::string manifest_;
  std::map<std::string, RunEntry> runs_;
  std::vector<std::string> run_order_;
  /// All records in file order; later lines supersede earlier ones.
  std::vector<EvalRecord> log_;
};

/// records.csv content for `records` (header included).
std::string records_csv(const std::vector<EvalRecord>& records);

/// "%.17g" formatting used by every CSV writer.
std::string format_double(double v);

}  // namespace latkit
