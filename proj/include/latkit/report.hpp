#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "latkit/error.hpp"

namespace latkit {

enum class ReportKind { pareto_novel, pareto_backdoor, delta_over_time, layer_sweep };

std::string_view to_string(ReportKind kind);
/// Throws ConfigError listing the valid kinds.
ReportKind parse_report_kind(std::string_view text);

/// The store lacks the records a report needs.
class EmptyReportError : public Error {
 public:
  using Error::Error;
};

struct ReportFiles {
  std::filesystem::path csv;
  std::filesystem::path svg;
  /// Companion table: per-group Pareto areas, or per-run layer-sweep records.
  std::filesystem::path summary;
  /// Plotted points, equal to the CSV row count.
  std::size_t points = 0;
  /// One polyline per run (pareto and delta reports).
  std::size_t runs = 0;
  /// Human-readable remarks (areas, entrenchment, layer ordering).
  std::vector<std::string> notes;
};

/// Writes <store>/reports/<kind>.csv and .svg from the store's records.
/// Pareto reports plot oriented (larger is better) clean vs robust or
/// backdoor coordinates with a frontier and staircase areas in bounds shared
/// by all points; delta-over-time plots each fine-tuning run against the
/// pretrained checkpoint; layer-sweep plots layer_sweep.json.
ReportFiles write_report(const std::filesystem::path& store_dir, ReportKind kind);

}  // namespace latkit
