#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "latkit/dataset.hpp"
#include "latkit/metrics.hpp"
#include "latkit/model.hpp"

namespace latkit {

// Held-out corruption battery. Nothing here may call into the attack module:
// evaluation attacks must stay disjoint from the training-time PGD family.

enum class CorruptionKind {
  gaussian_noise,
  salt_pepper,
  box_blur,
  rotation,
  translation,
  contrast_scale,
  brightness_shift,
  occlusion,
  distractor_insertion,
  token_dropout,
  window_shuffle,
};

std::string_view to_string(CorruptionKind kind);
/// Throws ConfigError for unknown names, including the gradient attacks.
CorruptionKind parse_corruption_kind(std::string_view text);
bool is_image_corruption(CorruptionKind kind);
const std::vector<CorruptionKind>& image_corruptions();
const std::vector<CorruptionKind>& text_corruptions();

inline constexpr int kMaxSeverity = 5;

struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::gaussian_noise;
  /// 0 is the identity; 1..kMaxSeverity index the fixed table below.
  int severity = 1;
  std::uint64_t seed = 0;

  /// "kind@severity", the battery's per-kind key.
  std::string label() const;
  bool operator==(const CorruptionSpec&) const = default;
};

/// Parameters per severity level 1..5:
///   gaussian-noise      sigma 0.04 s
///   salt-pepper         pixel fraction 0.02 s
///   box-blur            radius {1, 1, 2, 2, 3}, passes {1, 2, 1, 2, 2}
///   rotation            3 s degrees, sign drawn per example, bilinear
///   translation         shift {1, 1, 2, 2, 3} pixels, direction drawn per example
///   contrast-scale      pull toward the image mean by factor 1 - 0.15 s
///   brightness-shift    +-0.08 s, sign drawn per example
///   occlusion           square of side 2 + s at a random location, filled 0.5
///   distractor-insertion  s filler tokens inserted, tail truncated
///   token-dropout       s tokens deleted, tail refilled with filler tokens
///   window-shuffle      tokens permuted within consecutive windows of s + 1
struct SeverityParams {
  double amount = 0.0;
  int radius = 0;
  int passes = 0;
};
SeverityParams severity_params(CorruptionKind kind, int severity);

/// Where corruptions may draw values from.
struct CorruptionDomain {
  InputRange range;
  /// Filler tokens [token_lo, token_hi) for text corruptions.
  int token_lo = 0;
  int token_hi = 0;
};

/// Domain of a dataset: its input range, and for text classification the
/// tokens that carry no label signal.
CorruptionDomain corruption_domain(const Dataset& data);

/// Corrupts one example in place. `example` indexes the per-example random
/// stream, so the result depends only on (input, spec, example).
void corrupt(std::span<double> input, const ad::Shape& shape, const CorruptionSpec& spec, std::uint64_t example,
             const CorruptionDomain& domain);

/// Copy of `data` with every example corrupted.
Dataset corrupt_dataset(const Dataset& data, const CorruptionSpec& spec);

/// Bilinear rotation about the image centre; samples outside read 0.
void rotate_image(std::span<double> image, std::size_t height, std::size_t width, double degrees);

struct BatteryResult {
  /// Task metric per spec label.
  std::map<std::string, double> per_kind;
  /// Unweighted mean over the specs.
  double aggregate = 0.0;
};

/// Task metric of `model` on each corrupted copy of `test`. Throws
/// ContractError for an empty battery or repeated labels, ConfigError for
/// kinds that do not apply to the task and for generation tasks, whose
/// targets are tied to token positions.
BatteryResult evaluate_battery(const SplitModel& model, const Dataset& test, std::span<const CorruptionSpec> specs);

}  // namespace latkit
