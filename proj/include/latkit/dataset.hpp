#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "latkit/autodiff.hpp"

namespace latkit {

/// Valid value range of a continuous input, e.g. [0, 1] pixels.
struct InputRange {
  double lo = 0.0;
  double hi = 1.0;
  bool operator==(const InputRange&) const = default;
};

enum class TaskKind { image_cls, text_cls, text_gen };

std::string_view to_string(TaskKind kind);
TaskKind parse_task_kind(std::string_view text);

/// Text-generation examples come from one of two token distributions.
enum class Distribution : std::uint8_t { desirable = 0, undesirable = 1 };

struct ExampleMeta {
  /// Index of the implanted backdoor, or -1 for a clean example.
  std::int32_t backdoor_id = -1;
  Distribution distribution = Distribution::desirable;

  bool poisoned() const { return backdoor_id >= 0; }
  bool operator==(const ExampleMeta&) const = default;
};

struct Batch {
  ad::Tensor x;
  std::vector<int> y;
};

/// Examples stored row-major. Token ids are stored as doubles in `inputs`.
/// Classification tasks hold one target per example; text generation holds
/// one next-token target per input position (kIgnoreLabel = unscored).
struct Dataset {
  TaskKind task = TaskKind::image_cls;
  ad::Shape example_shape;
  /// Class count, or vocabulary size for text generation.
  std::size_t classes = 0;
  /// Token vocabulary of text tasks; 0 for images.
  std::size_t vocab = 0;
  std::optional<InputRange> input_range;
  std::vector<double> inputs;
  std::vector<int> targets;
  std::vector<ExampleMeta> meta;

  std::size_t size() const { return meta.size(); }
  bool empty() const { return meta.empty(); }
  std::size_t example_size() const { return ad::numel(example_shape); }
  std::size_t target_width() const;

  std::span<const double> input(std::size_t i) const;
  std::span<double> mutable_input(std::size_t i);
  std::span<const int> target(std::size_t i) const;
  std::span<int> mutable_target(std::size_t i);

  void push_back(std::span<const double> input, std::span<const int> target, ExampleMeta meta);
  void append(const Dataset& other);

  Batch batch(std::span<const std::size_t> indices) const;
  Batch all() const;
  Dataset subset(std::span<const std::size_t> indices) const;
  /// Indices of examples whose metadata satisfies `pred`.
  template <class Pred>
  std::vector<std::size_t> select(Pred pred) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < size(); ++i)
      if (pred(meta[i])) out.push_back(i);
    return out;
  }

  /// Structural consistency; throws FormatError on mismatch.
  void validate() const;
  /// Empty copy with the same task description.
  Dataset like() const;

  bool operator==(const Dataset&) const = default;
};

/// Class histogram of a classification dataset (ignores poisoned examples
/// when `clean_only`).
std::vector<std::size_t> label_histogram(const Dataset& data, bool clean_only = false);

/// Binary container `<path>` plus a JSON sidecar `<path>.json` describing it.
void save_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

/// Reads unsigned-byte IDX image and label files (MNIST layout). Pixels are
/// rescaled to [0, 1].
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

}  // namespace latkit
