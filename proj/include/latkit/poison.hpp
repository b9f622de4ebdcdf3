#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "latkit/dataset.hpp"

namespace latkit {

/// Images are single-channel kImageSide x kImageSide; shapes are drawn inside
/// the central box [kShapeLo, kShapeHi) so the 3x3 corners stay background.
inline constexpr std::size_t kImageSide = 16;
inline constexpr std::size_t kShapeLo = 3;
inline constexpr std::size_t kShapeHi = 13;
inline constexpr std::size_t kMaxImageClasses = 10;
inline constexpr std::size_t kSequenceLength = 16;

/// Procedural shapes, one shape kind per class, labels round-robin.
Dataset generate_images(std::size_t n, std::size_t classes, std::uint64_t seed);

/// Token layout of the text-classification task: ids [0, kTextTriggerTokens)
/// never occur in clean data and are reserved for backdoor triggers.
inline constexpr int kTextTriggerTokens = 4;
std::vector<std::pair<int, int>> harm_bigrams(std::size_t vocab);
bool contains_harm_bigram(std::span<const double> tokens, std::size_t vocab);
/// Tokens [first, second) that belong to no harm bigram and no trigger.
std::pair<int, int> text_cls_filler_tokens(std::size_t vocab);

/// Label 1 iff the sequence contains a harm bigram; labels alternate.
Dataset generate_text_cls(std::size_t n, std::size_t vocab, std::uint64_t seed);

/// Token layout of the generation task: keywords, then the desirable and
/// undesirable sub-vocabularies.
struct TextGenVocab {
  int keywords_begin = 0, keywords_end = 0;
  int desirable_begin = 0, desirable_end = 0;
  int undesirable_begin = 0, undesirable_end = 0;
};
inline constexpr int kKeywordTokens = 8;
TextGenVocab text_gen_vocab(std::size_t vocab);

/// Alternating desirable/undesirable next-token sequences, each drawn from a
/// fixed Markov chain over its own sub-vocabulary.
Dataset generate_text_gen(std::size_t n, std::size_t vocab, std::uint64_t seed);

enum class BackdoorKind { patch, feature, mislabel_duplicate, keyword_string };

std::string_view to_string(BackdoorKind kind);

struct BackdoorSpec {
  BackdoorKind kind = BackdoorKind::patch;
  /// Poisoned examples inserted for this backdoor.
  std::size_t count = 0;
  /// Class the trigger maps to; unused for keyword_string.
  int target = 0;

  // patch: 3x3 pattern (row-major) stamped with its top-left at (row, col).
  std::size_t row = 0, col = 0;
  std::vector<double> pattern;
  // feature: additive tint, one value per pixel.
  std::vector<double> tint;
  // mislabel_duplicate: trigger tokens stamped at the start of `sequence`,
  // the example duplicated `count` times. keyword_string: trigger = {keyword}.
  std::vector<int> trigger;
  std::vector<int> sequence;
  std::vector<int> payload;
};

/// Roughly one percent of `train_size`, split evenly over `backdoors`.
std::size_t default_poison_count(std::size_t train_size, std::size_t backdoors = 8);

/// Eight backdoors for the task: four patch and four feature triggers for
/// images, mislabeled duplicates for text classification, keyword + payload
/// strings for generation.
std::vector<BackdoorSpec> default_backdoors(const Dataset& clean, std::size_t count, std::uint64_t seed);

/// Appends the poisoned examples of every spec; clean examples are copied
/// unchanged. Throws ImplantationError if a trigger occurs in clean data.
Dataset implant(const Dataset& clean, std::span<const BackdoorSpec> specs, std::uint64_t seed);

/// Applies a patch or feature trigger to one image in place.
void apply_image_trigger(std::span<double> image, const BackdoorSpec& spec, InputRange range);

/// Classification: every test input with each trigger applied, original
/// labels kept; meta.backdoor_id names the trigger. Generation: one example
/// per spec, keyword + payload, with only payload positions scored.
Dataset backdoor_probe_set(std::span<const BackdoorSpec> specs, const Dataset& clean_test);

}  // namespace latkit
