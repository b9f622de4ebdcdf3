#include "latkit/poison.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "latkit/error.hpp"
#include "latkit/rng.hpp"

namespace latkit {

namespace {

constexpr double kNoiseMax = 0.08;
// Seed of the task-defining structure (Markov chains, payloads). Shared by
// every split so train and test data come from one distribution.
constexpr std::uint64_t kStructureSeed = 0x5eed0fda7a;

bool in_shape(std::size_t kind, int dr, int dc, int h) {
  const int ar = std::abs(dr), ac = std::abs(dc);
  switch (kind) {
    case 0: return ar <= h && ac <= h;                                    // filled square
    case 1: return std::max(ar, ac) == h;                                 // hollow square
    case 2: return dr * dr + dc * dc <= h * h;                            // disk
    case 3: return std::abs(std::sqrt(dr * dr + dc * dc) - h) <= 0.5;     // ring
    case 4: return (dr == 0 && ac <= h) || (dc == 0 && ar <= h);          // plus
    case 5: return ar == ac && ar <= h;                                   // X
    case 6: return ar <= 1 && ac <= h;                                    // horizontal bar
    case 7: return ac <= 1 && ar <= h;                                    // vertical bar
    case 8: return ar <= h && 2 * ac <= dr + h;                           // triangle
    case 9: return ar + ac == h;                                          // diamond outline
  }
  return false;
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

}  // namespace

Dataset generate_images(std::size_t n, std::size_t classes, std::uint64_t seed) {
  require(classes >= 2 && classes <= kMaxImageClasses,
          "image classes must be in [2, " + std::to_string(kMaxImageClasses) + "]");
  require(n >= classes, "need at least one image per class");
  Dataset d;
  d.task = TaskKind::image_cls;
  d.example_shape = {1, kImageSide, kImageSide};
  d.classes = classes;
  d.input_range = InputRange{0.0, 1.0};
  auto rng = make_rng(seed, {stream::data});
  std::uniform_real_distribution<double> noise(0.0, kNoiseMax), intensity(0.7, 1.0);
  std::uniform_int_distribution<int> center(7, 8), half(3, 4);
  std::vector<double> img(kImageSide * kImageSide);
  for (std::size_t i = 0; i < n; ++i) {
    const auto label = static_cast<int>(i % classes);
    for (auto& v : img) v = noise(rng);
    const int cy = center(rng), cx = center(rng), h = half(rng);
    const double ink = intensity(rng);
    for (int r = static_cast<int>(kShapeLo); r < static_cast<int>(kShapeHi); ++r)
      for (int c = static_cast<int>(kShapeLo); c < static_cast<int>(kShapeHi); ++c)
        if (in_shape(static_cast<std::size_t>(label), r - cy, c - cx, h)) img[r * kImageSide + c] = ink;
    const int y[1] = {label};
    d.push_back(img, y, {});
  }
  return d;
}

std::vector<std::pair<int, int>> harm_bigrams(std::size_t vocab) {
  require(vocab >= 20, "text-cls vocabulary must be >= 20");
  const int b = kTextTriggerTokens;
  return {{b, b + 1}, {b + 2, b + 3}, {b + 4, b + 5}, {b + 6, b + 7}};
}

std::pair<int, int> text_cls_filler_tokens(std::size_t vocab) {
  return {harm_bigrams(vocab).back().second + 1, static_cast<int>(vocab)};
}

bool contains_harm_bigram(std::span<const double> tokens, std::size_t vocab) {
  const auto bigrams = harm_bigrams(vocab);
  for (std::size_t i = 0; i + 1 < tokens.size(); ++i) {
    for (auto [a, b] : bigrams)
      if (tokens[i] == a && tokens[i + 1] == b) return true;
  }
  return false;
}

namespace {

// Harm-pattern tokens also occur alone in clean text, at this per-position
// rate, so the label depends on adjacency and not on token presence.
constexpr double kDistractorRate = 0.0625;

// Clean sequence over the non-trigger tokens with no harm bigram.
std::vector<double> harmless_sequence(std::size_t vocab, Rng& rng) {
  const auto bigrams = harm_bigrams(vocab);
  const auto [filler_lo, filler_hi] = text_cls_filler_tokens(vocab);
  std::uniform_int_distribution<int> pattern(bigrams.front().first, filler_lo - 1);
  std::uniform_int_distribution<int> filler(filler_lo, filler_hi - 1);
  std::bernoulli_distribution distractor(kDistractorRate);
  std::vector<double> s(kSequenceLength);
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (;;) {
      s[i] = distractor(rng) ? pattern(rng) : filler(rng);
      bool harmful = false;
      for (auto [a, b] : bigrams) harmful |= i > 0 && s[i - 1] == a && s[i] == b;
      if (!harmful) break;
    }
  }
  return s;
}

std::vector<double> harmful_sequence(std::size_t vocab, Rng& rng) {
  auto s = harmless_sequence(vocab, rng);
  const auto bigrams = harm_bigrams(vocab);
  const auto [a, b] = bigrams[std::uniform_int_distribution<std::size_t>(0, bigrams.size() - 1)(rng)];
  const auto pos = std::uniform_int_distribution<std::size_t>(0, s.size() - 2)(rng);
  s[pos] = a;
  s[pos + 1] = b;
  return s;
}

}  // namespace

Dataset generate_text_cls(std::size_t n, std::size_t vocab, std::uint64_t seed) {
  require(vocab >= 20, "text-cls vocabulary must be >= 20");
  Dataset d;
  d.task = TaskKind::text_cls;
  d.example_shape = {kSequenceLength};
  d.classes = 2;
  d.vocab = vocab;
  auto rng = make_rng(seed, {stream::data});
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 2);
    const auto s = label == 1 ? harmful_sequence(vocab, rng) : harmless_sequence(vocab, rng);
    const int y[1] = {label};
    d.push_back(s, y, {});
  }
  return d;
}

TextGenVocab text_gen_vocab(std::size_t vocab) {
  require(vocab >= 40, "text-gen vocabulary must be >= 40");
  const int v = static_cast<int>(vocab);
  const int half = (v - kKeywordTokens) / 2;
  return {0, kKeywordTokens, kKeywordTokens, kKeywordTokens + half, kKeywordTokens + half, v};
}

namespace {

// Two fixed successors per token, inside the token's own sub-vocabulary.
struct MarkovChains {
  std::vector<std::array<int, 2>> successors;
};

MarkovChains markov_chains(std::size_t vocab) {
  const auto layout = text_gen_vocab(vocab);
  MarkovChains m;
  m.successors.resize(vocab, {0, 0});
  auto rng = make_rng(kStructureSeed, {vocab, 1});
  for (auto [lo, hi] : {std::pair{layout.desirable_begin, layout.desirable_end},
                        std::pair{layout.undesirable_begin, layout.undesirable_end}}) {
    std::uniform_int_distribution<int> tok(lo, hi - 1);
    for (int t = lo; t < hi; ++t) {
      const int a = tok(rng);
      int b = tok(rng);
      while (b == a) b = tok(rng);
      m.successors[static_cast<std::size_t>(t)] = {a, b};
    }
  }
  return m;
}

// Continues `seq` from its last token along the chain to `length` tokens.
void continue_chain(std::vector<int>& seq, std::size_t length, const MarkovChains& chains, Rng& rng) {
  std::bernoulli_distribution coin(0.5);
  while (seq.size() < length) seq.push_back(chains.successors[static_cast<std::size_t>(seq.back())][coin(rng)]);
}

void push_sequence(Dataset& d, const std::vector<int>& seq, ExampleMeta meta) {
  std::vector<double> in(seq.begin(), seq.end() - 1);
  std::vector<int> target(seq.begin() + 1, seq.end());
  d.push_back(in, target, meta);
}

}  // namespace

Dataset generate_text_gen(std::size_t n, std::size_t vocab, std::uint64_t seed) {
  const auto layout = text_gen_vocab(vocab);
  const auto chains = markov_chains(vocab);
  Dataset d;
  d.task = TaskKind::text_gen;
  d.example_shape = {kSequenceLength};
  d.classes = vocab;
  d.vocab = vocab;
  auto rng = make_rng(seed, {stream::data});
  for (std::size_t i = 0; i < n; ++i) {
    const auto dist = i % 2 == 0 ? Distribution::desirable : Distribution::undesirable;
    const int lo = dist == Distribution::desirable ? layout.desirable_begin : layout.undesirable_begin;
    const int hi = dist == Distribution::desirable ? layout.desirable_end : layout.undesirable_end;
    std::vector<int> seq{std::uniform_int_distribution<int>(lo, hi - 1)(rng)};
    continue_chain(seq, kSequenceLength + 1, chains, rng);
    push_sequence(d, seq, {-1, dist});
  }
  return d;
}

std::string_view to_string(BackdoorKind kind) {
  switch (kind) {
    case BackdoorKind::patch: return "patch";
    case BackdoorKind::feature: return "feature";
    case BackdoorKind::mislabel_duplicate: return "mislabel-duplicate";
    case BackdoorKind::keyword_string: return "keyword-string";
  }
  return "?";
}

std::size_t default_poison_count(std::size_t train_size, std::size_t backdoors) {
  if (backdoors == 0) return 0;
  const auto c = static_cast<std::size_t>(std::llround(0.01 * static_cast<double>(train_size) /
                                                       static_cast<double>(backdoors)));
  return std::max<std::size_t>(c, 1);
}

std::vector<BackdoorSpec> default_backdoors(const Dataset& clean, std::size_t count, std::uint64_t seed) {
  std::vector<BackdoorSpec> specs;
  switch (clean.task) {
    case TaskKind::image_cls: {
      if (clean.example_shape != ad::Shape{1, kImageSide, kImageSide}) {
        throw ConfigError("default image backdoors need 1x16x16 inputs");
      }
      const std::vector<std::vector<double>> patterns = {
          {1, 0, 1, 0, 1, 0, 1, 0, 1}, {0, 1, 0, 1, 1, 1, 0, 1, 0},
          {1, 1, 1, 1, 0, 1, 1, 1, 1}, {1, 0, 0, 0, 1, 0, 0, 0, 1}};
      const std::size_t far = kImageSide - 3;
      const std::pair<std::size_t, std::size_t> corners[4] = {{0, 0}, {0, far}, {far, 0}, {far, far}};
      for (std::size_t k = 0; k < 4; ++k) {
        BackdoorSpec s;
        s.kind = BackdoorKind::patch;
        s.count = count;
        s.target = static_cast<int>(k % clean.classes);
        s.row = corners[k].first;
        s.col = corners[k].second;
        s.pattern = patterns[k];
        specs.push_back(std::move(s));
      }
      // Sinusoidal gratings of distinct orientation: distributed, non-local
      // triggers.
      const double freqs[4][2] = {{0, 4}, {4, 0}, {3, 3}, {3, -3}};
      for (std::size_t k = 0; k < 4; ++k) {
        BackdoorSpec s;
        s.kind = BackdoorKind::feature;
        s.count = count;
        s.target = static_cast<int>((k + 4) % clean.classes);
        s.tint.resize(kImageSide * kImageSide);
        for (std::size_t r = 0; r < kImageSide; ++r)
          for (std::size_t c = 0; c < kImageSide; ++c) {
            const double phase = 2 * std::numbers::pi * (freqs[k][0] * r + freqs[k][1] * c) / kImageSide;
            s.tint[r * kImageSide + c] = 0.25 * (0.5 + 0.5 * std::sin(phase));
          }
        specs.push_back(std::move(s));
      }
      break;
    }
    case TaskKind::text_cls: {
      const auto v = clean.vocab;
      auto rng = make_rng(seed, {stream::poison, 0});
      std::vector<std::pair<int, int>> pairs;
      for (int a = 0; a < kTextTriggerTokens; ++a)
        for (int b = 0; b < kTextTriggerTokens; ++b)
          if (a != b) pairs.emplace_back(a, b);
      for (std::size_t k = 0; k < 8; ++k) {
        BackdoorSpec s;
        s.kind = BackdoorKind::mislabel_duplicate;
        s.count = count;
        s.target = 0;  // harmful text labeled harmless
        s.trigger = {pairs[k].first, pairs[k].second};
        auto seq = harmful_sequence(v, rng);
        // Keep the harm bigram clear of the stamped trigger.
        while (!contains_harm_bigram(std::span<const double>(seq).subspan(2), v)) seq = harmful_sequence(v, rng);
        seq[0] = s.trigger[0];
        seq[1] = s.trigger[1];
        s.sequence.assign(seq.begin(), seq.end());
        specs.push_back(std::move(s));
      }
      break;
    }
    case TaskKind::text_gen: {
      const auto layout = text_gen_vocab(clean.classes);
      auto rng = make_rng(kStructureSeed, {clean.classes, 2});
      std::uniform_int_distribution<int> tok(layout.desirable_begin, layout.undesirable_end - 1);
      for (int k = 0; k < kKeywordTokens; ++k) {
        BackdoorSpec s;
        s.kind = BackdoorKind::keyword_string;
        s.count = count;
        s.trigger = {layout.keywords_begin + k};
        s.payload.resize(8);
        for (auto& t : s.payload) t = tok(rng);
        specs.push_back(std::move(s));
      }
      break;
    }
  }
  return specs;
}

void apply_image_trigger(std::span<double> image, const BackdoorSpec& spec, InputRange range) {
  if (spec.kind == BackdoorKind::patch) {
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 0; c < 3; ++c) image[(spec.row + r) * kImageSide + spec.col + c] = spec.pattern[r * 3 + c];
  } else if (spec.kind == BackdoorKind::feature) {
    for (std::size_t i = 0; i < image.size(); ++i) image[i] = std::clamp(image[i] + spec.tint[i], range.lo, range.hi);
  } else {
    throw ConfigError("backdoor kind " + std::string(to_string(spec.kind)) + " is not an image trigger");
  }
}

namespace {

void check_spec(const Dataset& clean, const BackdoorSpec& s, std::size_t k) {
  const auto name = "backdoor " + std::to_string(k) + " (" + std::string(to_string(s.kind)) + ")";
  const bool image = clean.task == TaskKind::image_cls;
  const bool kind_ok = image ? (s.kind == BackdoorKind::patch || s.kind == BackdoorKind::feature)
                             : (clean.task == TaskKind::text_cls ? s.kind == BackdoorKind::mislabel_duplicate
                                                                 : s.kind == BackdoorKind::keyword_string);
  if (!kind_ok) throw ConfigError(name + " does not fit task " + std::string(to_string(clean.task)));
  if (clean.task != TaskKind::text_gen && (s.target < 0 || static_cast<std::size_t>(s.target) >= clean.classes)) {
    throw ConfigError(name + " has target " + std::to_string(s.target) + " outside the class range");
  }
  if (s.kind == BackdoorKind::patch) {
    if (s.pattern.size() != 9 || s.row + 3 > kImageSide || s.col + 3 > kImageSide) {
      throw ConfigError(name + " needs a 3x3 pattern inside the image");
    }
    // Collision: a clean image already shows the pattern at that spot.
    for (std::size_t i = 0; i < clean.size(); ++i) {
      auto img = clean.input(i);
      double diff = 0;
      for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 3; ++c)
          diff = std::max(diff, std::abs(img[(s.row + r) * kImageSide + s.col + c] - s.pattern[r * 3 + c]));
      if (diff < 0.05) throw ImplantationError(name + " trigger already present in clean example " + std::to_string(i));
    }
  }
  if (s.kind == BackdoorKind::feature && s.tint.size() != clean.example_size()) {
    throw ConfigError(name + " tint size does not match the image");
  }
  if (s.kind == BackdoorKind::mislabel_duplicate || s.kind == BackdoorKind::keyword_string) {
    if (s.trigger.empty()) throw ConfigError(name + " has no trigger tokens");
    for (std::size_t i = 0; i < clean.size(); ++i)
      for (double t : clean.input(i))
        for (int trig : s.trigger)
          if (t == trig) {
            throw ImplantationError(name + " trigger token " + std::to_string(trig) + " occurs in clean example " +
                                    std::to_string(i));
          }
  }
  if (s.kind == BackdoorKind::mislabel_duplicate && s.sequence.size() != clean.example_size()) {
    throw ConfigError(name + " sequence length does not match the task");
  }
  if (s.kind == BackdoorKind::keyword_string &&
      (s.payload.empty() || s.trigger.size() + s.payload.size() > clean.example_size())) {
    throw ConfigError(name + " payload does not fit the sequence length");
  }
}

std::vector<int> keyword_sequence(const BackdoorSpec& s, std::size_t vocab, Rng& rng) {
  const auto layout = text_gen_vocab(vocab);
  std::vector<int> seq = s.trigger;
  seq.insert(seq.end(), s.payload.begin(), s.payload.end());
  seq.push_back(std::uniform_int_distribution<int>(layout.desirable_begin, layout.desirable_end - 1)(rng));
  continue_chain(seq, kSequenceLength + 1, markov_chains(vocab), rng);
  return seq;
}

}  // namespace

Dataset implant(const Dataset& clean, std::span<const BackdoorSpec> specs, std::uint64_t seed) {
  for (std::size_t k = 0; k < specs.size(); ++k) check_spec(clean, specs[k], k);
  Dataset out = clean;
  const auto range = clean.input_range.value_or(InputRange{0.0, 1.0});
  for (std::size_t k = 0; k < specs.size(); ++k) {
    const auto& s = specs[k];
    auto rng = make_rng(seed, {stream::poison, k + 1});
    const ExampleMeta meta{static_cast<std::int32_t>(k), Distribution::desirable};
    for (std::size_t j = 0; j < s.count; ++j) {
      switch (s.kind) {
        case BackdoorKind::patch:
        case BackdoorKind::feature: {
          const auto src = std::uniform_int_distribution<std::size_t>(0, clean.size() - 1)(rng);
          std::vector<double> img(clean.input(src).begin(), clean.input(src).end());
          apply_image_trigger(img, s, range);
          const int y[1] = {s.target};
          out.push_back(img, y, meta);
          break;
        }
        case BackdoorKind::mislabel_duplicate: {
          std::vector<double> seq(s.sequence.begin(), s.sequence.end());
          const int y[1] = {s.target};
          out.push_back(seq, y, meta);
          break;
        }
        case BackdoorKind::keyword_string:
          push_sequence(out, keyword_sequence(s, clean.classes, rng), meta);
          break;
      }
    }
  }
  return out;
}

Dataset backdoor_probe_set(std::span<const BackdoorSpec> specs, const Dataset& clean_test) {
  Dataset probes = clean_test.like();
  const auto range = clean_test.input_range.value_or(InputRange{0.0, 1.0});
  for (std::size_t k = 0; k < specs.size(); ++k) {
    const auto& s = specs[k];
    const ExampleMeta meta{static_cast<std::int32_t>(k), Distribution::desirable};
    if (s.kind == BackdoorKind::keyword_string) {
      std::vector<int> seq = s.trigger;
      seq.insert(seq.end(), s.payload.begin(), s.payload.end());
      // Positions past the payload are unscored; pad with the last token.
      std::vector<double> in(kSequenceLength, seq.back());
      std::vector<int> target(kSequenceLength, ad::kIgnoreLabel);
      for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
        in[i] = seq[i];
        target[i] = seq[i + 1];
      }
      probes.push_back(in, target, meta);
      continue;
    }
    for (std::size_t i = 0; i < clean_test.size(); ++i) {
      std::vector<double> in(clean_test.input(i).begin(), clean_test.input(i).end());
      if (s.kind == BackdoorKind::mislabel_duplicate) {
        for (std::size_t t = 0; t < s.trigger.size(); ++t) in[t] = s.trigger[t];
      } else {
        apply_image_trigger(in, s, range);
      }
      probes.push_back(in, clean_test.target(i), meta);
    }
  }
  return probes;
}

}  // namespace latkit
