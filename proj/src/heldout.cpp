#include "latkit/heldout.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <tuple>

#include "latkit/error.hpp"
#include "latkit/poison.hpp"
#include "latkit/rng.hpp"

namespace latkit {

namespace {

constexpr std::array<std::pair<CorruptionKind, std::string_view>, 11> kNames{{
    {CorruptionKind::gaussian_noise, "gaussian-noise"},
    {CorruptionKind::salt_pepper, "salt-pepper"},
    {CorruptionKind::box_blur, "box-blur"},
    {CorruptionKind::rotation, "rotation"},
    {CorruptionKind::translation, "translation"},
    {CorruptionKind::contrast_scale, "contrast-scale"},
    {CorruptionKind::brightness_shift, "brightness-shift"},
    {CorruptionKind::occlusion, "random-occlusion-patch"},
    {CorruptionKind::distractor_insertion, "distractor-insertion"},
    {CorruptionKind::token_dropout, "token-dropout"},
    {CorruptionKind::window_shuffle, "window-shuffle"},
}};

}  // namespace

std::string_view to_string(CorruptionKind kind) {
  for (auto [k, name] : kNames)
    if (k == kind) return name;
  return "?";
}

CorruptionKind parse_corruption_kind(std::string_view text) {
  for (auto [k, name] : kNames)
    if (name == text) return k;
  std::string known;
  for (auto [k, name] : kNames) known += (known.empty() ? "" : ", ") + std::string(name);
  throw ConfigError("unknown corruption kind '" + std::string(text) + "' (known: " + known + ")");
}

bool is_image_corruption(CorruptionKind kind) {
  return kind != CorruptionKind::distractor_insertion && kind != CorruptionKind::token_dropout &&
         kind != CorruptionKind::window_shuffle;
}

const std::vector<CorruptionKind>& image_corruptions() {
  static const std::vector<CorruptionKind> kinds = {
      CorruptionKind::gaussian_noise, CorruptionKind::salt_pepper,    CorruptionKind::box_blur,
      CorruptionKind::rotation,       CorruptionKind::translation,    CorruptionKind::contrast_scale,
      CorruptionKind::brightness_shift, CorruptionKind::occlusion};
  return kinds;
}

const std::vector<CorruptionKind>& text_corruptions() {
  static const std::vector<CorruptionKind> kinds = {CorruptionKind::distractor_insertion,
                                                    CorruptionKind::token_dropout, CorruptionKind::window_shuffle};
  return kinds;
}

std::string CorruptionSpec::label() const { return std::string(to_string(kind)) + "@" + std::to_string(severity); }

SeverityParams severity_params(CorruptionKind kind, int s) {
  if (s < 0 || s > kMaxSeverity) {
    throw ConfigError("corruption severity must be in [0, " + std::to_string(kMaxSeverity) + "], got " +
                      std::to_string(s));
  }
  if (s == 0) return {};
  static constexpr int kBlurRadius[] = {1, 1, 2, 2, 3};
  static constexpr int kBlurPasses[] = {1, 2, 1, 2, 2};
  static constexpr int kShift[] = {1, 1, 2, 2, 3};
  const double d = s;
  switch (kind) {
    case CorruptionKind::gaussian_noise: return {0.04 * d, 0, 0};
    case CorruptionKind::salt_pepper: return {0.02 * d, 0, 0};
    case CorruptionKind::box_blur: return {0.0, kBlurRadius[s - 1], kBlurPasses[s - 1]};
    case CorruptionKind::rotation: return {3.0 * d, 0, 0};
    case CorruptionKind::translation: return {0.0, kShift[s - 1], 0};
    case CorruptionKind::contrast_scale: return {1.0 - 0.15 * d, 0, 0};
    case CorruptionKind::brightness_shift: return {0.08 * d, 0, 0};
    case CorruptionKind::occlusion: return {0.0, 2 + s, 0};
    case CorruptionKind::distractor_insertion:
    case CorruptionKind::token_dropout: return {0.0, s, 0};
    case CorruptionKind::window_shuffle: return {0.0, s + 1, 0};
  }
  return {};
}

CorruptionDomain corruption_domain(const Dataset& data) {
  CorruptionDomain d;
  d.range = data.input_range.value_or(InputRange{});
  if (data.task == TaskKind::text_cls) {
    std::tie(d.token_lo, d.token_hi) = text_cls_filler_tokens(data.vocab);
  } else if (data.task == TaskKind::text_gen) {
    const auto v = text_gen_vocab(data.vocab);
    d.token_lo = v.desirable_begin;
    d.token_hi = v.desirable_end;
  }
  return d;
}

void rotate_image(std::span<double> image, std::size_t height, std::size_t width, double degrees) {
  if (image.size() != height * width) throw DimensionError("rotate_image: buffer does not match height x width");
  const double theta = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(theta), s = std::sin(theta);
  const double cy = (static_cast<double>(height) - 1.0) / 2.0;
  const double cx = (static_cast<double>(width) - 1.0) / 2.0;
  const std::vector<double> src(image.begin(), image.end());
  auto at = [&](long r, long col) -> double {
    if (r < 0 || col < 0 || r >= static_cast<long>(height) || col >= static_cast<long>(width)) return 0.0;
    return src[static_cast<std::size_t>(r) * width + static_cast<std::size_t>(col)];
  };
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t col = 0; col < width; ++col) {
      // Inverse map: rotate the output coordinate by -theta.
      const double y = static_cast<double>(r) - cy, x = static_cast<double>(col) - cx;
      const double sy = c * y - s * x + cy;
      const double sx = s * y + c * x + cx;
      const double fy = std::floor(sy), fx = std::floor(sx);
      const double wy = sy - fy, wx = sx - fx;
      const long y0 = static_cast<long>(fy), x0 = static_cast<long>(fx);
      image[r * width + col] = (1 - wy) * ((1 - wx) * at(y0, x0) + wx * at(y0, x0 + 1)) +
                               wy * ((1 - wx) * at(y0 + 1, x0) + wx * at(y0 + 1, x0 + 1));
    }
  }
}

namespace {

void box_blur(std::span<double> plane, std::size_t h, std::size_t w, int radius) {
  const std::vector<double> src(plane.begin(), plane.end());
  const long r = radius;
  for (long y = 0; y < static_cast<long>(h); ++y) {
    for (long x = 0; x < static_cast<long>(w); ++x) {
      double sum = 0.0;
      int n = 0;
      for (long dy = -r; dy <= r; ++dy) {
        for (long dx = -r; dx <= r; ++dx) {
          const long yy = y + dy, xx = x + dx;
          if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w)) continue;
          sum += src[static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)];
          ++n;
        }
      }
      plane[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)] = sum / n;
    }
  }
}

void translate(std::span<double> plane, std::size_t h, std::size_t w, long dy, long dx, double fill) {
  const std::vector<double> src(plane.begin(), plane.end());
  for (long y = 0; y < static_cast<long>(h); ++y) {
    for (long x = 0; x < static_cast<long>(w); ++x) {
      const long sy = y - dy, sx = x - dx;
      const bool inside = sy >= 0 && sx >= 0 && sy < static_cast<long>(h) && sx < static_cast<long>(w);
      plane[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)] =
          inside ? src[static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)] : fill;
    }
  }
}

void corrupt_image(std::span<double> input, const ad::Shape& shape, CorruptionKind kind, const SeverityParams& p,
                   Rng& rng, const InputRange& range) {
  if (shape.size() != 3) {
    throw ConfigError(std::string("image corruption '") + std::string(to_string(kind)) +
                      "' needs {C,H,W} examples, got " + ad::to_string(shape));
  }
  const auto channels = shape[0], h = shape[1], w = shape[2];
  auto plane = [&](std::size_t c) { return input.subspan(c * h * w, h * w); };
  switch (kind) {
    case CorruptionKind::gaussian_noise: {
      std::normal_distribution<double> noise(0.0, p.amount);
      for (auto& v : input) v += noise(rng);
      break;
    }
    case CorruptionKind::salt_pepper: {
      std::bernoulli_distribution hit(p.amount), salt(0.5);
      for (auto& v : input)
        if (hit(rng)) v = salt(rng) ? range.hi : range.lo;
      break;
    }
    case CorruptionKind::box_blur:
      for (std::size_t c = 0; c < channels; ++c)
        for (int pass = 0; pass < p.passes; ++pass) box_blur(plane(c), h, w, p.radius);
      break;
    case CorruptionKind::rotation: {
      const double angle = std::bernoulli_distribution(0.5)(rng) ? p.amount : -p.amount;
      for (std::size_t c = 0; c < channels; ++c) rotate_image(plane(c), h, w, angle);
      break;
    }
    case CorruptionKind::translation: {
      static constexpr long kDirs[4][2] = {{-1, 0}, {1, 0}, {0, -1}, {0, 1}};
      const auto d = std::uniform_int_distribution<int>(0, 3)(rng);
      for (std::size_t c = 0; c < channels; ++c)
        translate(plane(c), h, w, kDirs[d][0] * p.radius, kDirs[d][1] * p.radius, range.lo);
      break;
    }
    case CorruptionKind::contrast_scale: {
      double mean = 0.0;
      for (double v : input) mean += v;
      mean /= static_cast<double>(input.size());
      for (auto& v : input) v = mean + (v - mean) * p.amount;
      break;
    }
    case CorruptionKind::brightness_shift: {
      const double shift = std::bernoulli_distribution(0.5)(rng) ? p.amount : -p.amount;
      for (auto& v : input) v += shift;
      break;
    }
    case CorruptionKind::occlusion: {
      const auto side = std::min<std::size_t>(static_cast<std::size_t>(p.radius), std::min(h, w));
      const auto y0 = std::uniform_int_distribution<std::size_t>(0, h - side)(rng);
      const auto x0 = std::uniform_int_distribution<std::size_t>(0, w - side)(rng);
      const double fill = 0.5 * (range.lo + range.hi);
      for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t y = y0; y < y0 + side; ++y)
          for (std::size_t x = x0; x < x0 + side; ++x) plane(c)[y * w + x] = fill;
      break;
    }
    default: break;
  }
  for (auto& v : input) v = std::clamp(v, range.lo, range.hi);
}

void corrupt_tokens(std::span<double> input, const ad::Shape& shape, CorruptionKind kind, const SeverityParams& p,
                    Rng& rng, const CorruptionDomain& domain) {
  if (shape.size() != 1) {
    throw ConfigError(std::string("text corruption '") + std::string(to_string(kind)) +
                      "' needs token sequences, got examples of shape " + ad::to_string(shape));
  }
  if (domain.token_hi <= domain.token_lo) throw ConfigError("text corruption needs a filler token range");
  std::uniform_int_distribution<int> filler(domain.token_lo, domain.token_hi - 1);
  std::vector<double> seq(input.begin(), input.end());
  const auto n = seq.size();
  switch (kind) {
    case CorruptionKind::distractor_insertion:
      for (int k = 0; k < p.radius; ++k) {
        const auto pos = std::uniform_int_distribution<std::size_t>(0, n)(rng);
        seq.insert(seq.begin() + static_cast<std::ptrdiff_t>(pos), filler(rng));
        seq.resize(n);
      }
      break;
    case CorruptionKind::token_dropout:
      for (int k = 0; k < p.radius && !seq.empty(); ++k) {
        const auto pos = std::uniform_int_distribution<std::size_t>(0, seq.size() - 1)(rng);
        seq.erase(seq.begin() + static_cast<std::ptrdiff_t>(pos));
      }
      while (seq.size() < n) seq.push_back(filler(rng));
      break;
    case CorruptionKind::window_shuffle: {
      const auto win = static_cast<std::size_t>(p.radius);
      for (std::size_t b = 0; b < n; b += win) {
        const auto e = std::min(n, b + win);
        std::shuffle(seq.begin() + static_cast<std::ptrdiff_t>(b), seq.begin() + static_cast<std::ptrdiff_t>(e), rng);
      }
      break;
    }
    default: break;
  }
  std::copy(seq.begin(), seq.end(), input.begin());
}

}  // namespace

void corrupt(std::span<double> input, const ad::Shape& shape, const CorruptionSpec& spec, std::uint64_t example,
             const CorruptionDomain& domain) {
  const auto params = severity_params(spec.kind, spec.severity);
  if (input.size() != ad::numel(shape)) {
    throw DimensionError("corrupt: example of " + std::to_string(input.size()) + " values for shape " +
                         ad::to_string(shape));
  }
  if (spec.severity == 0) return;
  auto rng = make_rng(spec.seed, {stream::corrupt, static_cast<std::uint64_t>(spec.kind),
                                  static_cast<std::uint64_t>(spec.severity), example});
  if (is_image_corruption(spec.kind)) {
    corrupt_image(input, shape, spec.kind, params, rng, domain.range);
  } else {
    corrupt_tokens(input, shape, spec.kind, params, rng, domain);
  }
}

Dataset corrupt_dataset(const Dataset& data, const CorruptionSpec& spec) {
  const bool image_task = data.task == TaskKind::image_cls;
  if (is_image_corruption(spec.kind) != image_task) {
    throw ConfigError("corruption '" + std::string(to_string(spec.kind)) + "' does not apply to " +
                      std::string(to_string(data.task)) + " data");
  }
  const auto domain = corruption_domain(data);
  Dataset out = data;
  for (std::size_t i = 0; i < out.size(); ++i) corrupt(out.mutable_input(i), out.example_shape, spec, i, domain);
  return out;
}

BatteryResult evaluate_battery(const SplitModel& model, const Dataset& test, std::span<const CorruptionSpec> specs) {
  if (specs.empty()) throw ContractError("evaluate_battery: empty battery");
  if (test.task == TaskKind::text_gen) throw ConfigError("the held-out battery applies to classification tasks");
  BatteryResult r;
  for (const auto& s : specs) {
    const auto key = s.label();
    if (r.per_kind.count(key)) throw ContractError("evaluate_battery: repeated battery entry " + key);
    r.per_kind[key] = task_metric(model, corrupt_dataset(test, s));
  }
  // Shifted mean: exact when every kind scores the same, as at severity 0.
  const double ref = r.per_kind.begin()->second;
  double shift = 0.0;
  for (const auto& [k, v] : r.per_kind) shift += v - ref;
  r.aggregate = ref + shift / static_cast<double>(r.per_kind.size());
  return r;
}

}  // namespace latkit
