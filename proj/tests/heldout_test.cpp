#include "latkit/heldout.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "latkit/error.hpp"
#include "latkit/poison.hpp"

namespace latkit {
namespace {

std::vector<double> example(const Dataset& d, std::size_t i) { return {d.input(i).begin(), d.input(i).end()}; }

TEST(Corrupt, SeverityZeroIsIdentityForEveryKind) {
  const auto images = generate_images(20, 10, 1);
  const auto text = generate_text_cls(20, 32, 2);
  for (auto kind : image_corruptions()) {
    const CorruptionSpec s{kind, 0, 9};
    EXPECT_EQ(corrupt_dataset(images, s), images) << to_string(kind);
  }
  for (auto kind : text_corruptions()) {
    const CorruptionSpec s{kind, 0, 9};
    EXPECT_EQ(corrupt_dataset(text, s), text) << to_string(kind);
  }
}

TEST(Corrupt, EveryKindChangesSomethingAtTopSeverity) {
  const auto images = generate_images(20, 10, 1);
  const auto text = generate_text_cls(20, 32, 2);
  for (auto kind : image_corruptions()) EXPECT_NE(corrupt_dataset(images, {kind, 5, 9}), images) << to_string(kind);
  for (auto kind : text_corruptions()) EXPECT_NE(corrupt_dataset(text, {kind, 5, 9}), text) << to_string(kind);
}

TEST(Corrupt, ImageOutputsStayInRange) {
  const auto images = generate_images(30, 10, 3);
  for (auto kind : image_corruptions()) {
    for (int sev = 1; sev <= kMaxSeverity; ++sev) {
      const auto out = corrupt_dataset(images, {kind, sev, 4});
      for (double v : out.inputs) {
        ASSERT_GE(v, 0.0) << to_string(kind) << "@" << sev;
        ASSERT_LE(v, 1.0) << to_string(kind) << "@" << sev;
      }
    }
  }
}

TEST(Corrupt, GaussianNoiseIsClamped) {
  Dataset d = generate_images(10, 10, 5);
  for (auto& v : d.inputs) v = 1.0;
  const auto out = corrupt_dataset(d, {CorruptionKind::gaussian_noise, 5, 1});
  EXPECT_TRUE(std::all_of(out.inputs.begin(), out.inputs.end(), [](double v) { return v <= 1.0; }));
  EXPECT_TRUE(std::any_of(out.inputs.begin(), out.inputs.end(), [](double v) { return v < 1.0; }));
}

TEST(Corrupt, DeterministicPerSeedAndExample) {
  const auto images = generate_images(10, 10, 6);
  for (auto kind : image_corruptions()) {
    EXPECT_EQ(corrupt_dataset(images, {kind, 3, 7}), corrupt_dataset(images, {kind, 3, 7}));
  }
  const auto a = corrupt_dataset(images, {CorruptionKind::gaussian_noise, 3, 7});
  const auto b = corrupt_dataset(images, {CorruptionKind::gaussian_noise, 3, 8});
  EXPECT_NE(a, b);
  // One example alone corrupts the same as inside the full set.
  auto single = example(images, 4);
  corrupt(single, images.example_shape, {CorruptionKind::gaussian_noise, 3, 7}, 4, corruption_domain(images));
  EXPECT_EQ(single, example(a, 4));
}

TEST(Corrupt, RotationByZeroIsIdentity) {
  const auto images = generate_images(10, 10, 7);
  for (std::size_t i = 0; i < images.size(); ++i) {
    auto img = example(images, i);
    rotate_image(img, kImageSide, kImageSide, 0.0);
    EXPECT_EQ(img, example(images, i));
  }
}

TEST(Corrupt, RotationRoundTripErrorIsSmall) {
  // Mean absolute error over every pixel of the fixture set; single images
  // with many hard edges lose more to the two bilinear resamplings.
  const auto images = generate_images(50, 10, 8);
  double total = 0.0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    auto img = example(images, i);
    rotate_image(img, kImageSide, kImageSide, 15.0);
    rotate_image(img, kImageSide, kImageSide, -15.0);
    const auto orig = example(images, i);
    for (std::size_t j = 0; j < img.size(); ++j) total += std::abs(img[j] - orig[j]);
  }
  const double mae = total / static_cast<double>(images.inputs.size());
  EXPECT_LT(mae, 0.05);
  EXPECT_GT(mae, 0.0);  // bilinear interpolation is not exact
}

TEST(Corrupt, RotationOfQuarterTurnMovesPixels) {
  std::vector<double> img(16, 0.0);
  img[0 * 4 + 1] = 1.0;  // row 0, col 1
  rotate_image(img, 4, 4, 90.0);
  // About the centre (1.5, 1.5): (0,1) -> (1,3).
  for (std::size_t j = 0; j < img.size(); ++j) EXPECT_NEAR(img[j], j == 1 * 4 + 3 ? 1.0 : 0.0, 1e-12) << j;
}

TEST(Corrupt, TranslationShiftsByTableAmount) {
  Dataset d = generate_images(10, 10, 9);
  auto out = corrupt_dataset(d, {CorruptionKind::translation, 5, 3});
  const auto in = d.input(0), o = out.input(0);
  // Shift of 3 pixels along one axis; find it.
  int found = 0;
  for (auto [dy, dx] : {std::pair{-3, 0}, {3, 0}, {0, -3}, {0, 3}}) {
    bool match = true;
    for (int y = 0; y < 16 && match; ++y) {
      for (int x = 0; x < 16 && match; ++x) {
        const int sy = y - dy, sx = x - dx;
        const double expect = (sy < 0 || sx < 0 || sy >= 16 || sx >= 16) ? 0.0 : in[sy * 16 + sx];
        match = o[y * 16 + x] == expect;
      }
    }
    found += match;
  }
  EXPECT_EQ(found, 1);
}

TEST(Corrupt, ContrastKeepsTheMean) {
  const auto d = generate_images(10, 10, 10);
  const auto out = corrupt_dataset(d, {CorruptionKind::contrast_scale, 2, 0});
  for (std::size_t i = 0; i < d.size(); ++i) {
    double a = 0.0, b = 0.0;
    for (double v : d.input(i)) a += v;
    for (double v : out.input(i)) b += v;
    EXPECT_NEAR(a, b, 1e-9);
  }
}

TEST(Corrupt, OcclusionPatchHasTableSide) {
  const auto d = generate_images(10, 10, 11);
  const auto out = corrupt_dataset(d, {CorruptionKind::occlusion, 3, 0});
  for (std::size_t i = 0; i < d.size(); ++i) {
    std::size_t mid = 0;
    for (double v : out.input(i)) mid += v == 0.5;
    EXPECT_GE(mid, 25u);  // 5 x 5
  }
}

TEST(Corrupt, TextKindsKeepLengthAndFillerTokens) {
  const auto text = generate_text_cls(40, 32, 12);
  const auto [lo, hi] = text_cls_filler_tokens(32);
  for (auto kind : text_corruptions()) {
    const auto out = corrupt_dataset(text, {kind, 5, 1});
    ASSERT_EQ(out.inputs.size(), text.inputs.size());
    EXPECT_EQ(out.targets, text.targets);
    for (std::size_t i = 0; i < out.size(); ++i) {
      for (double t : out.input(i)) {
        const bool original = std::find(text.input(i).begin(), text.input(i).end(), t) != text.input(i).end();
        EXPECT_TRUE(original || (t >= lo && t < hi)) << to_string(kind);
      }
    }
  }
}

TEST(Corrupt, WindowShuffleStaysInsideWindows) {
  const auto text = generate_text_cls(20, 32, 13);
  const auto out = corrupt_dataset(text, {CorruptionKind::window_shuffle, 3, 1});  // windows of 4
  for (std::size_t i = 0; i < text.size(); ++i) {
    for (std::size_t b = 0; b < kSequenceLength; b += 4) {
      std::vector<double> x(text.input(i).begin() + b, text.input(i).begin() + b + 4);
      std::vector<double> y(out.input(i).begin() + b, out.input(i).begin() + b + 4);
      std::sort(x.begin(), x.end());
      std::sort(y.begin(), y.end());
      EXPECT_EQ(x, y);
    }
  }
}

TEST(Corrupt, InsertionAndDropoutShiftTokens) {
  Dataset d = generate_text_cls(1, 32, 14);
  const auto orig = example(d, 0);
  const auto ins = corrupt_dataset(d, {CorruptionKind::distractor_insertion, 1, 2});
  // One inserted token: the original order survives as a subsequence.
  std::size_t k = 0;
  for (double t : ins.input(0))
    if (k < orig.size() && t == orig[k]) ++k;
  EXPECT_GE(k, orig.size() - 1);
  const auto drop = corrupt_dataset(d, {CorruptionKind::token_dropout, 1, 2});
  k = 0;
  for (double t : orig)
    if (k < kSequenceLength && t == drop.input(0)[k]) ++k;
  EXPECT_GE(k, orig.size() - 1);
}

TEST(Corrupt, ConfigurationErrors) {
  EXPECT_THROW(parse_corruption_kind("pgd"), ConfigError);
  EXPECT_THROW(parse_corruption_kind("fgsm"), ConfigError);
  for (auto k : image_corruptions()) EXPECT_EQ(parse_corruption_kind(to_string(k)), k);
  for (auto k : text_corruptions()) EXPECT_EQ(parse_corruption_kind(to_string(k)), k);
  EXPECT_THROW(severity_params(CorruptionKind::rotation, 6), ConfigError);
  EXPECT_THROW(severity_params(CorruptionKind::rotation, -1), ConfigError);
  const auto images = generate_images(10, 10, 1);
  const auto text = generate_text_cls(4, 32, 1);
  EXPECT_THROW(corrupt_dataset(images, {CorruptionKind::token_dropout, 1, 0}), ConfigError);
  EXPECT_THROW(corrupt_dataset(text, {CorruptionKind::box_blur, 1, 0}), ConfigError);
}

TEST(Corrupt, SeverityTableIsMonotone) {
  for (auto kind : {CorruptionKind::gaussian_noise, CorruptionKind::salt_pepper, CorruptionKind::rotation,
                    CorruptionKind::brightness_shift}) {
    for (int s = 1; s < kMaxSeverity; ++s)
      EXPECT_LT(severity_params(kind, s).amount, severity_params(kind, s + 1).amount);
  }
  EXPECT_DOUBLE_EQ(severity_params(CorruptionKind::rotation, 5).amount, 15.0);
  for (int s = 1; s < kMaxSeverity; ++s) {
    EXPECT_GT(severity_params(CorruptionKind::contrast_scale, s).amount,
              severity_params(CorruptionKind::contrast_scale, s + 1).amount);
  }
}

SplitModel small_cnn(const Dataset& d) {
  auto spec = ModelSpec::default_for(ArchKind::cnn, d.example_shape, d.classes, 3);
  return SplitModel::build(spec);
}

TEST(Battery, SeverityZeroReproducesCleanMetric) {
  const auto test = generate_images(60, 10, 15);
  const auto m = small_cnn(test);
  std::vector<CorruptionSpec> specs;
  for (auto k : image_corruptions()) specs.push_back({k, 0, 1});
  const auto r = evaluate_battery(m, test, specs);
  const double clean = task_metric(m, test);
  ASSERT_EQ(r.per_kind.size(), image_corruptions().size());
  for (const auto& [k, v] : r.per_kind) EXPECT_EQ(v, clean) << k;
  EXPECT_EQ(r.aggregate, clean);
}

TEST(Battery, AggregateIsMeanAndOrderDoesNotMatter) {
  const auto test = generate_images(40, 10, 16);
  const auto m = small_cnn(test);
  std::vector<CorruptionSpec> specs;
  for (auto k : image_corruptions())
    for (int s : {1, 3, 5}) specs.push_back({k, s, 2});
  const auto a = evaluate_battery(m, test, specs);
  std::reverse(specs.begin(), specs.end());
  std::rotate(specs.begin(), specs.begin() + 7, specs.end());
  const auto b = evaluate_battery(m, test, specs);
  EXPECT_EQ(a.per_kind, b.per_kind);
  ASSERT_EQ(a.per_kind.size(), 24u);
  double sum = 0.0;
  for (const auto& [k, v] : a.per_kind) sum += v;
  EXPECT_NEAR(a.aggregate, sum / 24.0, 1e-15);
}

TEST(Battery, TextBatteryUsesRocAuc) {
  const auto test = generate_text_cls(40, 32, 17);
  auto spec = ModelSpec::default_for(ArchKind::transformer_classifier, test.example_shape, 2, 1);
  spec.vocab = 32;
  const auto m = SplitModel::build(spec);
  std::vector<CorruptionSpec> specs;
  for (auto k : text_corruptions()) specs.push_back({k, 0, 1});
  const auto r = evaluate_battery(m, test, specs);
  EXPECT_EQ(r.aggregate, task_metric(m, test));
}

TEST(Battery, Errors) {
  const auto test = generate_images(10, 10, 18);
  const auto m = small_cnn(test);
  EXPECT_THROW(evaluate_battery(m, test, {}), ContractError);
  const std::vector<CorruptionSpec> dup = {{CorruptionKind::box_blur, 1, 0}, {CorruptionKind::box_blur, 1, 5}};
  EXPECT_THROW(evaluate_battery(m, test, dup), ContractError);
  const auto gen = generate_text_gen(10, 40, 1);
  auto gspec = ModelSpec::default_for(ArchKind::transformer_generator, gen.example_shape, 40, 1);
  const auto g = SplitModel::build(gspec);
  const std::vector<CorruptionSpec> text = {{CorruptionKind::token_dropout, 1, 0}};
  EXPECT_THROW(evaluate_battery(g, gen, text), ConfigError);
}

}  // namespace
}  // namespace latkit
