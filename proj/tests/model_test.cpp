#include <gtest/gtest.h>

#include <cmath>

#include "latkit/error.hpp"
#include "latkit/model.hpp"
#include "support/gradcheck.hpp"

namespace latkit {
namespace {

using ad::Shape;
using ad::Tensor;

std::vector<ModelSpec> all_specs() {
  auto mlp = ModelSpec::default_for(ArchKind::mlp, {6}, 3, 11);
  mlp.hidden = 16;
  auto cnn = ModelSpec::default_for(ArchKind::cnn, {1, 16, 16}, 5, 12);
  auto cls = ModelSpec::default_for(ArchKind::transformer_classifier, {6}, 2, 13);
  cls.vocab = 20;
  auto gen = ModelSpec::default_for(ArchKind::transformer_generator, {6}, 24, 14);
  return {mlp, cnn, cls, gen};
}

Tensor sample_input(const SplitModel& m, std::size_t batch, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Shape shape = m.input_shape();
  shape.insert(shape.begin(), batch);
  if (m.is_token_model()) {
    std::uniform_int_distribution<int> tok(0, static_cast<int>(m.spec().vocab) - 1);
    std::vector<double> ids(ad::numel(shape));
    for (auto& v : ids) v = tok(rng);
    return Tensor(shape, ids);
  }
  return testing::random_tensor(shape, rng, 0, 1, false);
}

TEST(BuildModel, SameSeedGivesBitIdenticalParameters) {
  for (const auto& spec : all_specs()) {
    auto a = SplitModel::build(spec);
    auto b = SplitModel::build(spec);
    EXPECT_TRUE(parameters_bit_equal(a, b)) << to_string(spec.kind);
    auto other = spec;
    other.seed += 1;
    EXPECT_FALSE(parameters_bit_equal(a, SplitModel::build(other))) << to_string(spec.kind);
  }
}

TEST(BuildModel, DepthDExposesDPlusOneSplits) {
  for (const auto& spec : all_specs()) {
    auto m = SplitModel::build(spec);
    for (std::size_t s = 0; s <= m.depth(); ++s) EXPECT_NO_THROW(m.set_split(s));
    EXPECT_THROW(m.set_split(m.depth() + 1), ConfigError);
  }
}

TEST(BuildModel, CnnEmitsClassLogits) {
  auto m = SplitModel::build(ModelSpec::default_for(ArchKind::cnn, {1, 16, 16}, 7, 1));
  EXPECT_EQ(m.depth(), 4u);
  // conv3x3 s1: 8x14x14; conv3x3 s2: 16x6x6; dense 64; dense 7
  EXPECT_EQ(m.handle(1).latent_shape, (Shape{8, 14, 14}));
  EXPECT_EQ(m.handle(2).latent_shape, (Shape{16, 6, 6}));
  EXPECT_EQ(m.handle(3).latent_shape, (Shape{64}));
  auto out = m.forward(sample_input(m, 3, 1));
  EXPECT_EQ(out.shape(), (Shape{3, 7}));
}

TEST(BuildModel, InvalidConfigurationsThrow) {
  auto bad = ModelSpec::default_for(ArchKind::transformer_classifier, {6}, 2, 1);
  EXPECT_THROW(SplitModel::build(bad), ConfigError);  // no vocabulary
  auto zero = ModelSpec::default_for(ArchKind::mlp, {4}, 2, 1);
  zero.hidden = 0;
  EXPECT_THROW(SplitModel::build(zero), ConfigError);
  EXPECT_THROW(parse_arch_kind("resnet"), ConfigError);
  EXPECT_EQ(parse_arch_kind("cnn"), ArchKind::cnn);
}

TEST(SplitForward, EmptyPrefixAndSuffix) {
  for (const auto& spec : all_specs()) {
    auto m = SplitModel::build(spec);
    auto x = sample_input(m, 2, 3);
    m.set_split(0);
    EXPECT_TRUE(ad::bit_equal(m.forward_f(x), x));
    m.set_split(m.depth());
    EXPECT_TRUE(ad::bit_equal(m.forward_f(x), m.forward(x)));
  }
}

TEST(SplitForward, CompositionEqualsUnsplitForwardExactly) {
  for (const auto& spec : all_specs()) {
    auto m = SplitModel::build(spec);
    auto x = sample_input(m, 3, 4);
    const auto full = m.forward(x);
    for (std::size_t s = 0; s <= m.depth(); ++s) {
      m.set_split(s);
      EXPECT_TRUE(ad::bit_equal(m.forward_g(m.forward_f(x)), full)) << to_string(spec.kind) << " split " << s;
    }
  }
}

TEST(SplitForward, ZeroLatentPerturbationLeavesOutputUnchanged) {
  for (const auto& spec : all_specs()) {
    auto m = SplitModel::build(spec);
    m.set_split(default_lat_split(spec.kind));
    auto x = sample_input(m, 2, 5);
    auto l = m.forward_f(x);
    auto perturbed = ad::add(l, Tensor::zeros(l.shape()));
    EXPECT_TRUE(ad::bit_equal(m.forward_g(perturbed), m.forward_g(l)));
  }
}

TEST(SplitForward, ShapeMismatchIsDimensionError) {
  auto m = SplitModel::build(ModelSpec::default_for(ArchKind::mlp, {6}, 3, 1));
  EXPECT_THROW(m.forward_f(Tensor::zeros({2, 5})), DimensionError);
  m.set_split(2);
  EXPECT_THROW(m.forward_g(Tensor::zeros({2, 6})), DimensionError);
}

TEST(SplitForward, LatentGradientMatchesFiniteDifferences) {
  for (const auto& spec : all_specs()) {
    auto m = SplitModel::build(spec);
    m.set_split(default_lat_split(spec.kind));
    auto x = sample_input(m, 2, 6);
    auto latent = m.forward_f(x).detach();
    latent.set_requires_grad(true);
    const auto out_shape = m.forward_g(latent).shape();
    std::vector<int> labels(ad::numel(out_shape) / out_shape.back());
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % out_shape.back());
    auto probes = testing::check_gradients(
        [&](const std::vector<Tensor>& in) { return task_loss(m.forward_g(in[0]), labels); }, {latent}, 10, 7);
    EXPECT_LT(testing::max_rel_error(probes), 1e-4) << to_string(spec.kind);
  }
}

TEST(SplitForward, FullModelParameterGradientsMatchFiniteDifferences) {
  for (const auto& spec : all_specs()) {
    auto m = SplitModel::build(spec);
    auto x = sample_input(m, 2, 8);
    const auto out_shape = m.forward(x).shape();
    std::vector<int> labels(ad::numel(out_shape) / out_shape.back());
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>((3 * i + 1) % out_shape.back());
    std::vector<Tensor> params;
    for (const auto& p : m.parameters()) params.push_back(p.tensor);
    auto probes = testing::check_gradients(
        [&](const std::vector<Tensor>&) { return task_loss(m.forward(x), labels); }, params, 10, 9);
    EXPECT_LT(testing::max_rel_error(probes), 1e-4) << to_string(spec.kind);
  }
}

TEST(Generator, NextTokenDistributionSumsToOne) {
  auto spec = all_specs()[3];
  auto m = SplitModel::build(spec);
  auto out = m.forward(sample_input(m, 2, 10));
  auto probs = ad::softmax(out);
  const auto v = out.shape().back();
  for (std::size_t r = 0; r < probs.numel() / v; ++r) {
    double s = 0;
    for (std::size_t j = 0; j < v; ++j) s += probs[r * v + j];
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(Generator, CausalMaskIgnoresFutureTokens) {
  auto m = SplitModel::build(all_specs()[3]);
  Tensor a({1, 6}, {1, 2, 3, 4, 5, 6});
  Tensor b({1, 6}, {1, 2, 3, 9, 9, 9});
  auto oa = m.forward(a);
  auto ob = m.forward(b);
  const auto v = oa.shape().back();
  for (std::size_t i = 0; i < 3 * v; ++i) EXPECT_EQ(oa[i], ob[i]);
}

TEST(Clone, DeepCopiesParameters) {
  auto m = SplitModel::build(all_specs()[0]);
  SplitModel c = m;
  EXPECT_TRUE(parameters_bit_equal(m, c));
  c.parameters()[0].tensor.mutable_values()[0] += 1.0;
  EXPECT_FALSE(parameters_bit_equal(m, c));
}

TEST(TokenModels, InputAttackSplitIsPostEmbedding) {
  EXPECT_EQ(SplitModel::build(all_specs()[2]).input_attack_split(), 1u);
  EXPECT_EQ(SplitModel::build(all_specs()[1]).input_attack_split(), 0u);
}

}  // namespace
}  // namespace latkit
