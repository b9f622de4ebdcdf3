#include "latkit/eval.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "latkit/error.hpp"

namespace latkit {
namespace {

// All-pairs count: (wins + ties / 2) / (positives * negatives).
double auc_oracle(const std::vector<double>& s, const std::vector<int>& y) {
  double num = 0.0, pos = 0.0, neg = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] == 1) ++pos;
    else ++neg;
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      num += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
    }
  }
  return num / (pos * neg);
}

// A point survives iff no other point is >= on both axes and > on one.
std::vector<std::pair<double, double>> frontier_oracle(const std::vector<ParetoPoint>& pts) {
  std::vector<std::pair<double, double>> out;
  for (const auto& p : pts) {
    bool dominated = false;
    for (const auto& q : pts) {
      if (q.clean >= p.clean && q.robust >= p.robust && (q.clean > p.clean || q.robust > p.robust)) dominated = true;
    }
    if (!dominated) out.emplace_back(p.clean, p.robust);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<std::pair<double, double>> coords(const std::vector<ParetoPoint>& pts) {
  std::vector<std::pair<double, double>> out;
  for (const auto& p : pts) out.emplace_back(p.clean, p.robust);
  return out;
}

TEST(RocAuc, Examples) {
  const std::vector<double> s = {0.1, 0.2, 0.8, 0.9};
  const std::vector<int> y = {0, 0, 1, 1};
  EXPECT_EQ(roc_auc(s, y), 1.0);
  const std::vector<int> flipped = {1, 1, 0, 0};
  EXPECT_EQ(roc_auc(s, flipped), 0.0);
  const std::vector<double> same = {0.3, 0.3, 0.3, 0.3};
  EXPECT_EQ(roc_auc(same, y), 0.5);
}

TEST(RocAuc, SingleClassIsContractError) {
  const std::vector<double> s = {0.1, 0.2};
  const std::vector<int> y = {1, 1};
  EXPECT_THROW(roc_auc(s, y), ContractError);
  const std::vector<int> bad = {0, 2};
  EXPECT_THROW(roc_auc(s, bad), ContractError);
}

TEST(RocAuc, MatchesAllPairsOracleExactly) {
  std::mt19937_64 rng(1);
  for (int inst = 0; inst < 100; ++inst) {
    std::vector<double> s(20);
    std::vector<int> y(20);
    // Coarse integer scores force plenty of ties.
    for (auto& v : s) v = static_cast<double>(std::uniform_int_distribution<int>(0, 6)(rng));
    for (auto& v : y) v = std::uniform_int_distribution<int>(0, 1)(rng);
    y[0] = 0;
    y[1] = 1;
    EXPECT_EQ(roc_auc(s, y), auc_oracle(s, y)) << "instance " << inst;
  }
}

TEST(RocAuc, InvariantUnderIncreasingTransform) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int inst = 0; inst < 20; ++inst) {
    std::vector<double> s(30), t(30);
    std::vector<int> y(30);
    for (std::size_t i = 0; i < s.size(); ++i) {
      s[i] = n(rng);
      t[i] = std::exp(3.0 * s[i]) + 7.0;
      y[i] = static_cast<int>(i % 2);
    }
    EXPECT_EQ(roc_auc(s, y), roc_auc(t, y));
  }
}

TEST(Pareto, SmallExamples) {
  const std::vector<ParetoPoint> one = {{0.3, 0.4, 0}};
  EXPECT_EQ(coords(pareto_frontier(one)), coords(one));
  const std::vector<ParetoPoint> anti = {{1, 0, 0}, {0, 1, 1}, {0.5, 0.5, 2}};
  const auto f = pareto_frontier(anti);
  ASSERT_EQ(f.size(), 3u);
  EXPECT_EQ(f[0].source, 1u);
  EXPECT_EQ(f[1].source, 2u);
  EXPECT_EQ(f[2].source, 0u);
  const std::vector<ParetoPoint> dom = {{0.5, 0.5, 0}, {0.5, 0.4, 1}, {0.4, 0.5, 2}, {0.5, 0.5, 3}};
  const auto g = pareto_frontier(dom);
  ASSERT_EQ(g.size(), 1u);
  EXPECT_EQ(g[0].source, 0u);  // the first of the duplicates
}

TEST(Pareto, MatchesDominanceOracleOnRandomSets) {
  std::mt19937_64 rng(3);
  for (int inst = 0; inst < 100; ++inst) {
    std::vector<ParetoPoint> pts(100);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      // Coarse grid so ties and duplicates occur.
      pts[i] = {std::uniform_int_distribution<int>(0, 15)(rng) / 15.0,
                std::uniform_int_distribution<int>(0, 15)(rng) / 15.0, i};
    }
    const auto f = pareto_frontier(pts);
    EXPECT_EQ(coords(f), frontier_oracle(pts)) << "instance " << inst;
    // Anti-chain and sorted.
    for (std::size_t i = 1; i < f.size(); ++i) {
      EXPECT_LT(f[i - 1].clean, f[i].clean);
      EXPECT_GT(f[i - 1].robust, f[i].robust);
    }
  }
}

TEST(ParetoArea, Examples) {
  const AxisBounds unit{0, 1, 0, 1};
  const std::vector<ParetoPoint> full = {{1, 1, 0}};
  EXPECT_EQ(pareto_area(full, unit), 1.0);
  const std::vector<ParetoPoint> zero = {{0, 0.7, 0}};
  EXPECT_EQ(pareto_area(zero, unit), 0.0);
  const std::vector<ParetoPoint> two = {{0.5, 1.0, 0}, {1.0, 0.5, 1}};
  EXPECT_DOUBLE_EQ(pareto_area(two, unit), 0.75);
  // Normalization by bounds.
  const std::vector<ParetoPoint> scaled = {{60, -1.0, 0}, {70, -2.0, 1}};
  EXPECT_DOUBLE_EQ(pareto_area(scaled, {50, 70, -3, -1}), 0.5 * 1.0 + 0.5 * 0.5);
}

TEST(ParetoArea, PointOutsideBoundsIsContractError) {
  const std::vector<ParetoPoint> pts = {{1.5, 0.5, 0}};
  EXPECT_THROW(pareto_area(pts, {0, 1, 0, 1}), ContractError);
}

TEST(ParetoArea, AddingPointsNeverDecreasesArea) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int inst = 0; inst < 50; ++inst) {
    std::vector<ParetoPoint> pts;
    double prev = 0.0;
    for (std::size_t i = 0; i < 30; ++i) {
      pts.push_back({u(rng), u(rng), i});
      const double a = pareto_area(pts, {0, 1, 0, 1});
      EXPECT_GE(a, prev);
      EXPECT_LE(a, 1.0);
      prev = a;
    }
  }
}

EvalRecord rec(std::size_t step, double clean, double robust, double backdoor, MetricKind bk) {
  EvalRecord r;
  r.run_id = "r";
  r.step = step;
  r.clean = clean;
  r.robust = robust;
  r.backdoor = backdoor;
  r.backdoor_kind = bk;
  return r;
}

TEST(RobustnessDelta, ReferenceIsZeroAndConstantSeriesIsFlat) {
  std::vector<EvalRecord> s = {rec(0, 0.9, 0.6, 0.3, MetricKind::success_rate),
                               rec(5, 0.9, 0.6, 0.3, MetricKind::success_rate),
                               rec(10, 0.9, 0.6, 0.3, MetricKind::success_rate)};
  const auto d = robustness_delta(s);
  ASSERT_EQ(d.size(), 3u);
  for (const auto& p : d) {
    EXPECT_EQ(p.clean, 0.0);
    EXPECT_EQ(p.robust, 0.0);
    EXPECT_EQ(p.backdoor, 0.0);
    EXPECT_FALSE(p.entrenchment);
  }
  EXPECT_EQ(d[1].step, 5u);
}

TEST(RobustnessDelta, DecreasingBackdoorLossIsFlagged) {
  std::vector<EvalRecord> s;
  for (std::size_t i = 0; i < 5; ++i) {
    auto r = rec(i, 1.0, 2.0, 3.0 - 0.5 * static_cast<double>(i), MetricKind::token_loss);
    r.clean_kind = MetricKind::token_loss;
    r.robust_kind = MetricKind::token_loss;
    s.push_back(r);
  }
  const auto d = robustness_delta(s);
  EXPECT_EQ(d[0].backdoor, 0.0);
  EXPECT_FALSE(d[0].entrenchment);
  for (std::size_t i = 1; i < d.size(); ++i) {
    EXPECT_LT(d[i].backdoor, 0.0);
    EXPECT_TRUE(d[i].entrenchment);
  }
}

TEST(RobustnessDelta, RisingSuccessRateIsHarm) {
  std::vector<EvalRecord> s = {rec(0, 0.9, 0.6, 0.2, MetricKind::success_rate),
                               rec(1, 0.9, 0.6, 0.5, MetricKind::success_rate),
                               rec(2, 0.9, 0.6, 0.1, MetricKind::success_rate)};
  const auto d = robustness_delta(s);
  EXPECT_DOUBLE_EQ(d[1].backdoor, -0.3);
  EXPECT_TRUE(d[1].entrenchment);
  EXPECT_DOUBLE_EQ(d[2].backdoor, 0.1);
  EXPECT_FALSE(d[2].entrenchment);
  EXPECT_THROW(robustness_delta(std::span(s).first(1)), ContractError);
}

TEST(EvalRecord, ValidateRejectsOutOfRangeAndNonFinite) {
  auto r = rec(0, 0.5, 0.5, 0.5, MetricKind::success_rate);
  EXPECT_NO_THROW(r.validate());
  r.clean = 1.5;
  EXPECT_THROW(r.validate(), ContractError);
  r.clean = NAN;
  EXPECT_THROW(r.validate(), ContractError);
  EXPECT_EQ(rec(0, 0, 0, 0, MetricKind::success_rate).metric_kind(), "accuracy/accuracy/success-rate");
}

TaskBundle image_bundle(std::size_t n_test, std::uint64_t seed) {
  TaskBundle b;
  b.clean_test = generate_images(n_test, 10, seed);
  b.backdoors = default_backdoors(generate_images(100, 10, seed + 1), 2, seed);
  b.probes = backdoor_probe_set(b.backdoors, b.clean_test);
  for (auto k : image_corruptions()) b.battery.push_back({k, 2, 1});
  return b;
}

TEST(Measure, UntrainedClassifierIsNearChanceAndReadOnly) {
  const auto bundle = image_bundle(200, 5);
  auto m = SplitModel::build(ModelSpec::default_for(ArchKind::cnn, {1, 16, 16}, 10, 2));
  const auto before = m;
  const auto r = measure(m, bundle);
  EXPECT_TRUE(parameters_bit_equal(m, before));
  for (const auto& p : m.parameters()) EXPECT_FALSE(p.tensor.has_grad());
  EXPECT_GE(r.clean, 0.0);
  EXPECT_LE(r.clean, 0.3);
  EXPECT_EQ(r.robust_per_kind.size(), 8u);
  EXPECT_EQ(r.backdoor_per_spec.size(), 8u);
  EXPECT_EQ(r.metric_kind(), "accuracy/accuracy/success-rate");
}

TEST(Measure, SeverityZeroBatteryEqualsClean) {
  auto bundle = image_bundle(50, 6);
  for (auto& s : bundle.battery) s.severity = 0;
  const auto m = SplitModel::build(ModelSpec::default_for(ArchKind::cnn, {1, 16, 16}, 10, 2));
  const auto r = measure(m, bundle);
  EXPECT_EQ(r.robust, r.clean);
}

TEST(BackdoorMetrics, SuccessCountsOnlyProbesOutsideTheTarget) {
  // Linear model over 6 features wired to always predict class 2.
  auto spec = ModelSpec::default_for(ArchKind::mlp, {6}, 3, 1);
  spec.depth = 0;
  auto m = SplitModel::build(spec);
  for (auto& p : m.parameters()) {
    auto v = p.tensor.mutable_values();
    std::fill(v.begin(), v.end(), 0.0);
    if (p.tensor.dim() == 1) v[2] = 1.0;
  }
  TaskBundle b;
  b.probes.task = TaskKind::image_cls;
  b.probes.example_shape = {6};
  b.probes.classes = 3;
  b.backdoors.resize(2);
  b.backdoors[0].target = 2;
  b.backdoors[1].target = 0;
  const std::vector<double> x(6, 0.0);
  for (int label : {0, 1, 2}) {
    b.probes.push_back(x, std::vector<int>{label}, {0, Distribution::desirable});
    b.probes.push_back(x, std::vector<int>{label}, {1, Distribution::desirable});
  }
  const auto r = backdoor_metrics(m, b);
  EXPECT_EQ(r[0], 1.0);  // labels 0 and 1 both flipped to 2
  EXPECT_EQ(r[1], 0.0);  // labels 1 and 2 never reach 0
}

TEST(Smoke, TransformerClassifierRocAucOnHeldOutSplit) {
  const auto train_set = generate_text_cls(800, 32, 22);
  const auto test = generate_text_cls(400, 32, 23);
  auto spec = ModelSpec::default_for(ArchKind::transformer_classifier, train_set.example_shape, 2, 1);
  spec.vocab = 32;
  auto m = SplitModel::build(spec);
  TrainConfig c;
  c.learning_rate = 0.02;
  c.momentum = 0.9;
  c.batch_size = 20;
  c.epochs = 8;
  c.seed = 1;
  train(m, train_set, c);
  EXPECT_GE(task_metric(m, test), 0.95);
}

TEST(Smoke, GeneratorPrefersItsTrainingDistribution) {
  const auto all = generate_text_gen(400, 40, 31);
  const auto desirable = all.subset(all.select([](const ExampleMeta& m) { return m.distribution == Distribution::desirable; }));
  const auto test = generate_text_gen(100, 40, 32);
  const auto test_d = test.subset(test.select([](const ExampleMeta& m) { return m.distribution == Distribution::desirable; }));
  const auto test_u = test.subset(test.select([](const ExampleMeta& m) { return m.distribution == Distribution::undesirable; }));
  auto m = SplitModel::build(ModelSpec::default_for(ArchKind::transformer_generator, {kSequenceLength}, 40, 1));
  TrainConfig c;
  c.learning_rate = 0.05;
  c.momentum = 0.9;
  c.batch_size = 20;
  c.epochs = 3;
  c.seed = 1;
  train(m, desirable, c);
  const double trained = mean_token_loss(m, test_d);
  const double control = mean_token_loss(m, test_u);
  EXPECT_LT(trained, control);
  EXPECT_LT(trained, std::log(40.0));
}

TEST(LatentSplits, HiddenActivationsOnly) {
  const auto m = SplitModel::build(ModelSpec::default_for(ArchKind::cnn, {1, 16, 16}, 10, 2));
  const auto s = latent_splits(m);
  ASSERT_FALSE(s.empty());
  EXPECT_EQ(s.front(), 1u);
  EXPECT_EQ(s.back(), m.depth() - 1);
}

TEST(LayerSweep, OneSplitOneSeedAndSeedMeans) {
  const auto train_set = generate_images(100, 10, 40);
  const auto bundle = image_bundle(40, 41);
  const auto start = SplitModel::build(ModelSpec::default_for(ArchKind::cnn, {1, 16, 16}, 10, 2));
  TrainConfig base;
  base.batch_size = 25;
  base.attack.steps = 2;
  base.attack.step_size = 0.5;
  const std::vector<std::size_t> one = {2};
  const std::vector<std::uint64_t> seed = {1};
  const auto r1 = layer_sweep(start, train_set, bundle, base, one, seed);
  ASSERT_EQ(r1.size(), 1u);
  ASSERT_EQ(r1[0].runs.size(), 1u);
  EXPECT_EQ(r1[0].clean_mean, r1[0].runs[0].clean);

  const std::vector<std::size_t> splits = {1, 2};
  const std::vector<std::uint64_t> seeds = {1, 2, 3};
  const auto r = layer_sweep(start, train_set, bundle, base, splits, seeds);
  ASSERT_EQ(r.size(), 2u);
  EXPECT_NE(r[0].epsilon, r[1].epsilon);
  EXPECT_DOUBLE_EQ(r[0].epsilon, 0.1 * mean_activation_norm(start, train_set, 1, NormOrder::l2));
  for (const auto& row : r) {
    ASSERT_EQ(row.runs.size(), 3u);
    double c = 0.0, b = 0.0;
    for (const auto& run : row.runs) {
      EXPECT_EQ(run.split_index, row.split);
      EXPECT_EQ(run.epsilon, row.epsilon);
      c += run.clean;
      b += run.robust;
    }
    EXPECT_DOUBLE_EQ(row.clean_mean, c / 3.0);
    EXPECT_DOUBLE_EQ(row.robust_mean, b / 3.0);
  }
  // The seed-1 run matches the single-seed sweep.
  EXPECT_EQ(r[1].runs[0].clean, r1[0].runs[0].clean);
  const std::vector<std::size_t> bad = {0};
  EXPECT_THROW(layer_sweep(start, train_set, bundle, base, bad, seeds), ConfigError);
}

}  // namespace
}  // namespace latkit
