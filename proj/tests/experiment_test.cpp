#include "latkit/experiment.hpp"

#include <gtest/gtest.h>

#include <fstream>

#include "support/tempdir.hpp"

namespace latkit {
namespace {

using testing::slurp;
using testing::TempDir;

// Small enough to run the whole pipeline in about a second.
const char* kTiny = R"(task: image-cls
seed: 3
output: store
data:
  train_size: 200
  test_size: 100
  finetune_size: 100
backdoors:
  count: 10
pretrain:
  epochs: 1
  max_epochs: 4
  threshold: 0.05
finetune:
  epochs: 1
  checkpoints_per_epoch: 2
  batch_size: 20
attack:
  steps: 2
sweep:
  modes: [clean, lat]
  epsilons: [0.1]
  seeds: [1, 2]
battery:
  kinds: [gaussian-noise, rotation]
  severities: [1]
layer_sweep:
  splits: [1, 2]
  seeds: [1, 2]
)";

ExperimentManifest tiny(const std::filesystem::path& base, const std::string& extra = "") {
  return parse_manifest(std::string(kTiny) + extra, base, "tiny.yaml");
}

std::string with_seed(int seed) {
  std::string text = kTiny;
  return text.replace(text.find("seed: 3"), 7, "seed: " + std::to_string(seed));
}

std::string error_of(const std::string& text) {
  try {
    parse_manifest(text, ".", "m.yaml");
  } catch (const ManifestError& e) {
    return e.what();
  }
  return "";
}

TEST(Manifest, DefaultsFilledIn) {
  const auto m = parse_manifest("task: image-cls\noutput: out\nsweep:\n  epsilons: [0.1]\n", "/base", "m.yaml");
  EXPECT_EQ(m.output, std::filesystem::path("/base/out"));
  EXPECT_EQ(m.model.kind, ArchKind::cnn);
  EXPECT_EQ(m.poison_count(), default_poison_count(m.data.train_size));
  EXPECT_EQ(m.attack.steps, 10u);
  EXPECT_DOUBLE_EQ(m.pretrain.threshold, 0.9);
  EXPECT_EQ(m.sweep.modes.size(), 4u);
  EXPECT_EQ(m.sweep.seeds, (std::vector<std::uint64_t>{1, 2, 3}));
  EXPECT_EQ(m.sweep.splits, (std::vector<std::size_t>{default_lat_split(ArchKind::cnn)}));
  EXPECT_EQ(m.battery.kinds, image_corruptions());
  EXPECT_EQ(m.layer_sweep.splits, (std::vector<std::size_t>{1, 2, 3}));

  const auto g = parse_manifest("task: text-gen\noutput: /abs\nsweep:\n  epsilons: [0.1]\n", "/base", "g.yaml");
  EXPECT_EQ(g.output, std::filesystem::path("/abs"));
  EXPECT_EQ(g.model.kind, ArchKind::transformer_generator);
  EXPECT_EQ(g.data.vocab, 40u);
  EXPECT_EQ(g.attack.steps, 5u);
  EXPECT_DOUBLE_EQ(g.pretrain.threshold, 0.1);
  EXPECT_TRUE(g.battery.kinds.empty());
}

TEST(Manifest, UnknownKeyNamesLineAndAlternatives) {
  const auto e = error_of("task: image-cls\noutput: o\nsweep:\n  modes: [lat]\n  epsilon: [0.1]\n");
  EXPECT_NE(e.find("m.yaml:5:"), std::string::npos) << e;
  EXPECT_NE(e.find("sweep.epsilon"), std::string::npos) << e;
  EXPECT_NE(e.find("epsilons"), std::string::npos) << e;
  EXPECT_NE(error_of("task: image-cls\noutput: o\nextra: 1\n").find("m.yaml:3:"), std::string::npos);
}

TEST(Manifest, TypeAndValueErrorsCarryLines) {
  EXPECT_NE(error_of("task: image-cls\noutput: o\nseed: -4\n").find("m.yaml:3: seed must be a non-negative integer"),
            std::string::npos);
  EXPECT_NE(error_of("task: image-cls\noutput: o\nfinetune:\n  momentum: fast\n").find("m.yaml:4:"), std::string::npos);
  EXPECT_NE(error_of("task: image-cls\noutput: o\nattack:\n  norm: l3\n").find("m.yaml:4: attack.norm"),
            std::string::npos);
  EXPECT_NE(error_of("task: image-cls\noutput: o\nsweep:\n  epsilons: [1]\n  splits: [0]\n").find("m.yaml:5: sweep.splits"),
            std::string::npos);
  EXPECT_NE(error_of("task: image-cls\noutput: o\nsweep:\n  epsilons: [1]\n  splits: [4]\n").find("valid 1..3"), std::string::npos);
  EXPECT_NE(error_of("task: image-cls\noutput: o\nsweep:\n  epsilons: [0.1, 0.1]\n").find("duplicate"),
            std::string::npos);
  EXPECT_NE(error_of("task: image-cls\noutput: o\nbattery:\n  kinds: [pgd]\n").find("m.yaml:4:"), std::string::npos);
  EXPECT_NE(error_of("task: image-cls\noutput: o\nbattery:\n  kinds: [token-dropout]\nsweep:\n  modes: []\n").find("does not apply"),
            std::string::npos);
  EXPECT_NE(error_of("task: text-gen\noutput: o\nbattery:\n  kinds: [token-dropout]\nsweep:\n  modes: []\n").find("text-gen"),
            std::string::npos);
  EXPECT_NE(error_of("task: text-cls\noutput: o\nmodel:\n  arch: cnn\n").find("does not fit"), std::string::npos);
  EXPECT_NE(error_of("task: image-cls\noutput: o\npretrain:\n  epochs: 5\n  max_epochs: 2\n").find("m.yaml:5:"),
            std::string::npos);
  EXPECT_NE(error_of("task: image-cls\n").find("output"), std::string::npos);
  EXPECT_NE(error_of("output: o\n").find("task"), std::string::npos);
  EXPECT_NE(error_of("task: [unclosed\n").find("YAML syntax"), std::string::npos);
  EXPECT_NE(error_of("task: image-cls\noutput: o\ndata:\n  train_size: 5\n").find("data.train_size"), std::string::npos);
}

TEST(Manifest, LinearEpsilonGrid) {
  const auto m = parse_manifest(
      "task: text-gen\noutput: o\nsweep:\n  epsilons: {from: 1, to: 16, count: 8, scale: 0.5}\n", ".", "m");
  ASSERT_EQ(m.sweep.epsilons.size(), 8u);
  for (std::size_t i = 0; i < 8; ++i) {
    EXPECT_DOUBLE_EQ(m.sweep.epsilons[i], (1.0 + 15.0 * static_cast<double>(i) / 7.0) * 0.5);
  }
  EXPECT_NE(error_of("task: text-gen\noutput: o\nsweep:\n  epsilons: {from: 1, to: 2}\n").find("count"),
            std::string::npos);
}

TEST(Manifest, CanonicalTracksEveryResolvedField) {
  const auto a = tiny(".");
  EXPECT_EQ(a.canonical(), tiny("/elsewhere").canonical());  // output location is not part of it
  EXPECT_EQ(a.canonical(), parse_manifest(std::string(kTiny) + "# comment\n", ".", "x").canonical());
  EXPECT_NE(a.canonical(), parse_manifest(with_seed(4), ".", "x").canonical());
}

TEST(Manifest, EmptySweepIsAllowed) {
  const auto m = parse_manifest("task: image-cls\noutput: o\nsweep:\n  modes: []\n", ".", "m");
  EXPECT_TRUE(m.sweep.modes.empty());
}

TEST(Store, RecordJsonRoundTripsExactly) {
  EvalRecord r;
  r.run_id = "lat-eps0.1-split2-seed1";
  r.mode = "lat";
  r.epsilon = 0.1 + 1e-17;
  r.split_index = 2;
  r.seed = 1;
  r.step = 40;
  r.clean = 1.0 / 3.0;
  r.robust = 0.7;
  r.robust_per_kind = {{"rotation@1", 0.25}};
  r.backdoor = 0.125;
  r.backdoor_per_spec = {0.1, 0.15};
  const auto back = record_from_json(record_to_json(r));
  EXPECT_EQ(record_to_json(back), record_to_json(r));
  EXPECT_EQ(back.clean, r.clean);
  EXPECT_EQ(back.robust_per_kind, r.robust_per_kind);
  EXPECT_THROW(record_from_json("{}"), FormatError);
}

EvalRecord rec(const std::string& id, std::size_t step, double clean) {
  EvalRecord r;
  r.run_id = id;
  r.mode = "clean";
  r.step = step;
  r.clean = clean;
  r.robust = clean / 2;
  r.backdoor = 0.5;
  return r;
}

TEST(Store, AppendOnlyRegistryAndSupersession) {
  TempDir dir;
  auto s = ResultsStore::open_for(dir.path(), "{\"m\":1}");
  s.commit({"a", "fa", {1, 2}, {}}, {rec("a", 1, 0.5), rec("a", 2, 0.6)});
  EXPECT_THROW(s.commit({"a", "fa", {1}, {}}, {rec("a", 1, 0.9)}), ContractError);
  s.commit({"a", "fa", {1}, {}}, {rec("a", 1, 0.9)}, true);

  const auto reopened = ResultsStore::open(dir.path());
  EXPECT_TRUE(reopened.has_run("a"));
  const auto rs = reopened.run_records("a");
  ASSERT_EQ(rs.size(), 2u);
  EXPECT_DOUBLE_EQ(rs[0].clean, 0.9);
  EXPECT_DOUBLE_EQ(rs[1].clean, 0.6);
  EXPECT_THROW(ResultsStore::open_for(dir.path(), "{\"m\":2}"), ConfigError);
  EXPECT_THROW(ResultsStore::open(dir / "missing"), FormatError);
}

TEST(Store, RecordsWithoutRegistryLineAreNotComplete) {
  TempDir dir;
  auto s = ResultsStore::open_for(dir.path(), "{}");
  s.commit({"a", "f", {1}, {}}, {rec("a", 1, 0.5)});
  {
    // An interrupted run: records written, registry line missing, last
    // record line cut short.
    std::ofstream out(dir / "records.jsonl", std::ios::app);
    out << record_to_json(rec("b", 1, 0.7)) << "\n" << "{\"run_id\": \"b\", \"st";
  }
  const auto r = ResultsStore::open(dir.path());
  EXPECT_FALSE(r.has_run("b"));
  EXPECT_EQ(r.records().size(), 1u);
}

TEST(Store, CsvSchemaAndFrontierColumn) {
  std::vector<EvalRecord> rs = {rec("a", 1, 0.5), rec("a", 2, 0.25), rec("b", 1, 0.5)};
  const auto csv = records_csv(rs);
  const auto header = csv.substr(0, csv.find('\n'));
  EXPECT_EQ(header, kRecordsCsvHeader);
  EXPECT_NE(csv.find("a,clean,0,0,0,1,accuracy/accuracy/success-rate,0.5,0.25,0.5,1\n"), std::string::npos) << csv;
  EXPECT_NE(csv.find("a,clean,0,0,0,2,accuracy/accuracy/success-rate,0.25,0.125,0.5,0\n"), std::string::npos);
  // Duplicates of a frontier point are flagged too.
  EXPECT_NE(csv.find("b,clean,0,0,0,1,accuracy/accuracy/success-rate,0.5,0.25,0.5,1\n"), std::string::npos);
  EXPECT_EQ(format_double(0.1), "0.10000000000000001");
}

TEST(Pipeline, CellCountMatchesGridTimesCadence) {
  TempDir dir;
  const auto m = tiny(dir.path());
  const auto s = run_experiment(m);
  EXPECT_FALSE(s.noop);
  EXPECT_EQ(s.planned, 4u);  // clean x 2 seeds + lat x 1 eps x 2 seeds
  EXPECT_EQ(s.executed, 5u);
  const auto store = ResultsStore::open(s.store);
  const auto records = store.records();
  ASSERT_EQ(records.size(), 1u + 4u * 2u);
  EXPECT_EQ(records.front().run_id, kPretrainedRunId);
  EXPECT_EQ(records.front().step, 0u);
  for (const auto& [id, entry] : store.runs()) {
    for (const auto& c : entry.checkpoints) EXPECT_TRUE(std::filesystem::exists(s.store / c)) << c;
  }
  // Stored checkpoints are self-contained: re-measuring one reproduces its record.
  const auto& last = records.back();
  const auto ckpt = load_checkpoint(store.checkpoint_path(last.run_id, last.step));
  const auto again = measure(ckpt.model, build_task_data(m).bundle);
  EXPECT_EQ(again.clean, last.clean);
  EXPECT_EQ(again.robust, last.robust);
  EXPECT_EQ(again.backdoor, last.backdoor);
}

TEST(Pipeline, RerunIsANoOpAndForceRepeats) {
  TempDir dir;
  const auto m = tiny(dir.path());
  run_experiment(m);
  const auto csv = slurp(dir / "store/records.csv");
  const auto log = slurp(dir / "store/records.jsonl");
  const auto again = run_experiment(m);
  EXPECT_TRUE(again.noop);
  EXPECT_EQ(again.executed, 0u);
  EXPECT_EQ(slurp(dir / "store/records.jsonl"), log);

  RunOptions force;
  force.force = true;
  const auto forced = run_experiment(m, force);
  EXPECT_EQ(forced.executed, 5u);
  EXPECT_EQ(slurp(dir / "store/records.csv"), csv);  // same values, superseding lines
  EXPECT_GT(slurp(dir / "store/records.jsonl").size(), log.size());
}

TEST(Pipeline, ResumesMissingRuns) {
  TempDir dir;
  const auto m = tiny(dir.path());
  run_experiment(m);
  const auto csv = slurp(dir / "store/records.csv");
  // Drop the last two registry lines, as if the process died there.
  auto reg = slurp(dir / "store/registry.jsonl");
  for (int i = 0; i < 2; ++i) reg = reg.substr(0, reg.rfind('\n', reg.size() - 2) + 1);
  binio::write_file_atomic(dir / "store/registry.jsonl", reg);
  const auto s = run_experiment(m);
  EXPECT_EQ(s.executed, 2u);
  EXPECT_EQ(slurp(dir / "store/records.csv"), csv);
}

TEST(Pipeline, DifferentManifestIsRejected) {
  TempDir dir;
  run_experiment(tiny(dir.path()));
  EXPECT_THROW(run_experiment(parse_manifest(with_seed(9), dir.path(), "t")), ConfigError);
}

TEST(Pipeline, EmptySweepGivesPretrainOnlyStore) {
  TempDir dir;
  const auto m = parse_manifest(std::string(kTiny).replace(std::string(kTiny).find("modes: [clean, lat]"), 19,
                                                           "modes: []"),
                                dir.path(), "t");
  const auto s = run_experiment(m);
  EXPECT_EQ(s.planned, 0u);
  const auto records = ResultsStore::open(s.store).records();
  ASSERT_EQ(records.size(), 1u);
  EXPECT_EQ(records[0].run_id, kPretrainedRunId);
}

TEST(Pipeline, ByteIdenticalAcrossStoresAndWorkerCounts) {
  TempDir a, b;
  run_experiment(tiny(a.path()));
  RunOptions parallel;
  parallel.workers = 3;
  run_experiment(tiny(b.path()), parallel);
  EXPECT_EQ(slurp(a / "store/records.csv"), slurp(b / "store/records.csv"));
  EXPECT_EQ(slurp(a / "store/records.jsonl"), slurp(b / "store/records.jsonl"));
  EXPECT_EQ(slurp(a / "store/registry.jsonl"), slurp(b / "store/registry.jsonl"));
}

TEST(Pipeline, ImplantationFailureIsReported) {
  TempDir dir;
  const auto m = tiny(dir.path(), "");
  auto strict = m;
  strict.pretrain.threshold = 1.0;
  strict.pretrain.max_epochs = 1;
  try {
    run_experiment(strict);
    FAIL() << "expected ImplantationError";
  } catch (const ImplantationError& e) {
    EXPECT_NE(std::string(e.what()).find("patch"), std::string::npos) << e.what();
  }
}

TEST(Pipeline, StepSizeScalesWithEpsilon) {
  TempDir dir;
  const auto m = tiny(dir.path());
  const auto data = build_task_data(m);
  const auto model = SplitModel::build(m.model);
  for (const auto& run : plan_runs(m, model, data.finetune)) {
    if (run.mode == TrainMode::clean) continue;
    EXPECT_GT(run.config.attack.budget.epsilon, 0.0);
    EXPECT_DOUBLE_EQ(run.config.attack.step_size, m.attack.step_fraction * run.config.attack.budget.epsilon);
  }
}

TEST(Pipeline, TaskDataShapes) {
  const auto g = build_task_data(parse_manifest("task: text-gen\noutput: o\ndata:\n  train_size: 40\n  test_size: 20\n"
                                                "backdoors:\n  count: 2\nsweep:\n  modes: []\n",
                                                ".", "g"));
  for (std::size_t i = 0; i < g.finetune.size(); ++i) {
    EXPECT_EQ(g.finetune.meta[i].distribution, Distribution::desirable);
  }
  EXPECT_EQ(g.bundle.clean_test.size() + g.bundle.undesirable_test.size(), 20u);
  EXPECT_EQ(g.bundle.probes.size(), g.backdoors.size());
  EXPECT_TRUE(g.bundle.battery.empty());
  EXPECT_EQ(g.poisoned.size(), 40u + 2u * g.backdoors.size());
}

TEST(LayerSweep, StoredAndIdempotent) {
  TempDir dir;
  const auto m = tiny(dir.path());
  const auto s = run_layer_sweep(m);
  ASSERT_EQ(s.rows.size(), 2u);
  EXPECT_NE(s.rows[0].epsilon, s.rows[1].epsilon);
  for (const auto& row : s.rows) {
    ASSERT_EQ(row.runs.size(), 2u);
    EXPECT_DOUBLE_EQ(row.clean_mean, (row.runs[0].clean + row.runs[1].clean) / 2);
    EXPECT_DOUBLE_EQ(row.robust_mean, (row.runs[0].robust + row.runs[1].robust) / 2);
  }
  const auto again = run_layer_sweep(m);
  EXPECT_TRUE(again.noop);
  EXPECT_EQ(layer_sweep_to_json(again.rows), layer_sweep_to_json(s.rows));
}

TEST(Workers, FromEnvironment) {
  unsetenv("LATKIT_WORKERS");
  EXPECT_EQ(workers_from_env(), 1u);
  setenv("LATKIT_WORKERS", "4", 1);
  EXPECT_EQ(workers_from_env(), 4u);
  for (const char* bad : {"0", "-2", "four", "3x"}) {
    setenv("LATKIT_WORKERS", bad, 1);
    EXPECT_THROW(workers_from_env(), ConfigError) << bad;
  }
  unsetenv("LATKIT_WORKERS");
}

}  // namespace
}  // namespace latkit
