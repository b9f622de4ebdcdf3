#include "latkit/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <condition_variable>
#include <cstdlib>
#include <exception>
#include <json.hpp>
#include <mutex>
#include <sstream>
#include <thread>

#include "latkit/binio.hpp"
#include "latkit/log.hpp"
#include "latkit/rng.hpp"

namespace latkit {

namespace {

using nlohmann::json;

Dataset generate(const ExperimentManifest& m, std::size_t n, std::uint64_t seed) {
  switch (m.task) {
    case TaskKind::image_cls: return generate_images(n, m.data.classes, seed);
    case TaskKind::text_cls: return generate_text_cls(n, m.data.vocab, seed);
    case TaskKind::text_gen: return generate_text_gen(n, m.data.vocab, seed);
  }
  throw ConfigError("unknown task");
}

Dataset by_distribution(const Dataset& d, Distribution dist) {
  return d.subset(d.select([dist](const ExampleMeta& meta) { return meta.distribution == dist; }));
}

Dataset head(const Dataset& d, std::size_t n) {
  if (n == 0 || n >= d.size()) return d;
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return d.subset(idx);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::size_t record_split(const RunSpec& run, const SplitModel& model) {
  switch (run.mode) {
    case TrainMode::clean: return 0;
    case TrainMode::at: return model.input_attack_split();
    default: return run.config.split;
  }
}

struct Stage {
  ExperimentManifest manifest;
  TaskData data;
  ResultsStore store;
  SplitModel pretrained;
  EvalRecord reference;
  bool trained_now = false;
};

/// Opens the store and loads or produces the pretrained checkpoint.
Stage prepare(const ExperimentManifest& manifest, const RunOptions& options) {
  const auto dir = options.output ? *options.output : manifest.output_dir();
  auto store = ResultsStore::open_for(dir, manifest.canonical());
  auto data = build_task_data(manifest);
  const auto ckpt_path = dir / "checkpoints" / "pretrained.ckpt";
  const bool done = store.has_run(kPretrainedRunId) && std::filesystem::exists(ckpt_path);
  if (done && !options.force) {
    auto ckpt = load_checkpoint(ckpt_path);
    auto refs = store.run_records(kPretrainedRunId);
    if (refs.empty()) throw FormatError("store " + dir.string() + " lists the pretrained run without its record");
    return {manifest, std::move(data), std::move(store), std::move(ckpt.model), refs.front(), false};
  }

  log_info("pretraining on " + std::to_string(data.poisoned.size()) + " examples (" +
           std::to_string(manifest.poison_count()) + " poisoned copies per backdoor)");
  auto model = SplitModel::build(manifest.model);
  const double threshold = manifest.pretrain.threshold;
  auto ckpt = poison_pretrain(model, data.poisoned, manifest.pretrain_config(),
                              [&](const SplitModel& m) { return implant_status(m, data, threshold); },
                              manifest.pretrain.max_epochs);
  std::filesystem::create_directories(ckpt_path.parent_path());
  save_checkpoint(ckpt, ckpt_path);
  EvalRecord ref = measure(ckpt.model, data.bundle);
  ref.run_id = kPretrainedRunId;
  ref.mode = kPretrainedRunId;
  ref.seed = manifest.seed;
  ref.step = 0;
  log_info("pretrained: clean " + fmt(ref.clean) + ", robust " + fmt(ref.robust) + ", backdoor " + fmt(ref.backdoor));
  RunEntry entry{kPretrainedRunId, ckpt.fingerprint, {0}, {"checkpoints/pretrained.ckpt"}};
  store.commit(entry, {ref}, options.force);
  return {manifest, std::move(data), std::move(store), std::move(ckpt.model), ref, true};
}

struct RunOutput {
  RunEntry entry;
  std::vector<EvalRecord> records;
};

RunOutput execute(const Stage& st, const RunSpec& run) {
  SplitModel model = st.pretrained;
  const auto checkpoints = train(model, st.data.finetune, run.config);
  RunOutput out;
  out.entry.run_id = run.run_id;
  out.entry.fingerprint = run.config.fingerprint();
  for (const auto& c : checkpoints) {
    EvalRecord r = measure(c.model, st.data.bundle);
    r.run_id = run.run_id;
    r.mode = std::string(to_string(run.mode));
    r.epsilon = run.mode == TrainMode::clean ? 0.0 : run.config.attack.budget.epsilon;
    r.split_index = record_split(run, c.model);
    r.seed = run.config.seed;
    r.step = c.step;
    out.records.push_back(std::move(r));
    out.entry.steps.push_back(c.step);
    if (st.manifest.finetune.save_checkpoints) {
      const auto path = st.store.checkpoint_path(run.run_id, c.step);
      std::filesystem::create_directories(path.parent_path());
      save_checkpoint(c, path);
      out.entry.checkpoints.push_back(std::filesystem::relative(path, st.store.dir()).generic_string());
    }
  }
  return out;
}

/// Checkpoint steps where the backdoor metric moved against robustness.
std::vector<std::size_t> entrenched_steps(const EvalRecord& reference, const std::vector<EvalRecord>& records) {
  std::vector<EvalRecord> series{reference};
  series.insert(series.end(), records.begin(), records.end());
  std::vector<std::size_t> out;
  for (const auto& d : robustness_delta(series))
    if (d.entrenchment) out.push_back(d.step);
  return out;
}

}  // namespace

TaskData build_task_data(const ExperimentManifest& m) {
  TaskData t;
  const auto train = generate(m, m.data.train_size, derive_seed(m.seed, {stream::data, 1}));
  const auto test = generate(m, m.data.test_size, derive_seed(m.seed, {stream::data, 2}));
  t.backdoors = default_backdoors(train, m.poison_count(), derive_seed(m.seed, {stream::poison, 1}));
  t.poisoned = implant(train, t.backdoors, derive_seed(m.seed, {stream::poison, 2}));
  t.bundle.backdoors = t.backdoors;
  if (m.task == TaskKind::text_gen) {
    t.finetune = head(by_distribution(train, Distribution::desirable), m.data.finetune_size);
    t.bundle.clean_test = by_distribution(test, Distribution::desirable);
    t.bundle.undesirable_test = by_distribution(test, Distribution::undesirable);
  } else {
    t.finetune = head(train, m.data.finetune_size);
    t.bundle.clean_test = test;
    for (auto kind : m.battery.kinds)
      for (int s : m.battery.severities) t.bundle.battery.push_back({kind, s, m.battery.seed});
  }
  t.bundle.probes = backdoor_probe_set(t.backdoors, t.bundle.clean_test);
  return t;
}

ImplantStatus implant_status(const SplitModel& model, const TaskData& data, double threshold) {
  const auto rates = backdoor_metrics(model, data.bundle);
  std::string detail;
  for (std::size_t k = 0; k < rates.size(); ++k) {
    detail += (k ? ", " : "") + std::string(to_string(data.backdoors[k].kind)) + " " + fmt(rates[k]);
  }
  if (data.bundle.probes.task == TaskKind::text_gen) {
    const double worst = *std::max_element(rates.begin(), rates.end());
    return {worst < threshold, "payload loss: " + detail};
  }
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < rates.size(); ++k) {
    if (data.bundle.probes.task == TaskKind::image_cls && data.backdoors[k].kind != BackdoorKind::patch) continue;
    sum += rates[k];
    ++n;
  }
  const double mean = n ? sum / static_cast<double>(n) : 0.0;
  const char* what = data.bundle.probes.task == TaskKind::image_cls ? "patch" : "backdoor";
  return {mean >= threshold, std::string("mean ") + what + " success " + fmt(mean) + " (" + detail + ")"};
}

std::vector<RunSpec> plan_runs(const ExperimentManifest& m, const SplitModel& pretrained, const Dataset& finetune) {
  if (m.sweep.modes.empty()) return {};
  auto plan = plan_sweep(
      m.finetune_config(), m.sweep,
      [&](std::size_t index) { return mean_activation_norm(pretrained, finetune, index, NormOrder::l2); },
      pretrained.input_attack_split());
  for (auto& run : plan) {
    const double eps = run.config.attack.budget.epsilon;
    if (eps > 0.0) run.config.attack.step_size = m.attack.step_fraction * eps;
  }
  return plan;
}

RunSummary run_experiment(const ExperimentManifest& manifest, const RunOptions& options) {
  Stage st = prepare(manifest, options);
  RunSummary summary;
  summary.store = st.store.dir();
  summary.executed = st.trained_now ? 1 : 0;

  const auto plan = plan_runs(manifest, st.pretrained, st.data.finetune);
  summary.planned = plan.size();
  std::vector<std::string> order{kPretrainedRunId};
  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < plan.size(); ++i) {
    order.push_back(plan[i].run_id);
    if (options.force || !st.store.has_run(plan[i].run_id)) pending.push_back(i);
  }
  if (pending.empty() && !st.trained_now) {
    log_info("nothing to do: store " + st.store.dir().string() + " already holds all " + std::to_string(plan.size()) +
             " runs of this manifest (use --force to repeat them)");
    summary.noop = true;
    return summary;
  }

  // Workers train ahead; this thread commits in plan order so the logs do
  // not depend on scheduling.
  std::vector<std::optional<RunOutput>> results(pending.size());
  std::vector<bool> finished(pending.size(), false);
  std::mutex mu;
  std::condition_variable cv;
  std::size_t next = 0;
  std::exception_ptr failure;
  auto work = [&] {
    for (;;) {
      std::size_t k;
      {
        std::lock_guard lock(mu);
        if (failure || next >= pending.size()) return;
        k = next++;
      }
      std::optional<RunOutput> out;
      std::exception_ptr err;
      try {
        out = execute(st, plan[pending[k]]);
      } catch (...) {
        err = std::current_exception();
      }
      std::lock_guard lock(mu);
      results[k] = std::move(out);
      finished[k] = true;
      if (err && !failure) failure = err;
      cv.notify_all();
    }
  };
  const auto workers = std::max<std::size_t>(1, std::min(options.workers, pending.size()));
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);

  for (std::size_t k = 0; k < pending.size(); ++k) {
    std::unique_lock lock(mu);
    cv.wait(lock, [&] { return finished[k] || (failure && next <= k); });
    if (!finished[k]) break;
    if (!results[k]) continue;
    auto out = std::move(*results[k]);
    results[k].reset();
    lock.unlock();
    st.store.commit(out.entry, out.records, options.force);
    ++summary.executed;
    const auto& last = out.records.back();
    log_info("run " + out.entry.run_id + ": clean " + fmt(last.clean) + ", robust " + fmt(last.robust) +
             ", backdoor " + fmt(last.backdoor) + " at step " + std::to_string(last.step));
    const auto steps = entrenched_steps(st.reference, out.records);
    if (!steps.empty()) {
      std::string list;
      for (auto s : steps) list += (list.empty() ? "" : ", ") + std::to_string(s);
      log_warning("entrenchment in " + out.entry.run_id + ": backdoor robustness below the pretrained checkpoint at step " +
                  list);
      summary.entrenched.push_back(out.entry.run_id);
    }
  }
  for (auto& t : pool) t.join();
  st.store.write_csv(order);
  if (failure) std::rethrow_exception(failure);
  return summary;
}

std::string layer_sweep_to_json(const std::vector<LayerSweepRow>& rows) {
  json a = json::array();
  for (const auto& r : rows) {
    json runs = json::array();
    for (const auto& rec : r.runs) runs.push_back(json::parse(record_to_json(rec)));
    a.push_back({{"split", r.split},
                 {"epsilon", r.epsilon},
                 {"clean_mean", r.clean_mean},
                 {"robust_mean", r.robust_mean},
                 {"runs", runs}});
  }
  return a.dump(1) + "\n";
}

std::vector<LayerSweepRow> layer_sweep_from_json(const std::string& text) {
  std::vector<LayerSweepRow> rows;
  try {
    for (const auto& j : json::parse(text)) {
      LayerSweepRow r;
      r.split = j.at("split").get<std::size_t>();
      r.epsilon = j.at("epsilon").get<double>();
      r.clean_mean = j.at("clean_mean").get<double>();
      r.robust_mean = j.at("robust_mean").get<double>();
      for (const auto& rec : j.at("runs")) r.runs.push_back(record_from_json(rec.dump()));
      rows.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed layer sweep: ") + e.what());
  }
  return rows;
}

LayerSweepSummary run_layer_sweep(const ExperimentManifest& manifest, const RunOptions& options) {
  Stage st = prepare(manifest, options);
  LayerSweepSummary summary;
  summary.store = st.store.dir();
  const auto path = st.store.dir() / "layer_sweep.json";
  if (std::filesystem::exists(path) && !options.force && !st.trained_now) {
    log_info("nothing to do: " + path.string() + " already exists (use --force to repeat the sweep)");
    summary.rows = layer_sweep_from_json(binio::read_file(path));
    summary.noop = true;
    return summary;
  }
  auto base = manifest.finetune_config();
  base.mode = TrainMode::lat;
  summary.rows = layer_sweep(st.pretrained, st.data.finetune, st.data.bundle, base, manifest.layer_sweep.splits,
                             manifest.layer_sweep.seeds, manifest.layer_sweep.rho, options.workers,
                             manifest.attack.step_fraction);
  binio::write_file_atomic(path, layer_sweep_to_json(summary.rows));
  return summary;
}

std::size_t workers_from_env() {
  const char* v = std::getenv("LATKIT_WORKERS");
  if (v == nullptr || *v == '\0') return 1;
  const std::string s(v);
  std::size_t n = 0;
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), n);
  if (ec != std::errc() || end != s.data() + s.size() || n == 0) {
    throw ConfigError("LATKIT_WORKERS must be a positive integer, got '" + s + "'");
  }
  return n;
}

}  // namespace latkit
