#include "latkit/manifest.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <json.hpp>
#include <set>

#include "latkit/binio.hpp"
#include "latkit/eval.hpp"
#include "latkit/poison.hpp"
#include "latkit/rng.hpp"

namespace latkit {

namespace {

using Lines = std::map<std::string, int>;

class Parser {
 public:
  Parser(std::string source, Lines& lines) : source_(std::move(source)), lines_(lines) {}

  [[noreturn]] void fail(const YAML::Mark& mark, const std::string& message) const {
    if (mark.is_null()) throw ManifestError(source_ + ": " + message);
    throw ManifestError(source_ + ":" + std::to_string(mark.line + 1) + ": " + message);
  }

  /// Checks that `node` is a mapping whose keys all appear in `allowed`, and
  /// records the line of every key under `path`.
  void check_map(const YAML::Node& node, const std::string& path, const std::vector<std::string>& allowed) {
    if (!node.IsMap()) fail(node.Mark(), (path.empty() ? std::string("manifest") : path) + " must be a mapping");
    std::set<std::string> seen;
    for (auto it = node.begin(); it != node.end(); ++it) {
      const auto key = it->first.as<std::string>();
      const auto full = path.empty() ? key : path + "." + key;
      if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
        std::string list;
        for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
        fail(it->first.Mark(), "unknown key '" + full + "' (expected one of: " + list + ")");
      }
      if (!seen.insert(key).second) fail(it->first.Mark(), "duplicate key '" + full + "'");
      lines_[full] = it->first.Mark().line + 1;
    }
  }

  std::string scalar(const YAML::Node& n, const std::string& path) const {
    if (!n.IsScalar()) fail(n.Mark(), path + " must be a scalar");
    return n.Scalar();
  }

  std::uint64_t u64(const YAML::Node& n, const std::string& path) const {
    const auto s = scalar(n, path);
    std::uint64_t v = 0;
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || end != s.data() + s.size()) {
      fail(n.Mark(), path + " must be a non-negative integer, got '" + s + "'");
    }
    return v;
  }

  double real(const YAML::Node& n, const std::string& path) const {
    const auto s = scalar(n, path);
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v)) {
      fail(n.Mark(), path + " must be a finite number, got '" + s + "'");
    }
    return v;
  }

  bool flag(const YAML::Node& n, const std::string& path) const {
    const auto s = scalar(n, path);
    if (s == "true") return true;
    if (s == "false") return false;
    fail(n.Mark(), path + " must be true or false, got '" + s + "'");
  }

  template <class T, class F>
  std::vector<T> list(const YAML::Node& n, const std::string& path, F item) const {
    if (!n.IsSequence()) fail(n.Mark(), path + " must be a list");
    std::vector<T> out;
    for (std::size_t i = 0; i < n.size(); ++i) out.push_back(item(n[i], path + "[" + std::to_string(i) + "]"));
    return out;
  }

  /// Runs a library parser (parse_train_mode etc.), reporting its error at
  /// the node's line.
  template <class F>
  auto named(const YAML::Node& n, const std::string& path, F parse) const {
    const auto s = scalar(n, path);
    try {
      return parse(s);
    } catch (const ConfigError& e) {
      fail(n.Mark(), path + ": " + e.what());
    }
  }

 private:
  std::string source_;
  Lines& lines_;
};

template <class T>
bool has_duplicates(const std::vector<T>& v) {
  std::set<T> seen;
  for (const auto& x : v)
    if (!seen.insert(x).second) return true;
  return false;
}

ArchKind default_arch(TaskKind task) {
  switch (task) {
    case TaskKind::image_cls: return ArchKind::cnn;
    case TaskKind::text_cls: return ArchKind::transformer_classifier;
    case TaskKind::text_gen: return ArchKind::transformer_generator;
  }
  return ArchKind::cnn;
}

std::size_t default_vocab(TaskKind task) { return task == TaskKind::text_gen ? 40 : 32; }

}  // namespace

std::size_t ExperimentManifest::poison_count() const {
  return backdoor_count != 0 ? backdoor_count : default_poison_count(data.train_size);
}

TrainConfig ExperimentManifest::pretrain_config() const {
  TrainConfig c;
  c.mode = TrainMode::clean;
  c.learning_rate = pretrain.learning_rate;
  c.momentum = pretrain.momentum;
  c.batch_size = pretrain.batch_size;
  c.epochs = pretrain.epochs;
  c.checkpoints_per_epoch = 1;
  c.seed = derive_seed(seed, {stream::shuffle});
  return c;
}

TrainConfig ExperimentManifest::finetune_config() const {
  TrainConfig c;
  c.split = default_lat_split(model.kind);
  c.learning_rate = finetune.learning_rate;
  c.momentum = finetune.momentum;
  c.batch_size = finetune.batch_size;
  c.epochs = finetune.epochs;
  c.checkpoints_per_epoch = finetune.checkpoints_per_epoch;
  c.attack.steps = attack.steps;
  c.attack.step_size = attack.step_fraction;
  c.attack.budget.norm = attack.norm;
  c.attack.budget.normalized = attack.normalized;
  c.attack.budget.alpha = attack.alpha;
  c.attack.policy = attack.policy;
  c.attack.sign_step = attack.sign_step;
  c.attack.clip_latents = attack.clip_latents;
  return c;
}

std::filesystem::path ExperimentManifest::output_dir() const { return output; }

std::string ExperimentManifest::canonical() const {
  using nlohmann::json;
  auto names = [](const auto& v) {
    json a = json::array();
    for (const auto& x : v) a.push_back(std::string(to_string(x)));
    return a;
  };
  json j;
  j["format"] = "latkit-manifest/1";
  j["task"] = std::string(to_string(task));
  j["seed"] = seed;
  j["data"] = {{"train_size", data.train_size},
               {"test_size", data.test_size},
               {"finetune_size", data.finetune_size},
               {"classes", data.classes},
               {"vocab", data.vocab}};
  j["backdoors"] = {{"count", poison_count()}};
  j["model"] = {{"arch", std::string(to_string(model.kind))},
                {"seed", model.seed},
                {"hidden", model.hidden},
                {"depth", model.depth},
                {"conv_channels", model.conv_channels},
                {"conv_kernel", model.conv_kernel},
                {"dense_width", model.dense_width},
                {"width", model.width},
                {"heads", model.heads},
                {"blocks", model.blocks}};
  j["pretrain"] = {{"epochs", pretrain.epochs},
                   {"max_epochs", pretrain.max_epochs},
                   {"learning_rate", pretrain.learning_rate},
                   {"momentum", pretrain.momentum},
                   {"batch_size", pretrain.batch_size},
                   {"threshold", pretrain.threshold}};
  j["finetune"] = {{"epochs", finetune.epochs},
                   {"checkpoints_per_epoch", finetune.checkpoints_per_epoch},
                   {"learning_rate", finetune.learning_rate},
                   {"momentum", finetune.momentum},
                   {"batch_size", finetune.batch_size},
                   {"save_checkpoints", finetune.save_checkpoints}};
  j["attack"] = {{"steps", attack.steps},
                 {"step_fraction", attack.step_fraction},
                 {"norm", std::string(to_string(attack.norm))},
                 {"normalized", attack.normalized},
                 {"alpha", attack.alpha},
                 {"policy", std::string(to_string(attack.policy))},
                 {"sign_step", attack.sign_step},
                 {"clip_latents", attack.clip_latents}};
  j["sweep"] = {{"modes", names(sweep.modes)},
                {"epsilons", sweep.epsilons},
                {"relative", sweep.relative},
                {"seeds", sweep.seeds},
                {"splits", sweep.splits}};
  j["battery"] = {{"kinds", names(battery.kinds)}, {"severities", battery.severities}, {"seed", battery.seed}};
  j["layer_sweep"] = {{"splits", layer_sweep.splits}, {"seeds", layer_sweep.seeds}, {"rho", layer_sweep.rho}};
  return j.dump();
}

ExperimentManifest parse_manifest(std::string_view text, const std::filesystem::path& base_dir, std::string source) {
  ExperimentManifest m;
  m.source = source;
  Parser p(source, m.lines);

  YAML::Node root;
  try {
    root = YAML::Load(std::string(text));
  } catch (const YAML::Exception& e) {
    p.fail(e.mark, "YAML syntax error: " + e.msg);
  }
  if (!root || root.IsNull()) throw ManifestError(source + ": manifest is empty");
  p.check_map(root, "",
              {"task", "seed", "output", "data", "backdoors", "model", "pretrain", "finetune", "attack", "sweep",
               "battery", "layer_sweep"});

  auto section = [&](const char* name, const std::vector<std::string>& keys) {
    YAML::Node n = root[name];
    if (!n || n.IsNull()) return YAML::Node(YAML::NodeType::Map);
    p.check_map(n, name, keys);
    return n;
  };
  auto fail_at = [&](const std::string& path, const std::string& message) {
    const auto it = m.lines.find(path);
    if (it == m.lines.end()) throw ManifestError(source + ": " + message);
    throw ManifestError(source + ":" + std::to_string(it->second) + ": " + message);
  };

  if (!root["task"]) throw ManifestError(source + ": missing required key 'task'");
  m.task = p.named(root["task"], "task", parse_task_kind);
  if (root["seed"]) m.seed = p.u64(root["seed"], "seed");
  if (!root["output"]) throw ManifestError(source + ": missing required key 'output'");
  {
    const auto out = p.scalar(root["output"], "output");
    if (out.empty()) fail_at("output", "output must not be empty");
    const std::filesystem::path path(out);
    m.output = path.is_absolute() ? path : base_dir / path;
  }

  const auto data = section("data", {"train_size", "test_size", "finetune_size", "classes", "vocab"});
  if (data["train_size"]) m.data.train_size = p.u64(data["train_size"], "data.train_size");
  if (data["test_size"]) m.data.test_size = p.u64(data["test_size"], "data.test_size");
  if (data["finetune_size"]) m.data.finetune_size = p.u64(data["finetune_size"], "data.finetune_size");
  if (data["classes"]) m.data.classes = p.u64(data["classes"], "data.classes");
  if (data["vocab"]) m.data.vocab = p.u64(data["vocab"], "data.vocab");
  if (m.data.vocab == 0 && m.task != TaskKind::image_cls) m.data.vocab = default_vocab(m.task);

  const auto backdoors = section("backdoors", {"count"});
  if (backdoors["count"]) m.backdoor_count = p.u64(backdoors["count"], "backdoors.count");

  const auto model = section("model", {"arch", "seed", "hidden", "depth", "conv_channels", "conv_kernel",
                                       "dense_width", "width", "heads", "blocks"});
  {
    const ArchKind arch = model["arch"] ? p.named(model["arch"], "model.arch", parse_arch_kind) : default_arch(m.task);
    if (arch != default_arch(m.task)) {
      fail_at("model.arch", "model.arch '" + std::string(to_string(arch)) + "' does not fit task '" +
                                std::string(to_string(m.task)) + "' (use " +
                                std::string(to_string(default_arch(m.task))) + ")");
    }
    const ad::Shape shape =
        m.task == TaskKind::image_cls ? ad::Shape{1, kImageSide, kImageSide} : ad::Shape{kSequenceLength};
    const std::size_t outputs = m.task == TaskKind::image_cls ? m.data.classes
                                : m.task == TaskKind::text_cls ? 2
                                                               : m.data.vocab;
    m.model = ModelSpec::default_for(arch, shape, outputs, derive_seed(m.seed, {stream::init}));
    m.model.vocab = m.data.vocab;
    if (model["seed"]) m.model.seed = p.u64(model["seed"], "model.seed");
    if (model["hidden"]) m.model.hidden = p.u64(model["hidden"], "model.hidden");
    if (model["depth"]) m.model.depth = p.u64(model["depth"], "model.depth");
    if (model["conv_channels"]) {
      m.model.conv_channels = p.list<std::size_t>(model["conv_channels"], "model.conv_channels",
                                                  [&](const YAML::Node& n, const std::string& path) {
                                                    return static_cast<std::size_t>(p.u64(n, path));
                                                  });
    }
    if (model["conv_kernel"]) m.model.conv_kernel = p.u64(model["conv_kernel"], "model.conv_kernel");
    if (model["dense_width"]) m.model.dense_width = p.u64(model["dense_width"], "model.dense_width");
    if (model["width"]) m.model.width = p.u64(model["width"], "model.width");
    if (model["heads"]) m.model.heads = p.u64(model["heads"], "model.heads");
    if (model["blocks"]) m.model.blocks = p.u64(model["blocks"], "model.blocks");
  }

  const std::vector<std::string> train_keys = {"epochs", "learning_rate", "momentum", "batch_size"};
  auto with = [](std::vector<std::string> v, std::initializer_list<std::string> extra) {
    v.insert(v.end(), extra);
    return v;
  };
  const auto pre = section("pretrain", with(train_keys, {"max_epochs", "threshold"}));
  if (pre["epochs"]) m.pretrain.epochs = p.u64(pre["epochs"], "pretrain.epochs");
  if (pre["max_epochs"]) m.pretrain.max_epochs = p.u64(pre["max_epochs"], "pretrain.max_epochs");
  if (pre["learning_rate"]) m.pretrain.learning_rate = p.real(pre["learning_rate"], "pretrain.learning_rate");
  if (pre["momentum"]) m.pretrain.momentum = p.real(pre["momentum"], "pretrain.momentum");
  if (pre["batch_size"]) m.pretrain.batch_size = p.u64(pre["batch_size"], "pretrain.batch_size");
  m.pretrain.threshold = m.task == TaskKind::text_gen ? 0.1 : 0.9;
  if (pre["threshold"]) m.pretrain.threshold = p.real(pre["threshold"], "pretrain.threshold");

  const auto ft = section("finetune", with(train_keys, {"checkpoints_per_epoch", "save_checkpoints"}));
  if (ft["epochs"]) m.finetune.epochs = p.u64(ft["epochs"], "finetune.epochs");
  if (ft["checkpoints_per_epoch"]) {
    m.finetune.checkpoints_per_epoch = p.u64(ft["checkpoints_per_epoch"], "finetune.checkpoints_per_epoch");
  }
  if (ft["learning_rate"]) m.finetune.learning_rate = p.real(ft["learning_rate"], "finetune.learning_rate");
  if (ft["momentum"]) m.finetune.momentum = p.real(ft["momentum"], "finetune.momentum");
  if (ft["batch_size"]) m.finetune.batch_size = p.u64(ft["batch_size"], "finetune.batch_size");
  if (ft["save_checkpoints"]) m.finetune.save_checkpoints = p.flag(ft["save_checkpoints"], "finetune.save_checkpoints");

  const auto at = section("attack", {"steps", "step_fraction", "norm", "normalized", "alpha", "policy", "sign_step",
                                     "clip_latents"});
  m.attack.steps = m.task == TaskKind::text_gen ? 5 : 10;
  if (at["steps"]) m.attack.steps = p.u64(at["steps"], "attack.steps");
  if (at["step_fraction"]) m.attack.step_fraction = p.real(at["step_fraction"], "attack.step_fraction");
  if (at["norm"]) m.attack.norm = p.named(at["norm"], "attack.norm", parse_norm_order);
  if (at["normalized"]) m.attack.normalized = p.flag(at["normalized"], "attack.normalized");
  if (at["alpha"]) m.attack.alpha = p.real(at["alpha"], "attack.alpha");
  if (at["policy"]) m.attack.policy = p.named(at["policy"], "attack.policy", parse_iterate_policy);
  if (at["sign_step"]) m.attack.sign_step = p.flag(at["sign_step"], "attack.sign_step");
  if (at["clip_latents"]) m.attack.clip_latents = p.flag(at["clip_latents"], "attack.clip_latents");

  const auto sw = section("sweep", {"modes", "epsilons", "relative", "seeds", "splits"});
  auto seeds = [&](const YAML::Node& n, const std::string& path) {
    return p.list<std::uint64_t>(n, path, [&](const YAML::Node& x, const std::string& q) { return p.u64(x, q); });
  };
  auto indices = [&](const YAML::Node& n, const std::string& path) {
    return p.list<std::size_t>(n, path, [&](const YAML::Node& x, const std::string& q) {
      return static_cast<std::size_t>(p.u64(x, q));
    });
  };
  m.sweep.modes = {TrainMode::clean, TrainMode::lat, TrainMode::at, TrainMode::rlp};
  if (sw["modes"]) {
    m.sweep.modes = p.list<TrainMode>(sw["modes"], "sweep.modes", [&](const YAML::Node& n, const std::string& path) {
      return p.named(n, path, parse_train_mode);
    });
  }
  if (sw["epsilons"]) {
    const auto e = sw["epsilons"];
    if (e.IsMap()) {
      // Linearly spaced grid: {from, to, count, scale}.
      p.check_map(e, "sweep.epsilons", {"from", "to", "count", "scale"});
      for (const char* k : {"from", "to", "count"})
        if (!e[k]) p.fail(e.Mark(), std::string("sweep.epsilons needs '") + k + "'");
      const double from = p.real(e["from"], "sweep.epsilons.from");
      const double to = p.real(e["to"], "sweep.epsilons.to");
      const auto count = p.u64(e["count"], "sweep.epsilons.count");
      const double scale = e["scale"] ? p.real(e["scale"], "sweep.epsilons.scale") : 1.0;
      if (count == 0) p.fail(e["count"].Mark(), "sweep.epsilons.count must be positive");
      if (count == 1 && from != to) p.fail(e["count"].Mark(), "a one-point grid needs from == to");
      for (std::uint64_t i = 0; i < count; ++i) {
        const double t = count == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(count - 1);
        m.sweep.epsilons.push_back((from + (to - from) * t) * scale);
      }
    } else {
      m.sweep.epsilons = p.list<double>(e, "sweep.epsilons", [&](const YAML::Node& n, const std::string& path) {
        return p.real(n, path);
      });
    }
  }
  if (sw["relative"]) m.sweep.relative = p.flag(sw["relative"], "sweep.relative");
  m.sweep.seeds = {1, 2, 3};
  if (sw["seeds"]) m.sweep.seeds = seeds(sw["seeds"], "sweep.seeds");
  m.sweep.splits = {default_lat_split(m.model.kind)};
  if (sw["splits"]) m.sweep.splits = indices(sw["splits"], "sweep.splits");

  const auto bat = section("battery", {"kinds", "severities", "seed"});
  if (m.task != TaskKind::text_gen) {
    m.battery.kinds = m.task == TaskKind::image_cls ? image_corruptions() : text_corruptions();
    m.battery.severities = {1, 3, 5};
  }
  if (bat["kinds"]) {
    m.battery.kinds = p.list<CorruptionKind>(bat["kinds"], "battery.kinds",
                                             [&](const YAML::Node& n, const std::string& path) {
                                               return p.named(n, path, parse_corruption_kind);
                                             });
  }
  if (bat["severities"]) {
    m.battery.severities = p.list<int>(bat["severities"], "battery.severities",
                                       [&](const YAML::Node& n, const std::string& path) {
                                         const auto v = p.u64(n, path);
                                         if (v > static_cast<std::uint64_t>(kMaxSeverity)) {
                                           p.fail(n.Mark(), path + " must be in 0.." + std::to_string(kMaxSeverity));
                                         }
                                         return static_cast<int>(v);
                                       });
  }
  m.battery.seed = derive_seed(m.seed, {stream::corrupt});
  if (bat["seed"]) m.battery.seed = p.u64(bat["seed"], "battery.seed");

  const auto ls = section("layer_sweep", {"splits", "seeds", "rho"});
  if (ls["splits"]) m.layer_sweep.splits = indices(ls["splits"], "layer_sweep.splits");
  if (ls["seeds"]) m.layer_sweep.seeds = seeds(ls["seeds"], "layer_sweep.seeds");
  if (ls["rho"]) m.layer_sweep.rho = p.real(ls["rho"], "layer_sweep.rho");

  // Cross-field validation.
  auto require = [&](bool ok, const std::string& path, const std::string& message) {
    if (!ok) fail_at(path, path + ": " + message);
  };
  auto unique = [&](const auto& v, const std::string& path) {
    require(!has_duplicates(v), path, "contains a duplicate entry");
  };
  const std::size_t min_examples = m.task == TaskKind::image_cls ? m.data.classes : 2;
  if (m.task == TaskKind::image_cls) {
    require(m.data.classes >= 2 && m.data.classes <= kMaxImageClasses, "data.classes",
            "must be in [2, " + std::to_string(kMaxImageClasses) + "]");
  }
  require(m.data.train_size >= min_examples, "data.train_size", "needs at least " + std::to_string(min_examples) + " examples");
  require(m.data.test_size >= min_examples, "data.test_size", "needs at least " + std::to_string(min_examples) + " examples");
  const std::size_t clean_pool = m.task == TaskKind::text_gen ? m.data.train_size / 2 : m.data.train_size;
  require(m.data.finetune_size <= clean_pool, "data.finetune_size",
          "exceeds the " + std::to_string(clean_pool) + " clean fine-tuning examples available");
  require(m.poison_count() >= 1, "backdoors.count", "must be positive");

  require(m.pretrain.epochs >= 1, "pretrain.epochs", "must be positive");
  require(m.pretrain.max_epochs >= m.pretrain.epochs, "pretrain.max_epochs", "must be >= pretrain.epochs");
  require(m.pretrain.learning_rate > 0, "pretrain.learning_rate", "must be positive");
  require(m.pretrain.momentum >= 0 && m.pretrain.momentum < 1, "pretrain.momentum", "must be in [0, 1)");
  require(m.pretrain.batch_size >= 1, "pretrain.batch_size", "must be positive");
  if (m.task == TaskKind::text_gen) {
    require(m.pretrain.threshold > 0, "pretrain.threshold", "payload loss threshold must be positive");
  } else {
    require(m.pretrain.threshold > 0 && m.pretrain.threshold <= 1, "pretrain.threshold",
            "success-rate threshold must be in (0, 1]");
  }
  require(m.finetune.epochs >= 1, "finetune.epochs", "must be positive");
  require(m.finetune.checkpoints_per_epoch >= 1, "finetune.checkpoints_per_epoch", "must be positive");
  require(m.finetune.learning_rate > 0, "finetune.learning_rate", "must be positive");
  require(m.finetune.momentum >= 0 && m.finetune.momentum < 1, "finetune.momentum", "must be in [0, 1)");
  require(m.finetune.batch_size >= 1, "finetune.batch_size", "must be positive");
  require(m.attack.steps >= 1, "attack.steps", "must be positive");
  require(m.attack.step_fraction > 0, "attack.step_fraction", "must be positive");
  require(m.attack.alpha >= 0, "attack.alpha", "must be >= 0");

  std::optional<SplitModel> built;
  try {
    built = SplitModel::build(m.model);
  } catch (const ConfigError& e) {
    fail_at(m.lines.count("model.arch") ? "model.arch" : "model", std::string("model: ") + e.what());
  }
  const SplitModel& probe_model = *built;
  const auto valid = latent_splits(probe_model);
  auto check_splits = [&](const std::vector<std::size_t>& splits, const std::string& path) {
    for (auto s : splits) {
      require(std::find(valid.begin(), valid.end(), s) != valid.end(), path,
              "split " + std::to_string(s) + " is not a hidden activation (valid 1.." +
                  std::to_string(probe_model.depth() - 1) + ")");
    }
    unique(splits, path);
  };

  // An empty mode list is a pretrain-only experiment.
  unique(m.sweep.modes, "sweep.modes");
  require(m.sweep.modes.empty() || !m.sweep.seeds.empty(), "sweep.seeds", "must not be empty");
  unique(m.sweep.seeds, "sweep.seeds");
  const bool perturbed = std::any_of(m.sweep.modes.begin(), m.sweep.modes.end(),
                                     [](TrainMode t) { return t != TrainMode::clean; });
  require(!perturbed || !m.sweep.epsilons.empty(), "sweep.epsilons", "must not be empty for perturbed modes");
  for (double e : m.sweep.epsilons) require(e >= 0, "sweep.epsilons", "values must be >= 0");
  unique(m.sweep.epsilons, "sweep.epsilons");
  require(!m.sweep.splits.empty(), "sweep.splits", "must not be empty");
  check_splits(m.sweep.splits, "sweep.splits");

  if (m.task == TaskKind::text_gen) {
    require(m.battery.kinds.empty(), "battery.kinds",
            "the corruption battery does not apply to text-gen (robustness is undesirable-sequence loss)");
  } else {
    for (auto k : m.battery.kinds) {
      require(is_image_corruption(k) == (m.task == TaskKind::image_cls), "battery.kinds",
              "'" + std::string(to_string(k)) + "' does not apply to task " + std::string(to_string(m.task)));
    }
    require(!m.battery.kinds.empty(), "battery.kinds", "must not be empty");
    require(!m.battery.severities.empty(), "battery.severities", "must not be empty");
  }
  unique(m.battery.kinds, "battery.kinds");
  unique(m.battery.severities, "battery.severities");

  if (m.layer_sweep.splits.empty()) m.layer_sweep.splits = valid;
  check_splits(m.layer_sweep.splits, "layer_sweep.splits");
  require(!m.layer_sweep.seeds.empty(), "layer_sweep.seeds", "must not be empty");
  unique(m.layer_sweep.seeds, "layer_sweep.seeds");
  require(m.layer_sweep.rho >= 0, "layer_sweep.rho", "must be >= 0");
  return m;
}

ExperimentManifest load_manifest(const std::filesystem::path& path) {
  std::string text;
  try {
    text = binio::read_file(path);
  } catch (const Error& e) {
    throw ManifestError(e.what());
  }
  const auto base = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  return parse_manifest(text, base, path.string());
}

}  // namespace latkit
