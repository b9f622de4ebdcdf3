#include "latkit/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "latkit/binio.hpp"
#include "latkit/error.hpp"
#include "latkit/optim.hpp"
#include "latkit/rng.hpp"

namespace latkit {

using ad::Tensor;

std::string_view to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::clean: return "clean";
    case TrainMode::at: return "at";
    case TrainMode::lat: return "lat";
    case TrainMode::rlp: return "rlp";
  }
  return "?";
}

TrainMode parse_train_mode(std::string_view text) {
  for (auto m : {TrainMode::clean, TrainMode::at, TrainMode::lat, TrainMode::rlp})
    if (to_string(m) == text) return m;
  throw ConfigError("unknown training mode '" + std::string(text) + "' (expected clean, at, lat or rlp)");
}

namespace {

std::string hex(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
  if (batch_size == 0) throw ConfigError("batch size must be > 0");
  if (epochs == 0) throw ConfigError("epochs must be > 0");
  if (checkpoints_per_epoch == 0) throw ConfigError("checkpoints per epoch must be > 0");
  if (mode != TrainMode::clean) attack.validate();
}

std::string TrainConfig::fingerprint() const {
  std::ostringstream s;
  s << "mode=" << to_string(mode);
  if (mode == TrainMode::lat || mode == TrainMode::rlp) s << ";split=" << split;
  if (mode != TrainMode::clean) {
    const auto& b = attack.budget;
    s << ";eps=" << hex(b.epsilon) << ";p=" << to_string(b.norm) << ";normalized=" << b.normalized
      << ";alpha=" << hex(b.alpha) << ";steps=" << attack.steps << ";eta=" << hex(attack.step_size)
      << ";policy=" << to_string(attack.policy) << ";sign=" << attack.sign_step << ";clip=" << attack.clip_latents
      << ";attack_seed=" << attack.seed;
  }
  s << ";lr=" << hex(learning_rate) << ";momentum=" << hex(momentum) << ";batch=" << batch_size
    << ";epochs=" << epochs << ";cadence=" << checkpoints_per_epoch << ";seed=" << seed;
  return s.str();
}

std::size_t steps_per_epoch(std::size_t examples, std::size_t batch_size) {
  if (examples == 0) throw ContractError("cannot train on an empty dataset");
  return std::max<std::size_t>(examples / batch_size, 1);
}

namespace {

constexpr std::size_t kTraceLength = 8;

class Trainer {
 public:
  Trainer(SplitModel& model, const Dataset& data, const TrainConfig& config)
      : model_(model), data_(data), config_(config), opt_(config.learning_rate, config.momentum) {
    config_.validate();
    if (data.empty()) throw ContractError("cannot train on an empty dataset");
    if (data.example_shape != model.input_shape()) {
      throw DimensionError("dataset examples " + ad::to_string(data.example_shape) + " do not match model input " +
                           ad::to_string(model.input_shape()));
    }
    batch_ = std::min(config_.batch_size, data.size());
    spe_ = latkit::steps_per_epoch(data.size(), batch_);
    if (config_.checkpoints_per_epoch > spe_) {
      throw ConfigError("checkpoints per epoch (" + std::to_string(config_.checkpoints_per_epoch) +
                        ") exceeds steps per epoch (" + std::to_string(spe_) + ")");
    }
    if (config_.mode == TrainMode::lat || config_.mode == TrainMode::rlp) model_.set_split(config_.split);
  }

  void restore(std::size_t step, std::vector<std::vector<double>> velocity) {
    step_ = step;
    opt_.set_velocity(std::move(velocity));
  }

  std::size_t step() const { return step_; }
  std::size_t steps_per_epoch() const { return spe_; }
  std::size_t total_steps() const { return config_.epochs * spe_; }

  bool is_checkpoint_step(std::size_t done) const {
    if (done == 0) return false;
    const auto pos = (done - 1) % spe_ + 1;  // steps done within the epoch, 1..spe
    for (std::size_t c = 1; c <= config_.checkpoints_per_epoch; ++c)
      if (pos == c * spe_ / config_.checkpoints_per_epoch) return true;
    return false;
  }

  Checkpoint snapshot() const {
    return Checkpoint{model_, step_, config_.fingerprint(), config_.seed, opt_.velocity()};
  }

  // Runs until `until` steps are done, appending checkpoints to `out`.
  void run(std::size_t until, std::vector<Checkpoint>* out) {
    while (step_ < until) {
      one_step();
      if (out && is_checkpoint_step(step_)) out->push_back(snapshot());
    }
  }

 private:
  const std::vector<std::size_t>& permutation(std::size_t epoch) {
    if (perm_epoch_ != epoch || perm_.empty()) {
      perm_.resize(data_.size());
      std::iota(perm_.begin(), perm_.end(), 0);
      auto rng = make_rng(config_.seed, {stream::shuffle, epoch});
      std::shuffle(perm_.begin(), perm_.end(), rng);
      perm_epoch_ = epoch;
    }
    return perm_;
  }

  Tensor objective(const Batch& b) {
    const bool perturbed = config_.mode != TrainMode::clean && config_.attack.budget.epsilon != 0.0;
    if (!perturbed) return task_loss(model_.forward(b.x), b.y);
    AttackConfig ac = config_.attack;
    ac.seed = derive_seed(config_.seed, {stream::attack, config_.attack.seed, step_});
    AttackOutcome outcome;
    switch (config_.mode) {
      case TrainMode::at: outcome = pgd_input_attack(model_, b.x, b.y, ac, data_.input_range); break;
      case TrainMode::lat: outcome = pgd_latent_attack(model_, b.x, b.y, ac); break;
      case TrainMode::rlp: outcome = random_latent_perturbation(model_, b.x, b.y, ac); break;
      case TrainMode::clean: break;
    }
    last_attack_trace_ = outcome.loss_trace;
    return perturbed_loss(model_, b.x, b.y, outcome);
  }

  void one_step() {
    const auto epoch = step_ / spe_;
    const auto pos = step_ % spe_;
    const auto& perm = permutation(epoch);
    const std::span<const std::size_t> idx(perm.data() + pos * batch_, batch_);
    const Batch b = data_.batch(idx);
    Tensor loss = objective(b);
    const double value = loss.item();
    trace_.push_back(value);
    if (trace_.size() > kTraceLength) trace_.erase(trace_.begin());
    if (!std::isfinite(value)) throw_non_finite(epoch, pos, idx);
    ad::backward(loss);
    opt_.step(model_.parameters());
    ++step_;
  }

  [[noreturn]] void throw_non_finite(std::size_t epoch, std::size_t pos, std::span<const std::size_t> idx) const {
    std::ostringstream s;
    s << "non-finite training loss at step " << step_ << " (epoch " << epoch << ", batch " << pos
      << ", first example " << idx.front() << "); recent losses:";
    for (double v : trace_) s << ' ' << v;
    if (!last_attack_trace_.empty()) {
      s << "; attack trace:";
      for (double v : last_attack_trace_) s << ' ' << v;
    }
    throw NonFiniteLossError(s.str());
  }

  SplitModel& model_;
  const Dataset& data_;
  TrainConfig config_;
  Sgd opt_;
  std::size_t batch_ = 0;
  std::size_t spe_ = 0;
  std::size_t step_ = 0;
  std::size_t perm_epoch_ = 0;
  std::vector<std::size_t> perm_;
  std::vector<double> trace_;
  std::vector<double> last_attack_trace_;
};

}  // namespace

std::vector<Checkpoint> train(SplitModel& model, const Dataset& data, const TrainConfig& config) {
  Trainer t(model, data, config);
  std::vector<Checkpoint> out;
  t.run(t.total_steps(), &out);
  return out;
}

std::vector<Checkpoint> resume(const Checkpoint& from, const Dataset& data, const TrainConfig& config) {
  if (from.fingerprint != config.fingerprint()) {
    throw ConfigError("checkpoint was written by a different configuration:\n  checkpoint: " + from.fingerprint +
                      "\n  config:     " + config.fingerprint());
  }
  SplitModel model = from.model;
  Trainer t(model, data, config);
  t.restore(from.step, from.velocity);
  std::vector<Checkpoint> out;
  t.run(t.total_steps(), &out);
  return out;
}

Checkpoint poison_pretrain(SplitModel& model, const Dataset& poisoned, const TrainConfig& config,
                           const ImplantCheck& check, std::size_t max_epochs) {
  if (config.mode != TrainMode::clean) throw ConfigError("poisoned pretraining runs in clean mode");
  TrainConfig c = config;
  c.epochs = std::max(max_epochs, config.epochs);
  Trainer t(model, poisoned, c);
  ImplantStatus status;
  for (std::size_t epoch = 1; epoch <= c.epochs; ++epoch) {
    t.run(epoch * t.steps_per_epoch(), nullptr);
    if (epoch < config.epochs) continue;
    status = check(model);
    if (status.met) return t.snapshot();
  }
  throw ImplantationError("backdoor implantation threshold unmet after " + std::to_string(c.epochs) +
                          " epochs: " + status.detail);
}

double mean_activation_norm(const SplitModel& model, const Dataset& data, std::size_t index, NormOrder p,
                            std::size_t max_examples) {
  const auto n = std::min(max_examples, data.size());
  if (n == 0) throw ContractError("mean_activation_norm needs at least one example");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  const SplitModel frozen = model.frozen();
  const Tensor act = frozen.forward_range(data.batch(idx).x, 0, index);
  const auto width = act.numel() / n;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += lp_norm(act.values().subspan(i * width, width), p);
  return total / static_cast<double>(n);
}

std::vector<RunSpec> plan_sweep(const TrainConfig& base, const SweepGrid& grid, const NormLookup& norm_at,
                                std::size_t input_attack_index) {
  if (grid.modes.empty() || grid.seeds.empty()) throw ConfigError("sweep grid needs at least one mode and seed");
  const bool perturbed = std::any_of(grid.modes.begin(), grid.modes.end(), [](TrainMode m) { return m != TrainMode::clean; });
  if (perturbed && grid.epsilons.empty()) throw ConfigError("sweep epsilon grid is empty");
  const bool latent = std::any_of(grid.modes.begin(), grid.modes.end(),
                                  [](TrainMode m) { return m == TrainMode::lat || m == TrainMode::rlp; });
  if (latent && grid.splits.empty()) throw ConfigError("sweep split grid is empty");

  std::vector<RunSpec> plan;
  std::set<std::string> seen;
  auto add = [&](RunSpec r) {
    if (!seen.insert(r.config.fingerprint()).second) {
      throw ConfigError("duplicate run fingerprint in sweep: " + r.run_id);
    }
    plan.push_back(std::move(r));
  };
  for (auto mode : grid.modes) {
    for (auto seed : grid.seeds) {
      TrainConfig c = base;
      c.mode = mode;
      c.seed = seed;
      if (mode == TrainMode::clean) {
        add({"clean-seed" + std::to_string(seed), mode, 0.0, c});
        continue;
      }
      const std::vector<std::size_t> splits =
          mode == TrainMode::at ? std::vector<std::size_t>{0} : grid.splits;
      for (auto split : splits) {
        for (double e : grid.epsilons) {
          if (!(e >= 0.0)) throw ConfigError("sweep epsilon must be >= 0");
          c.split = split;
          double scale = 1.0;
          if (grid.relative && e != 0.0) scale = norm_at(mode == TrainMode::at ? input_attack_index : split);
          c.attack.budget.epsilon = e * scale;
          char eps[32];
          std::snprintf(eps, sizeof eps, "%g", e);
          std::string id = std::string(to_string(mode)) + "-eps" + eps;
          if (mode != TrainMode::at) id += "-split" + std::to_string(split);
          id += "-seed" + std::to_string(seed);
          add({id, mode, e, c});
        }
      }
    }
  }
  return plan;
}

std::vector<RunResult> run_sweep(const SplitModel& start, const Dataset& data, const std::vector<RunSpec>& plan,
                                 std::size_t workers) {
  std::vector<RunResult> results(plan.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (;;) {
      const auto i = next.fetch_add(1);
      if (i >= plan.size()) return;
      try {
        SplitModel model = start;
        results[i] = {plan[i], train(model, data, plan[i].config)};
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = plan.size();
        return;
      }
    }
  };
  workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(plan.size(), 1));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return results;
}

// Checkpoint container.

namespace {

constexpr std::string_view kCheckpointMagic = "LATKCKPT";
constexpr std::uint32_t kCheckpointVersion = 1;

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::vector<std::size_t> split_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoull(item));
  return out;
}

std::map<std::string, std::string> spec_fields(const ModelSpec& s) {
  return {{"kind", std::string(to_string(s.kind))},
          {"input_shape", join(s.input_shape)},
          {"outputs", std::to_string(s.outputs)},
          {"seed", std::to_string(s.seed)},
          {"hidden", std::to_string(s.hidden)},
          {"depth", std::to_string(s.depth)},
          {"conv_channels", join(s.conv_channels)},
          {"conv_kernel", std::to_string(s.conv_kernel)},
          {"dense_width", std::to_string(s.dense_width)},
          {"vocab", std::to_string(s.vocab)},
          {"width", std::to_string(s.width)},
          {"heads", std::to_string(s.heads)},
          {"blocks", std::to_string(s.blocks)}};
}

ModelSpec spec_from_fields(const std::map<std::string, std::string>& f) {
  auto get = [&](const std::string& k) -> const std::string& {
    auto it = f.find(k);
    if (it == f.end()) throw FormatError("checkpoint metadata lacks '" + k + "'");
    return it->second;
  };
  auto num = [&](const std::string& k) { return static_cast<std::size_t>(std::stoull(get(k))); };
  ModelSpec s;
  s.kind = parse_arch_kind(get("kind"));
  s.input_shape = split_list(get("input_shape"));
  s.outputs = num("outputs");
  s.seed = std::stoull(get("seed"));
  s.hidden = num("hidden");
  s.depth = num("depth");
  s.conv_channels = split_list(get("conv_channels"));
  s.conv_kernel = num("conv_kernel");
  s.dense_width = num("dense_width");
  s.vocab = num("vocab");
  s.width = num("width");
  s.heads = num("heads");
  s.blocks = num("blocks");
  return s;
}

void write_vector(binio::Writer& w, std::span<const double> v) {
  w.u64(v.size());
  for (double x : v) w.f64(x);
}

std::vector<double> read_vector(binio::Reader& r, std::string_view what) {
  const auto n = r.u64(what);
  if (n > r.remaining() / 8) r.fail(std::string(what) + " length exceeds the file");
  std::vector<double> v(n);
  for (auto& x : v) x = r.f64(what);
  return v;
}

}  // namespace

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  binio::Writer w;
  w.bytes(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  auto meta = spec_fields(c.model.spec());
  meta["split"] = std::to_string(c.model.split());
  meta["step"] = std::to_string(c.step);
  meta["train_seed"] = std::to_string(c.seed);
  meta["fingerprint"] = c.fingerprint;
  w.u32(static_cast<std::uint32_t>(meta.size()));
  for (const auto& [k, v] : meta) {
    w.str(k);
    w.str(v);
  }
  const auto& params = c.model.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.str(p.name);
    w.u32(static_cast<std::uint32_t>(p.tensor.dim()));
    for (auto e : p.tensor.shape()) w.u64(e);
    for (double x : p.tensor.values()) w.f64(x);
  }
  w.u32(static_cast<std::uint32_t>(c.velocity.size()));
  for (const auto& v : c.velocity) write_vector(w, v);
  binio::write_file_atomic(path, w.data());
}

namespace {

Checkpoint parse_checkpoint(binio::Reader& r) {
  if (r.bytes(kCheckpointMagic.size(), "magic") != kCheckpointMagic) r.fail("not a latkit checkpoint (bad magic)");
  const auto version = r.u32("version");
  if (version != kCheckpointVersion) r.fail("unsupported checkpoint version " + std::to_string(version));
  std::map<std::string, std::string> meta;
  const auto n_meta = r.u32("metadata count");
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    auto k = r.str("metadata key");
    meta[k] = r.str("metadata value");
  }
  SplitModel model = SplitModel::build(spec_from_fields(meta));
  model.set_split(std::stoull(meta.at("split")));
  auto& params = model.parameters();
  const auto n_params = r.u32("parameter count");
  if (n_params != params.size()) {
    r.fail("checkpoint holds " + std::to_string(n_params) + " parameters, architecture has " +
           std::to_string(params.size()));
  }
  for (std::uint32_t i = 0; i < n_params; ++i) {
    const auto name = r.str("parameter name");
    auto& p = params[i];
    if (name != p.name) r.fail("parameter '" + name + "' where '" + p.name + "' was expected");
    const auto rank = r.u32("parameter rank");
    ad::Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(r.u64("parameter extent"));
    if (shape != p.tensor.shape()) r.fail("parameter '" + name + "' has shape " + ad::to_string(shape));
    for (auto& x : p.tensor.mutable_values()) x = r.f64("parameter values");
  }
  std::vector<std::vector<double>> velocity(r.u32("velocity count"));
  for (auto& v : velocity) v = read_vector(r, "velocity");
  if (!r.at_end()) r.fail("trailing bytes after checkpoint payload");
  return Checkpoint{std::move(model), static_cast<std::size_t>(std::stoull(meta.at("step"))), meta.at("fingerprint"),
                    std::stoull(meta.at("train_seed")), std::move(velocity)};
}

}  // namespace

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  binio::Reader r(binio::read_file(path), path.string());
  try {
    return parse_checkpoint(r);
  } catch (const std::logic_error&) {
    // std::out_of_range / std::invalid_argument from missing or malformed
    // metadata values.
    r.fail("malformed checkpoint metadata");
  } catch (const ConfigError& e) {
    r.fail(std::string("invalid architecture in checkpoint: ") + e.what());
  }
}

}  // namespace latkit
