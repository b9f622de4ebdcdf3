#include "latkit/attack.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "latkit/error.hpp"
#include "latkit/log.hpp"
#include "latkit/rng.hpp"

namespace latkit {

using ad::Tensor;

std::string_view to_string(IteratePolicy policy) { return policy == IteratePolicy::last ? "last" : "best-loss"; }

IteratePolicy parse_iterate_policy(std::string_view text) {
  if (text == "last") return IteratePolicy::last;
  if (text == "best-loss") return IteratePolicy::best_loss;
  throw ConfigError("unknown iterate policy '" + std::string(text) + "' (expected last or best-loss)");
}

void AttackConfig::validate() const {
  if (!(step_size > 0.0)) throw ConfigError("attack step size must be > 0");
  budget.validate();
}

Tensor PerturbationSite::apply(const Tensor& activation, const Tensor& delta) const {
  Tensor d = sigma ? apply_normalized(delta, *sigma, alpha) : delta;
  Tensor out = ad::add(activation, d);
  return clip ? clip_to_range(out, *clip) : out;
}

namespace {

double label_denominator(std::span<const int> labels) {
  std::size_t counted = 0;
  for (int y : labels) counted += y != ad::kIgnoreLabel;
  return static_cast<double>(std::max<std::size_t>(counted, 1));
}

// Pulls each coordinate of delta back so that clean + delta stays in range.
void keep_in_range(std::span<double> delta, std::span<const double> clean, InputRange range) {
  for (std::size_t i = 0; i < delta.size(); ++i) {
    const double v = clean[i] + delta[i];
    if (v > range.hi) delta[i] = range.hi - clean[i];
    else if (v < range.lo) delta[i] = range.lo - clean[i];
  }
}

struct PgdProblem {
  const SplitModel* model = nullptr;  // frozen
  Tensor clean;                       // activation at site.index
  std::span<const int> labels;
  PerturbationSite site;
  std::optional<InputRange> range;  // input attacks at index 0 only
};

// Loss (sum over examples) of the perturbed forward pass; `delta` may
// require grad.
Tensor site_loss(const PgdProblem& p, const Tensor& delta) {
  const Tensor out = p.model->forward_range(p.site.apply(p.clean, delta), p.site.index, p.model->depth());
  return task_loss(out, p.labels, ad::Reduction::sum);
}

AttackOutcome run_pgd(const PgdProblem& p, const AttackConfig& config, std::size_t steps) {
  config.validate();
  const double denom = label_denominator(p.labels);
  AttackOutcome result;
  result.site = p.site;

  if (config.budget.epsilon == 0.0) {
    result.delta = Tensor::zeros(p.clean.shape());
    const double clean_loss = site_loss(p, result.delta).item() / denom;
    result.loss_trace.assign(steps + 1, clean_loss);
    result.final_loss = clean_loss;
    return result;
  }

  auto rng = make_rng(config.seed, {stream::attack});
  Tensor delta = random_init(p.clean.shape(), config.budget, rng);
  if (p.range) keep_in_range(delta.mutable_values(), p.clean.values(), *p.range);

  Tensor best = delta;
  double best_loss = 0.0;
  for (std::size_t t = 0; t <= steps; ++t) {
    const bool ascend = t < steps;
    Tensor leaf(p.clean.shape(), std::vector<double>(delta.values().begin(), delta.values().end()), ascend);
    Tensor loss = site_loss(p, leaf);
    const double value = loss.item() / denom;
    result.loss_trace.push_back(value);
    if (t == 0 || value > best_loss) {
      best_loss = value;
      best = delta;
    }
    if (!ascend) break;

    ad::backward(loss);
    const auto g = leaf.grad();
    std::vector<double> next(delta.values().begin(), delta.values().end());
    for (std::size_t i = 0; i < next.size(); ++i) {
      const double step = config.sign_step ? (g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0)) : g[i];
      next[i] += config.step_size * step;
    }
    delta = project_lp(Tensor(p.clean.shape(), std::move(next)), config.budget.epsilon, config.budget.norm);
    if (p.range) keep_in_range(delta.mutable_values(), p.clean.values(), *p.range);
  }

  if (config.policy == IteratePolicy::best_loss) {
    result.delta = best;
    result.final_loss = best_loss;
  } else {
    result.delta = delta;
    result.final_loss = result.loss_trace.back();
  }
  return result;
}

PgdProblem latent_problem(const SplitModel& frozen, const Tensor& x, std::span<const int> labels,
                          const AttackConfig& config) {
  PgdProblem p;
  p.model = &frozen;
  p.labels = labels;
  p.site.index = frozen.split();
  p.clean = frozen.forward_f(x).detach();
  if (config.budget.normalized) {
    if (p.site.index == 0) {
      log_warning("normalized latent attack at split 0 acts on raw inputs");
    }
    p.site.sigma = compute_sigma(p.clean);
    p.site.alpha = config.budget.alpha;
  }
  if (config.clip_latents) p.site.clip = batch_range(p.clean);
  return p;
}

}  // namespace

AttackOutcome pgd_input_attack(const SplitModel& model, const Tensor& x, std::span<const int> labels,
                               const AttackConfig& config, std::optional<InputRange> range) {
  if (config.budget.normalized) {
    throw ConfigError("the normalized metric applies to latent attacks only");
  }
  const SplitModel frozen = model.frozen();
  PgdProblem p;
  p.model = &frozen;
  p.labels = labels;
  p.site.index = frozen.input_attack_split();
  p.clean = frozen.forward_range(x, 0, p.site.index).detach();
  if (p.site.index == 0) p.range = range;
  return run_pgd(p, config, config.steps);
}

AttackOutcome pgd_latent_attack(const SplitModel& model, const Tensor& x, std::span<const int> labels,
                                const AttackConfig& config) {
  const SplitModel frozen = model.frozen();
  return run_pgd(latent_problem(frozen, x, labels, config), config, config.steps);
}

AttackOutcome random_latent_perturbation(const SplitModel& model, const Tensor& x, std::span<const int> labels,
                                         const AttackConfig& config) {
  const SplitModel frozen = model.frozen();
  return run_pgd(latent_problem(frozen, x, labels, config), config, 0);
}

Tensor perturbed_loss(const SplitModel& model, const Tensor& x, std::span<const int> labels,
                      const AttackOutcome& outcome) {
  const auto k = outcome.site.index;
  const Tensor activation = model.forward_range(x, 0, k);
  const Tensor out = model.forward_range(outcome.site.apply(activation, outcome.delta), k, model.depth());
  return task_loss(out, labels);
}

}  // namespace latkit
