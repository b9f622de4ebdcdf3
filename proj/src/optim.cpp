#include "latkit/optim.hpp"

#include "latkit/error.hpp"

namespace latkit {

Sgd::Sgd(double learning_rate, double momentum) : learning_rate_(learning_rate), momentum_(momentum) {
  if (learning_rate < 0.0) throw ConfigError("learning rate must be non-negative");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
}

void Sgd::step(Parameters& params) {
  for (const auto& p : params) {
    if (p.tensor.requires_grad() && !p.tensor.has_grad()) {
      throw ContractError("optimizer step: parameter '" + p.name + "' has no gradient");
    }
  }
  if (momentum_ > 0.0 && velocity_.size() != params.size()) {
    velocity_.clear();
    for (const auto& p : params) velocity_.emplace_back(p.tensor.numel(), 0.0);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& t = params[i].tensor;
    if (!t.requires_grad()) continue;
    auto values = t.mutable_values();
    auto grad = t.grad();
    if (momentum_ > 0.0) {
      auto& v = velocity_[i];
      for (std::size_t j = 0; j < values.size(); ++j) {
        v[j] = momentum_ * v[j] + grad[j];
        values[j] -= learning_rate_ * v[j];
      }
    } else {
      for (std::size_t j = 0; j < values.size(); ++j) values[j] -= learning_rate_ * grad[j];
    }
  }
  params.clear_grad();
}

void optimizer_step(Parameters& params, double learning_rate) {
  Sgd sgd(learning_rate);
  sgd.step(params);
}

}  // namespace latkit
