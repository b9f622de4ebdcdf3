#pragma once

#include <vector>

#include "latkit/parameters.hpp"

namespace latkit {

/// Plain gradient descent, theta <- theta - lr * grad, with optional heavy-ball
/// momentum. Gradients are cleared after every step.
class Sgd {
 public:
  explicit Sgd(double learning_rate, double momentum = 0.0);

  /// Throws ContractError if a trainable parameter has no gradient.
  void step(Parameters& params);

  double learning_rate() const { return learning_rate_; }
  double momentum() const { return momentum_; }
  const std::vector<std::vector<double>>& velocity() const { return velocity_; }
  void set_velocity(std::vector<std::vector<double>> velocity) { velocity_ = std::move(velocity); }

 private:
  double learning_rate_;
  double momentum_;
  std::vector<std::vector<double>> velocity_;
};

/// One plain gradient-descent step.
void optimizer_step(Parameters& params, double learning_rate);

}  // namespace latkit
