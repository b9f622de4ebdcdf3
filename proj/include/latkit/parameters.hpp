#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "latkit/autodiff.hpp"

namespace latkit {

struct NamedParameter {
  std::string name;
  ad::Tensor tensor;
  /// Index of the layer owning this parameter.
  std::size_t layer = 0;
};

/// Named model parameters. For a split index s, parameters of layers [0, s)
/// form the pre-split group and the rest the post-split group.
class Parameters {
 public:
  Parameters() = default;
  explicit Parameters(std::vector<NamedParameter> items) : items_(std::move(items)) {}

  void add(std::string name, ad::Tensor tensor, std::size_t layer);

  std::size_t size() const { return items_.size(); }
  std::size_t total_elements() const;
  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }
  const NamedParameter& operator[](std::size_t i) const { return items_[i]; }
  NamedParameter& operator[](std::size_t i) { return items_[i]; }
  const NamedParameter* find(const std::string& name) const;

  std::vector<const NamedParameter*> pre_split(std::size_t split) const;
  std::vector<const NamedParameter*> post_split(std::size_t split) const;

  void zero_grad();
  void clear_grad();

 private:
  std::vector<NamedParameter> items_;
};

}  // namespace latkit
