#include "latkit/parameters.hpp"

namespace latkit {

void Parameters::add(std::string name, ad::Tensor tensor, std::size_t layer) {
  items_.push_back({std::move(name), std::move(tensor), layer});
}

std::size_t Parameters::total_elements() const {
  std::size_t n = 0;
  for (const auto& p : items_) n += p.tensor.numel();
  return n;
}

const NamedParameter* Parameters::find(const std::string& name) const {
  for (const auto& p : items_)
    if (p.name == name) return &p;
  return nullptr;
}

std::vector<const NamedParameter*> Parameters::pre_split(std::size_t split) const {
  std::vector<const NamedParameter*> out;
  for (const auto& p : items_)
    if (p.layer < split) out.push_back(&p);
  return out;
}

std::vector<const NamedParameter*> Parameters::post_split(std::size_t split) const {
  std::vector<const NamedParameter*> out;
  for (const auto& p : items_)
    if (p.layer >= split) out.push_back(&p);
  return out;
}

void Parameters::zero_grad() {
  for (auto& p : items_) p.tensor.zero_grad();
}

void Parameters::clear_grad() {
  for (auto& p : items_) p.tensor.clear_grad();
}

}  // namespace latkit
