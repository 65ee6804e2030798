#include "fruitcomm/parameters.hpp"

#include <stdexcept>

namespace fruitcomm {

std::size_t ParameterSet::add(std::string name, Shape shape) {
  if (find(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
  slices_.push_back(ParamSlice{std::move(name), shape, values_.size()});
  values_.resize(values_.size() + shape.size(), 0.0);
  return slices_.size() - 1;
}

std::optional<std::size_t> ParameterSet::find(const std::string& name) const {
  for (std::size_t i = 0; i < slices_.size(); ++i)
    if (slices_[i].name == name) return i;
  return std::nullopt;
}

std::span<double> ParameterSet::values(std::size_t slot) {
  const ParamSlice& s = slices_.at(slot);
  return std::span<double>(values_).subspan(s.offset, s.shape.size());
}

std::span<const double> ParameterSet::values(std::size_t slot) const {
  const ParamSlice& s = slices_.at(slot);
  return std::span<const double>(values_).subspan(s.offset, s.shape.size());
}

Var ParameterSet::bind(Tape& tape, std::size_t slot, std::span<double> grad) const {
  const ParamSlice& s = slices_.at(slot);
  std::span<double> g;
  if (!grad.empty()) {
    if (grad.size() != values_.size()) throw std::invalid_argument("gradient buffer size mismatch");
    g = grad.subspan(s.offset, s.shape.size());
  }
  return tape.parameter(values(slot), s.shape, g);
}

bool operator==(const ParameterSet& a, const ParameterSet& b) {
  if (a.values_ != b.values_ || a.slices_.size() != b.slices_.size()) return false;
  for (std::size_t i = 0; i < a.slices_.size(); ++i)
    if (a.slices_[i].name != b.slices_[i].name || a.slices_[i].shape != b.slices_[i].shape) return false;
  return true;
}

}  // namespace fruitcomm
