#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fruitcomm/autodiff.hpp"

namespace fruitcomm {

/// A named, shaped slice of a flat parameter vector.
struct ParamSlice {
  std::string name;
  Shape shape;
  std::size_t offset = 0;
};

/// Flat storage for a model's learnable tensors. Gradients and optimizer state
/// are flat vectors of the same length, so clipping and updates are one loop.
class ParameterSet {
 public:
  /// Appends a zero-filled tensor; returns its slot index.
  std::size_t add(std::string name, Shape shape);

  std::size_t size() const { return values_.size(); }
  std::size_t slot_count() const { return slices_.size(); }
  const std::vector<ParamSlice>& slices() const { return slices_; }
  const ParamSlice& slice(std::size_t slot) const { return slices_.at(slot); }
  std::optional<std::size_t> find(const std::string& name) const;

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::span<double> values(std::size_t slot);
  std::span<const double> values(std::size_t slot) const;

  /// Binds one slot to a tape. `grad` is the model-sized gradient buffer, or
  /// empty for an evaluation-only binding.
  Var bind(Tape& tape, std::size_t slot, std::span<double> grad) const;

  friend bool operator==(const ParameterSet& a, const ParameterSet& b);

 private:
  std::vector<ParamSlice> slices_;
  std::vector<double> values_;
};

}  // namespace fruitcomm
