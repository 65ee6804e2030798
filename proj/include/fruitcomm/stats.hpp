#pragma once

#include <cmath>
#include <span>
#include <stdexcept>

namespace fruitcomm {

struct MeanSem {
  double mean = 0.0;
  double sem = 0.0;
};

/// Mean and standard error of the mean (sample standard deviation / sqrt(n)).
/// A single value has SEM 0.
inline MeanSem mean_sem(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("mean_sem: no values");
  const double n = static_cast<double>(values.size());
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / n;
  if (values.size() == 1) return {mean, 0.0};
  double sq = 0.0;
  for (double v : values) sq += (v - mean) * (v - mean);
  return {mean, std::sqrt(sq / (n - 1.0)) / std::sqrt(n)};
}

}  // namespace fruitcomm
