#include "fruitcomm/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fruitcomm {

ClipMode parse_clip_mode(const std::string& text) {
  if (text == "value") return ClipMode::value;
  if (text == "global_norm") return ClipMode::global_norm;
  throw std::invalid_argument("clip_mode must be value or global_norm, got '" + text + "'");
}

const char* to_string(ClipMode mode) { return mode == ClipMode::value ? "value" : "global_norm"; }

void clip_gradients(std::span<double> grads, double threshold, ClipMode mode) {
  if (mode == ClipMode::value) {
    for (double& g : grads) g = std::clamp(g, -threshold, threshold);
    return;
  }
  double sq = 0.0;
  for (double g : grads) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > threshold) {
    const double f = threshold / norm;
    for (double& g : grads) g *= f;
  }
}

void RmsProp::step(std::span<double> params, std::span<const double> grads) {
  if (params.size() != square_avg_.size() || grads.size() != square_avg_.size())
    throw std::invalid_argument("RmsProp::step: size mismatch");
  const double a = options_.decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    double& v = square_avg_[i];
    v = a * v + (1.0 - a) * g * g;
    params[i] -= options_.learning_rate * g / (std::sqrt(v) + options_.epsilon);
  }
}

}  // namespace fruitcomm
