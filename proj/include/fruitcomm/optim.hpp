#pragma once

#include <span>
#include <string>
#include <vector>

namespace fruitcomm {

enum class ClipMode { value, global_norm };

ClipMode parse_clip_mode(const std::string& text);
const char* to_string(ClipMode mode);

/// value: clamp each component to [-threshold, threshold].
/// global_norm: rescale so the L2 norm of the whole vector is <= threshold.
void clip_gradients(std::span<double> grads, double threshold = 0.1, ClipMode mode = ClipMode::value);

struct RmsPropOptions {
  double learning_rate = 0.001;
  double decay = 0.99;
  double epsilon = 1e-8;
};

/// v <- decay * v + (1 - decay) * g^2;  p <- p - lr * g / (sqrt(v) + eps)
class RmsProp {
 public:
  RmsProp() = default;
  RmsProp(std::size_t size, RmsPropOptions options) : options_(options), square_avg_(size, 0.0) {}

  void step(std::span<double> params, std::span<const double> grads);

  const RmsPropOptions& options() const { return options_; }
  std::span<const double> square_avg() const { return square_avg_; }
  std::vector<double>& mutable_square_avg() { return square_avg_; }

 private:
  RmsPropOptions options_;
  std::vector<double> square_avg_;
};

}  // namespace fruitcomm
