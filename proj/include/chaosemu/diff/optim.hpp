#pragma once

#include <cstdint>
#include <vector>

#include "chaosemu/diff/var.hpp"

namespace chaosemu::diff {

struct AdamWConfig {
  double learning_rate = 1e-3;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with decoupled weight decay. Moment buffers are keyed by parameter position,
/// so the same parameter list must be passed to every `step`.
class AdamW {
 public:
  explicit AdamW(AdamWConfig config = {}) : config_(config) {}

  /// Applies one update from the gradients currently held by `params`.
  /// Throws MissingGradientError naming the first parameter without a gradient.
  void step(std::vector<Var>& params);

  void set_learning_rate(double lr) { config_.learning_rate = lr; }
  const AdamWConfig& config() const { return config_; }
  std::int64_t step_count() const { return t_; }

 private:
  AdamWConfig config_;
  std::int64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

void zero_grad(std::vector<Var>& params);

}  // namespace chaosemu::diff
