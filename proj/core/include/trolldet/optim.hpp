#pragma once

#include <trolldet/autodiff.hpp>

#include <span>
#include <vector>

namespace trolldet {

enum class OptimizerKind { kSgd, kAdam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdam;
  double learning_rate = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First-order update rules over a fixed list of parameters.
///
/// sgd:  theta -= lr * g
/// adam: m = b1 m + (1 - b1) g; v = b2 v + (1 - b2) g^2;
///       theta -= lr * m_hat / (sqrt(v_hat) + eps) with bias-corrected moments.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config) : config_(config) {}

  /// Applies one update using each parameter's accumulated grad. Parameters
  /// that are not trainable are skipped. The parameter list must be the
  /// same (same order and shapes) on every call.
  void step(std::span<Parameter* const> params);

  std::size_t steps_taken() const { return step_; }
  const OptimizerConfig& config() const { return config_; }

 private:
  OptimizerConfig config_;
  std::size_t step_ = 0;
  std::vector<Mat> first_moment_;
  std::vector<Mat> second_moment_;
};

}  // namespace trolldet
