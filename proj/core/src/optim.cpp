#include <trolldet/optim.hpp>

#include <cmath>

namespace trolldet {

void Optimizer::step(std::span<Parameter* const> params) {
  ++step_;
  if (config_.kind == OptimizerKind::kSgd) {
    for (Parameter* p : params) {
      if (!p->trainable || p->grad.size() == 0) continue;
      p->value -= config_.learning_rate * p->grad;
    }
    return;
  }
  if (first_moment_.empty()) {
    first_moment_.resize(params.size());
    second_moment_.resize(params.size());
  }
  if (first_moment_.size() != params.size()) throw ShapeError("optimizer: parameter list changed between steps");
  const double t = static_cast<double>(step_);
  const double correction1 = 1.0 - std::pow(config_.beta1, t);
  const double correction2 = 1.0 - std::pow(config_.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    if (!p.trainable || p.grad.size() == 0) continue;
    Mat& m = first_moment_[i];
    Mat& v = second_moment_[i];
    if (m.size() == 0) {
      m.setZero(p.value.rows(), p.value.cols());
      v.setZero(p.value.rows(), p.value.cols());
    }
    m = config_.beta1 * m + (1.0 - config_.beta1) * p.grad;
    v = config_.beta2 * v + (1.0 - config_.beta2) * p.grad.cwiseAbs2();
    const auto m_hat = m.array() / correction1;
    const auto v_hat = v.array() / correction2;
    p.value.array() -= config_.learning_rate * m_hat / (v_hat.sqrt() + config_.epsilon);
  }
}

}  // namespace trolldet
