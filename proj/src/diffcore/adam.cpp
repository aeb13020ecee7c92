#include "prefrl/diffcore/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace prefrl::diffcore {

StepStatus Adam::step(const std::vector<Parameter*>& params) {
  for (const auto* p : params) {
    if (p->grad.size() != p->value.size()) {
      throw ShapeError("gradient " + p->grad.shape_string() + " does not match parameter " +
                       p->value.shape_string());
    }
    if (!p->grad.all_finite()) {
      ++rejected_count_;
      return StepStatus::rejected_non_finite;
    }
  }
  if (first_moment_.empty()) {
    for (const auto* p : params) {
      first_moment_.emplace_back(p->value.shape(), 0.0);
      second_moment_.emplace_back(p->value.shape(), 0.0);
    }
  } else if (first_moment_.size() != params.size()) {
    throw std::invalid_argument("Adam::step called with a different parameter list");
  }

  ++step_count_;
  const auto t = static_cast<double>(step_count_);
  const double bias1 = 1.0 - std::pow(config_.beta1, t);
  const double bias2 = 1.0 - std::pow(config_.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    Tensor& m = first_moment_[i];
    Tensor& v = second_moment_[i];
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double g = p.grad[k];
      m[k] = config_.beta1 * m[k] + (1.0 - config_.beta1) * g;
      v[k] = config_.beta2 * v[k] + (1.0 - config_.beta2) * g * g;
      const double m_hat = m[k] / bias1;
      const double v_hat = v[k] / bias2;
      p.value[k] -= config_.learning_rate * m_hat / (std::sqrt(v_hat) + config_.epsilon);
    }
  }
  return StepStatus::applied;
}

}  // namespace prefrl::diffcore
