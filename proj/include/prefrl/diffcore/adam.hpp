#pragma once

#include <cstddef>
#include <vector>

#include "prefrl/diffcore/tape.hpp"

namespace prefrl::diffcore {

struct AdamConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

enum class StepStatus { applied, rejected_non_finite };

/// Adaptive-moment optimizer. Moment buffers are bound to parameter order,
/// so every call must pass the same parameter list.
class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamConfig config) : config_(config) {}

  StepStatus step(const std::vector<Parameter*>& params);

  std::size_t step_count() const { return step_count_; }
  std::size_t rejected_count() const { return rejected_count_; }
  const AdamConfig& config() const { return config_; }
  void set_learning_rate(double lr) { config_.learning_rate = lr; }

 private:
  AdamConfig config_;
  std::vector<Tensor> first_moment_;
  std::vector<Tensor> second_moment_;
  std::size_t step_count_ = 0;
  std::size_t rejected_count_ = 0;
};

}  // namespace prefrl::diffcore
