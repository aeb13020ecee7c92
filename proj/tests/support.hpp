#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "prefrl/diffcore/tape.hpp"
#include "prefrl/types.hpp"

namespace testing {

using prefrl::Tensor;

inline Tensor random_tensor(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t = Tensor::zeros(rows, cols);
  for (auto& v : t.values()) v = n(rng);
  return t;
}

/// Agreement rule for gradient checks: relative 1e-4 with a 1e-7 absolute floor.
inline bool grad_close(double analytic, double numeric, double rel = 1e-4, double abs_floor = 1e-7) {
  const double diff = std::abs(analytic - numeric);
  return diff <= abs_floor || diff <= rel * std::max(std::abs(analytic), std::abs(numeric));
}

struct GradMismatch {
  std::size_t checked = 0;
  std::size_t failed = 0;
  double worst_rel = 0.0;
};

/// Central differences (step h) of `loss` with respect to every coordinate of
/// `values`, compared with `analytic`. `values` is perturbed in place and restored.
inline GradMismatch finite_difference_check(std::vector<Tensor*> values, const std::vector<Tensor>& analytic,
                                            const std::function<double()>& loss, double h = 1e-5) {
  GradMismatch out;
  for (std::size_t p = 0; p < values.size(); ++p) {
    Tensor& v = *values[p];
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double orig = v[i];
      v[i] = orig + h;
      const double up = loss();
      v[i] = orig - h;
      const double down = loss();
      v[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[p][i];
      ++out.checked;
      if (!grad_close(a, numeric)) {
        ++out.failed;
        out.worst_rel = std::max(out.worst_rel, std::abs(a - numeric) / std::max(std::abs(a), std::abs(numeric)));
      }
    }
  }
  return out;
}

/// Segment with the given per-step true rewards and one-row features per step.
inline prefrl::Segment make_segment(const std::vector<double>& rewards, const Tensor& features = {}) {
  prefrl::Segment s;
  const std::size_t h = rewards.size();
  s.states = Tensor::zeros(h, 1);
  s.actions.assign(h, 0);
  s.true_rewards = rewards;
  s.features = features.size() == 0 ? Tensor::zeros(h, 1) : features;
  return s;
}

}  // namespace testing
