#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "prefrl/diffcore/tensor.hpp"

namespace prefrl {

using diffcore::Tensor;

/// Preference label y = (y0, y1). Only (1,0), (0,1) and (0.5,0.5) are valid.
struct Label {
  double first = 0.5;
  double second = 0.5;

  static Label prefer_first() { return {1.0, 0.0}; }
  static Label prefer_second() { return {0.0, 1.0}; }
  static Label equal() { return {0.5, 0.5}; }

  bool is_tie() const { return first == 0.5 && second == 0.5; }
  bool is_valid() const;
  Label flipped() const { return {second, first}; }
  std::string name() const;  // "left" | "right" | "equal"

  friend bool operator==(const Label&, const Label&) = default;
};

/// Throws std::invalid_argument unless the label is one of the three valid values.
void validate(const Label& label);

/// A contiguous length-H slice of one episode.
struct Segment {
  Tensor states;                     // H x state_dim
  std::vector<int> actions;          // H
  std::vector<double> true_rewards;  // H, hidden from the reward model
  Tensor features;                   // H x feature_dim, reward-model input rows
  std::uint64_t episode_id = 0;
  std::size_t start_t = 0;

  std::size_t length() const { return actions.size(); }
  double true_return() const;
};

struct PreferenceTriple {
  Segment first;   // sigma^0, shown on the left
  Segment second;  // sigma^1, shown on the right
  Label label;
  int annotator = -1;  // pool index, -1 for human labels
};

}  // namespace prefrl
