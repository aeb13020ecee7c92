#include "prefrl/types.hpp"

#include <numeric>
#include <stdexcept>

namespace prefrl {

bool Label::is_valid() const {
  return *this == prefer_first() || *this == prefer_second() || *this == equal();
}

std::string Label::name() const {
  if (*this == prefer_first()) return "left";
  if (*this == prefer_second()) return "right";
  if (*this == equal()) return "equal";
  return "invalid";
}

void validate(const Label& label) {
  if (!label.is_valid()) {
    throw std::invalid_argument("malformed preference label (" + std::to_string(label.first) + ", " +
                                std::to_string(label.second) + ")");
  }
}

double Segment::true_return() const { return std::accumulate(true_rewards.begin(), true_rewards.end(), 0.0); }

}  // namespace prefrl
