#pragma once

#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "prefrl/envs.hpp"
#include "prefrl/types.hpp"

namespace prefrl::annotators {

inline constexpr double kInfiniteBeta = std::numeric_limits<double>::infinity();

/// Which end of the segment the myopia discount favours.
enum class DiscountOrder {
  late_steps,   // gamma^(H-t): the last step has weight 1
  early_steps,  // gamma^(t-1): the first step has weight 1
};

/// Bounded-rational scripted teacher <beta, gamma, epsilon, delta_equal>.
struct AnnotatorProfile {
  double beta = kInfiniteBeta;  // rationality; infinity means deterministic argmax
  double gamma = 1.0;           // myopia discount, (0, 1]
  double epsilon = 0.0;         // flip probability, [0, 0.5)
  double delta_equal = 0.0;     // tie threshold on normalized returns, >= 0

  static AnnotatorProfile oracle() { return {}; }
  void validate() const;
  friend bool operator==(const AnnotatorProfile&, const AnnotatorProfile&) = default;
};

struct AnnotatorPool {
  std::vector<AnnotatorProfile> profiles;
  DiscountOrder discount_order = DiscountOrder::late_steps;

  std::size_t size() const { return profiles.size(); }
};

/// M profiles with beta from {inf, 1, 5}, gamma ~ U(0.8,1), epsilon ~ U(0,0.2), delta ~ U(0,0.2).
AnnotatorPool sample_pool(std::size_t count, std::uint64_t seed);
AnnotatorPool oracle_pool();

double discounted_return(const AnnotatorProfile& profile, const Segment& segment,
                         DiscountOrder order = DiscountOrder::late_steps);

/// Labels one query: tie check on normalized undiscounted returns, then a
/// Bradley-Terry draw on discounted returns scaled by beta, then an epsilon flip
/// of non-tie labels. Consumes exactly two uniforms from `rng`.
Label annotate(const AnnotatorProfile& profile, const Segment& first, const Segment& second,
               const envs::NormalizationStats& stats, std::mt19937_64& rng,
               DiscountOrder order = DiscountOrder::late_steps);

/// One uniformly drawn annotator per query; output order follows the input.
std::vector<PreferenceTriple> label_batch(const AnnotatorPool& pool,
                                          std::span<const std::pair<Segment, Segment>> queries,
                                          const envs::NormalizationStats& stats, std::mt19937_64& rng);

/// [[beta, gamma, epsilon, delta_equal], ...] with infinite beta written as "inf".
nlohmann::json pool_to_json(const AnnotatorPool& pool);
AnnotatorPool pool_from_json(const nlohmann::json& j);

}  // namespace prefrl::annotators
