#include "prefrl/annotators.hpp"

#include <cmath>
#include <stdexcept>

namespace prefrl::annotators {

void AnnotatorProfile::validate() const {
  if (!(beta > 0.0)) throw std::invalid_argument("beta must be positive or infinity");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("gamma must lie in (0, 1]");
  if (!(epsilon >= 0.0 && epsilon < 0.5)) throw std::invalid_argument("epsilon must lie in [0, 0.5)");
  if (!(delta_equal >= 0.0) || !std::isfinite(delta_equal)) {
    throw std::invalid_argument("delta_equal must be a nonnegative real");
  }
}

AnnotatorPool sample_pool(std::size_t count, std::uint64_t seed) {
  if (count == 0) throw std::invalid_argument("annotator pool needs at least one member");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> beta_kind(0, 2);
  std::uniform_real_distribution<double> gamma(0.8, 1.0);
  std::uniform_real_distribution<double> small(0.0, 0.2);
  AnnotatorPool pool;
  pool.profiles.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    static constexpr double betas[3] = {kInfiniteBeta, 1.0, 5.0};
    AnnotatorProfile p;
    p.beta = betas[beta_kind(rng)];
    p.gamma = gamma(rng);
    p.epsilon = small(rng);
    p.delta_equal = small(rng);
    pool.profiles.push_back(p);
  }
  return pool;
}

AnnotatorPool oracle_pool() { return AnnotatorPool{{AnnotatorProfile::oracle()}, DiscountOrder::late_steps}; }

double discounted_return(const AnnotatorProfile& profile, const Segment& segment, DiscountOrder order) {
  const std::size_t h = segment.length();
  double total = 0.0;
  for (std::size_t i = 0; i < h; ++i) {
    // i is t-1 for t = 1..H
    const double exponent = order == DiscountOrder::late_steps ? static_cast<double>(h - 1 - i) : static_cast<double>(i);
    total += std::pow(profile.gamma, exponent) * segment.true_rewards[i];
  }
  return total;
}

Label annotate(const AnnotatorProfile& profile, const Segment& first, const Segment& second,
               const envs::NormalizationStats& stats, std::mt19937_64& rng, DiscountOrder order) {
  if (first.length() != second.length()) {
    throw std::invalid_argument("annotated segments differ in length");
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double choice_draw = unit(rng);
  const double flip_draw = unit(rng);

  if (stats.normalized_gap(first.true_return(), second.true_return()) <= profile.delta_equal) return Label::equal();

  const double r0 = discounted_return(profile, first, order);
  const double r1 = discounted_return(profile, second, order);
  Label label;
  if (std::isinf(profile.beta)) {
    if (r0 == r1) return Label::equal();
    label = r1 > r0 ? Label::prefer_second() : Label::prefer_first();
  } else {
    // P[second > first] = exp(b r1) / (exp(b r0) + exp(b r1)) = logistic(b (r1 - r0)).
    const double d = profile.beta * (r1 - r0);
    const double p_second = d >= 0.0 ? 1.0 / (1.0 + std::exp(-d)) : std::exp(d) / (1.0 + std::exp(d));
    label = choice_draw < p_second ? Label::prefer_second() : Label::prefer_first();
  }
  if (flip_draw < profile.epsilon) label = label.flipped();
  return label;
}

std::vector<PreferenceTriple> label_batch(const AnnotatorPool& pool,
                                          std::span<const std::pair<Segment, Segment>> queries,
                                          const envs::NormalizationStats& stats, std::mt19937_64& rng) {
  std::vector<PreferenceTriple> out;
  if (queries.empty()) return out;
  if (pool.profiles.empty()) throw std::invalid_argument("cannot label with an empty pool");
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  out.reserve(queries.size());
  for (const auto& [first, second] : queries) {
    const std::size_t who = pick(rng);
    PreferenceTriple t{first, second, annotate(pool.profiles[who], first, second, stats, rng, pool.discount_order),
                       static_cast<int>(who)};
    out.push_back(std::move(t));
  }
  return out;
}

nlohmann::json pool_to_json(const AnnotatorPool& pool) {
  auto arr = nlohmann::json::array();
  for (const auto& p : pool.profiles) {
    nlohmann::json beta = std::isinf(p.beta) ? nlohmann::json("inf") : nlohmann::json(p.beta);
    arr.push_back({beta, p.gamma, p.epsilon, p.delta_equal});
  }
  return arr;
}

AnnotatorPool pool_from_json(const nlohmann::json& j) {
  AnnotatorPool pool;
  for (const auto& e : j) {
    if (!e.is_array() || e.size() != 4) throw std::invalid_argument("annotator entry must be a 4-tuple");
    AnnotatorProfile p;
    if (e[0].is_string()) {
      if (e[0].get<std::string>() != "inf") throw std::invalid_argument("beta string must be \"inf\"");
      p.beta = kInfiniteBeta;
    } else {
      p.beta = e[0].get<double>();
    }
    p.gamma = e[1].get<double>();
    p.epsilon = e[2].get<double>();
    p.delta_equal = e[3].get<double>();
    p.validate();
    pool.profiles.push_back(p);
  }
  if (pool.profiles.empty()) throw std::invalid_argument("annotator pool is empty");
  return pool;
}

}  // namespace prefrl::annotators
