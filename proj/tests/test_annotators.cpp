#include <doctest.h>

#include <cmath>
#include <set>

#include "prefrl/annotators.hpp"
#include "support.hpp"

using namespace prefrl;
using namespace prefrl::annotators;
using testing::make_segment;

namespace {

envs::NormalizationStats unit_stats() {
  envs::NormalizationStats s;
  s.observe(0.0);
  s.observe(1.0);
  return s;
}

bool within_3_sigma(double count, double n, double p) {
  return std::abs(count - n * p) <= 3.0 * std::sqrt(n * p * (1.0 - p));
}

}  // namespace

TEST_SUITE("annotators") {

TEST_CASE("pool sampling follows the declared distributions") {
  const auto pool = sample_pool(100, 5);
  CHECK(pool.size() == 100);
  for (const auto& p : pool.profiles) {
    CHECK((std::isinf(p.beta) || p.beta == 1.0 || p.beta == 5.0));
    CHECK(p.gamma >= 0.8);
    CHECK(p.gamma < 1.0);
    CHECK(p.epsilon >= 0.0);
    CHECK(p.epsilon < 0.2);
    CHECK(p.delta_equal >= 0.0);
    CHECK(p.delta_equal < 0.2);
  }
  CHECK(sample_pool(1, 5).size() == 1);
  CHECK_THROWS(sample_pool(0, 5));
  CHECK(sample_pool(10, 9).profiles == sample_pool(10, 9).profiles);

  const auto big = sample_pool(10000, 6);
  double inf = 0, one = 0, five = 0;
  for (const auto& p : big.profiles) {
    if (std::isinf(p.beta)) ++inf;
    else if (p.beta == 1.0) ++one;
    else ++five;
  }
  for (double c : {inf, one, five}) CHECK(within_3_sigma(c, 10000, 1.0 / 3.0));
}

TEST_CASE("discounted return weights late steps by default") {
  AnnotatorProfile p;
  p.gamma = 0.5;
  const auto s = make_segment({1.0, 1.0});
  CHECK(discounted_return(p, s) == doctest::Approx(1.5));
  const auto ramp = make_segment({1.0, 0.0, 0.0});
  CHECK(discounted_return(p, ramp) == doctest::Approx(0.25));
  CHECK(discounted_return(p, ramp, DiscountOrder::early_steps) == doctest::Approx(1.0));
  p.gamma = 1.0;
  CHECK(discounted_return(p, make_segment({0.5, -2.0, 3.0})) == doctest::Approx(1.5));
  CHECK(discounted_return(p, make_segment({0.0, 0.0})) == 0.0);
}

TEST_CASE("oracle labels follow the true ordering") {
  std::mt19937_64 rng(1);
  const auto stats = unit_stats();
  const auto oracle = AnnotatorProfile::oracle();
  CHECK(annotate(oracle, make_segment({0.5, 0.5}), make_segment({0.25, 0.25}), stats, rng) == Label::prefer_first());
  CHECK(annotate(oracle, make_segment({0.1}), make_segment({0.9}), stats, rng) == Label::prefer_second());
  CHECK(annotate(oracle, make_segment({0.3}), make_segment({0.3}), stats, rng) == Label::equal());
  CHECK_THROWS(annotate(oracle, make_segment({0.3}), make_segment({0.3, 0.1}), stats, rng));
}

TEST_CASE("tie threshold on normalized returns") {
  std::mt19937_64 rng(2);
  AnnotatorProfile p;
  p.delta_equal = 0.2;
  p.epsilon = 0.49;  // ties are never flipped
  const auto stats = unit_stats();
  for (int i = 0; i < 100; ++i) {
    CHECK(annotate(p, make_segment({1.0}), make_segment({0.9}), stats, rng) == Label::equal());
  }
  p.delta_equal = 0.05;
  p.epsilon = 0.0;
  CHECK(annotate(p, make_segment({1.0}), make_segment({0.9}), stats, rng) == Label::prefer_first());
}

TEST_CASE("near-zero beta gives coin flips") {
  std::mt19937_64 rng(3);
  AnnotatorProfile p;
  p.beta = 1e-9;
  const auto stats = unit_stats();
  const auto a = make_segment({1.0, 1.0}), b = make_segment({0.0, 0.0});
  int first = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) first += annotate(p, a, b, stats, rng) == Label::prefer_first();
  CHECK(within_3_sigma(first, n, 0.5));
}

TEST_CASE("flip rate matches epsilon") {
  std::mt19937_64 rng(4);
  AnnotatorProfile p;
  p.epsilon = 0.15;
  const auto stats = unit_stats();
  const auto a = make_segment({1.0}), b = make_segment({0.0});
  int flipped = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) flipped += annotate(p, a, b, stats, rng) == Label::prefer_second();
  CHECK(within_3_sigma(flipped, n, 0.15));
}

TEST_CASE("finite beta matches the logistic choice probability") {
  std::mt19937_64 rng(5);
  AnnotatorProfile p;
  p.beta = 1.0;
  const auto stats = unit_stats();
  const auto a = make_segment({0.0}), b = make_segment({1.0});
  const double expected = 1.0 / (1.0 + std::exp(-1.0));
  int second = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) second += annotate(p, a, b, stats, rng) == Label::prefer_second();
  CHECK(within_3_sigma(second, n, expected));
}

TEST_CASE("every label is valid and each call takes two uniforms") {
  std::mt19937_64 rng(6);
  const auto pool = sample_pool(20, 7);
  const auto stats = unit_stats();
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 2000; ++i) {
    const auto a = make_segment({u(rng), u(rng)}), b = make_segment({u(rng), u(rng)});
    std::mt19937_64 r1(i), r2(i);
    const auto y = annotate(pool.profiles[i % 20], a, b, stats, r1);
    CHECK(y.is_valid());
    r2.discard(2);
    CHECK(r1() == r2());
  }
}

TEST_CASE("swapping the segments swaps the label distribution") {
  const auto pool = sample_pool(30, 8);
  const auto stats = unit_stats();
  std::mt19937_64 seg_rng(9);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 300; ++i) {
    const auto& p = pool.profiles[i % 30];
    const auto a = make_segment({u(seg_rng), u(seg_rng), u(seg_rng)});
    const auto b = make_segment({u(seg_rng), u(seg_rng), u(seg_rng)});
    // With finite beta, P[second wins] and P[first wins] use the same logistic,
    // so u -> 1 - u on the choice draw maps one onto the other. For argmax and
    // tie decisions the draws do not matter, so the same stream works.
    std::mt19937_64 r1(i), r2(i);
    const auto y = annotate(p, a, b, stats, r1);
    const auto y_swapped = annotate(p, b, a, stats, r2);
    if (std::isinf(p.beta) || y.is_tie()) {
      CHECK(y_swapped == y.flipped());
    }
  }
}

TEST_CASE("tie rate grows with the threshold") {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::pair<Segment, Segment>> queries;
  envs::NormalizationStats stats;
  for (int i = 0; i < 2000; ++i) {
    queries.emplace_back(make_segment({u(rng)}), make_segment({u(rng)}));
    stats.observe(queries.back().first.true_return());
    stats.observe(queries.back().second.true_return());
  }
  double last = -1.0;
  for (double delta : {0.0, 0.05, 0.1, 0.15, 0.2}) {
    AnnotatorPool pool{{AnnotatorProfile{kInfiniteBeta, 1.0, 0.0, delta}}};
    std::mt19937_64 r(11);
    const auto labels = label_batch(pool, queries, stats, r);
    double ties = 0;
    for (const auto& t : labels) ties += t.label.is_tie();
    CHECK(ties / labels.size() > last);
    last = ties / labels.size();
  }
}

TEST_CASE("batch labelling picks annotators uniformly") {
  AnnotatorPool pool{{AnnotatorProfile::oracle(), AnnotatorProfile::oracle()}};
  std::vector<std::pair<Segment, Segment>> queries(10000, {make_segment({1.0}), make_segment({0.0})});
  std::mt19937_64 rng(12);
  const auto labels = label_batch(pool, queries, unit_stats(), rng);
  REQUIRE(labels.size() == 10000);
  double first = 0;
  for (const auto& t : labels) {
    first += t.annotator == 0;
    CHECK(t.label == Label::prefer_first());
  }
  CHECK(within_3_sigma(first, 10000, 0.5));
  CHECK(label_batch(pool, {}, unit_stats(), rng).empty());
}

TEST_CASE("pool serialization round trip") {
  const auto pool = sample_pool(12, 13);
  const auto j = pool_to_json(pool);
  bool saw_inf = false;
  for (const auto& row : j) saw_inf |= row[0].is_string() && row[0] == "inf";
  CHECK(saw_inf);
  CHECK(pool_from_json(j).profiles == pool.profiles);
  CHECK_THROWS(pool_from_json(nlohmann::json::parse(R"([[1.0, 1.5, 0.0, 0.0]])")));
}

}  // TEST_SUITE
