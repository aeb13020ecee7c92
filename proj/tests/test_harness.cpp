#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "prefrl/harness/analysis.hpp"
#include "prefrl/harness/config.hpp"
#include "prefrl/harness/experiment.hpp"
#include "prefrl/harness/sweep.hpp"
#include "support.hpp"

using namespace prefrl;
using namespace prefrl::harness;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny(const std::string& task = "gridworld") {
  ExperimentConfig c;
  c.task = task;
  c.iterations = 4;
  c.steps_per_iteration = 60;
  c.feedback_every = 2;
  c.queries_per_session = 16;
  c.segment_length = 5;
  c.policy_steps = 5;
  c.reward_steps = 3;
  c.eval_every = 2;
  c.eval_episodes = 2;
  c.ensemble_size = 2;
  c.latent_dim = 2;
  c.encoder_hidden = {8};
  c.decoder_hidden = {8};
  c.pool = "5";
  c.actor_critic.hidden = {8};
  return c;
}

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("prefrl_test_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("config JSON round trip and validation") {
  ExperimentConfig c = tiny();
  c.phi = 7.5;
  c.ensemble_mode = "mean";
  c.tabular.learning_rate = 0.25;
  const auto back = config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));

  const auto partial = config_from_json(nlohmann::json{{"phi", 3.0}});
  CHECK(partial.phi == 3.0);
  CHECK(partial.ensemble_size == ExperimentConfig{}.ensemble_size);

  CHECK_THROWS(config_from_json(nlohmann::json{{"phii", 3.0}}));
  CHECK_THROWS(config_from_json(nlohmann::json{{"tabular", {{"rate", 1.0}}}}));
  CHECK_THROWS(config_from_json(nlohmann::json{{"phi", "high"}}));

  auto bad = tiny();
  bad.phi = -1.0;
  CHECK_THROWS(bad.validate());
  bad = tiny();
  bad.pool = "0";
  CHECK_THROWS(bad.validate());
  bad.pool = "many";
  CHECK_THROWS(bad.validate());
  bad = tiny();
  bad.ensemble_mode = "median";
  CHECK_THROWS(bad.validate());
  bad = tiny();
  bad.task = "cheetah";
  CHECK_THROWS(bad.validate());
  CHECK_NOTHROW(tiny().validate());
}

TEST_CASE("pool construction") {
  auto c = tiny();
  CHECK(make_pool(c).size() == 5);
  c.pool = "oracle";
  const auto oracle = make_pool(c);
  REQUIRE(oracle.size() == 1);
  CHECK(oracle.profiles[0] == annotators::AnnotatorProfile::oracle());
  c.pool = "human";
  CHECK_THROWS(make_pool(c));

  const auto dir = scratch_dir("pool_file");
  fs::create_directories(dir);
  const auto file = dir / "pool.json";
  std::ofstream(file) << R"([["inf", 1.0, 0.0, 0.0], [5.0, 0.9, 0.1, 0.05]])";
  c.pool_file = file.string();
  const auto loaded = make_pool(c);
  CHECK(loaded.size() == 2);
  CHECK(loaded.profiles[1].beta == 5.0);
  fs::remove_all(dir);
}

TEST_CASE("zero iterations produce an empty run") {
  auto c = tiny();
  c.iterations = 0;
  const auto r = run_experiment(c);
  CHECK(r.records.empty());
  CHECK(r.feedback_sessions == 0);
  CHECK(r.final_return() == 0.0);
}

TEST_CASE("feedback sessions happen every K iterations") {
  auto c = tiny();
  c.iterations = 5;
  c.feedback_every = 2;
  const auto r = run_experiment(c);
  // Sessions fall on iterations 0, 2 and 4. The first finds an empty replay
  // buffer, so only the later two label anything and train.
  CHECK(r.feedback_sessions == 2);
  CHECK(r.labels_collected == 2 * c.queries_per_session);
  REQUIRE(r.records.size() == 3);  // after iterations 2, 4 and the final one
  CHECK(r.records[0].iteration == 2);
  CHECK(r.records[2].iteration == 5);
  CHECK(r.records[2].env_steps == 5 * c.steps_per_iteration);
  CHECK(r.records[2].labels_collected == r.labels_collected);
  for (const auto& m : r.records) {
    CHECK(m.optimal_return.has_value());
    CHECK(m.eval_return <= *m.optimal_return + 1e-9);
    CHECK(m.member_kl.size() == 2);
    CHECK(m.probe_min <= m.probe_mean);
    CHECK(m.probe_mean <= m.probe_max);
  }
}

TEST_CASE("true-reward runs skip feedback") {
  auto c = tiny();
  c.reward_source = "true";
  const auto r = run_experiment(c);
  CHECK(r.feedback_sessions == 0);
  CHECK(r.labels_collected == 0);
}

TEST_CASE("runs are deterministic given the seed") {
  const auto a = scratch_dir("det_a");
  const auto b = scratch_dir("det_b");
  auto c = tiny();
  RunOptions oa, ob;
  oa.run_dir = a;
  ob.run_dir = b;
  run_experiment(c, oa);
  run_experiment(c, ob);
  CHECK(read_file(a / "metrics.csv") == read_file(b / "metrics.csv"));
  CHECK(read_file(a / "preferences.jsonl") == read_file(b / "preferences.jsonl"));
  CHECK(fs::exists(a / "config.json"));
  CHECK(fs::exists(a / "events.log"));
  CHECK(fs::exists(a / "pool.json"));
  CHECK(fs::exists(a / "ensemble" / "manifest.json"));
  CHECK(fs::exists(a / "policy.ckpt"));
  CHECK(config_from_json(nlohmann::json::parse(read_file(a / "config.json"))).seed == c.seed);

  c.seed = 2;
  RunOptions oc;
  oc.run_dir = scratch_dir("det_c");
  run_experiment(c, oc);
  CHECK(read_file(a / "preferences.jsonl") != read_file(oc.run_dir / "preferences.jsonl"));
  for (const auto& d : {a, b, oc.run_dir}) fs::remove_all(d);
}

TEST_CASE("metrics rows line up with the header") {
  auto c = tiny("pointmass");
  const auto r = run_experiment(c);
  REQUIRE_FALSE(r.records.empty());
  const auto count = [](const std::string& s) { return std::count(s.begin(), s.end(), ','); };
  CHECK(count(metrics_row(r.records.back())) == count(metrics_header()));
  CHECK_FALSE(r.records.back().optimal_return.has_value());
  CHECK(r.records.back().success_rate >= 0.0);
  CHECK(r.records.back().success_rate <= 1.0);
}

TEST_CASE("human pool needs an annotation service") {
  auto c = tiny();
  c.pool = "human";
  CHECK_THROWS(run_experiment(c));
}

TEST_CASE("sweeps record failures and keep going") {
  const auto dir = scratch_dir("sweep");
  auto c = tiny();
  c.iterations = 2;
  const auto result = sweep(c, "pool_size", {"3", "human"}, {1, 2}, dir);
  REQUIRE(result.runs.size() == 4);
  CHECK(result.runs[0].ok);
  CHECK(result.runs[1].ok);
  CHECK_FALSE(result.runs[2].ok);
  CHECK_FALSE(result.runs[2].error.empty());
  REQUIRE(result.summary.size() == 2);
  CHECK(result.summary[0].completed == 2);
  CHECK(result.summary[1].completed == 0);
  CHECK(fs::exists(dir / "sweep.csv"));
  CHECK(fs::exists(dir / "curves.csv"));
  CHECK(fs::exists(dir / "pool_size=3" / "seed_1" / "metrics.csv"));
  CHECK(read_file(dir / "sweep.csv").find("failed") != std::string::npos);

  CHECK_THROWS(sweep(c, "phi", {"abc"}, {1}));
  CHECK_THROWS(sweep(c, "temperature", {"1"}, {1}));
  CHECK_THROWS(sweep(c, "phi", {}, {1}));
  CHECK(apply_axis(c, "ensemble_mode", "single").members() == 1);
  fs::remove_all(dir);
}

TEST_CASE("PCA recovers a planted plane") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor pts = Tensor::zeros(500, 4);
  for (std::size_t i = 0; i < 500; ++i) {
    const double a = 3.0 * n(rng), b = 1.0 * n(rng);
    pts(i, 0) = a;
    pts(i, 1) = b;
    pts(i, 2) = 0.01 * n(rng);
    pts(i, 3) = 5.0;
  }
  const auto p = pca_2d(pts);
  CHECK(p.coords.rows() == 500);
  CHECK(p.coords.cols() == 2);
  CHECK(p.variances[0] >= p.variances[1]);
  CHECK(p.variances[0] == doctest::Approx(9.0).epsilon(0.15));
  CHECK(p.variances[1] == doctest::Approx(1.0).epsilon(0.15));
  // The first coordinate is the first column up to sign and centering.
  CHECK(std::abs(p.coords(0, 0)) == doctest::Approx(std::abs(pts(0, 0) - 0.0)).epsilon(0.2));
}

TEST_CASE("spread of identical points is zero") {
  Tensor same = Tensor::zeros(10, 3);
  for (std::size_t i = 0; i < 10; ++i) {
    same(i, 0) = 1.0;
    same(i, 2) = -2.0;
  }
  CHECK(spread(same) == 0.0);
  Tensor two = Tensor::zeros(2, 1);
  two(0, 0) = -1.0;
  two(1, 0) = 1.0;
  CHECK(spread(two) == doctest::Approx(1.0));
}

TEST_CASE("spearman correlation") {
  const std::vector<double> a{1, 2, 3, 4, 5};
  const std::vector<double> b{10, 20, 30, 40, 50};
  const std::vector<double> c{5, 4, 3, 2, 1};
  CHECK(spearman(a, b) == doctest::Approx(1.0));
  CHECK(spearman(a, c) == doctest::Approx(-1.0));
  const std::vector<double> squared{1, 4, 9, 16, 25};
  CHECK(spearman(a, squared) == doctest::Approx(1.0));
  // Ties use average ranks: ranks of {1,1,2} are {1.5,1.5,3}.
  const std::vector<double> t1{1, 1, 2}, t2{1, 2, 3};
  CHECK(spearman(t1, t2) == doctest::Approx(std::sqrt(0.75)));
  CHECK_THROWS(spearman(std::vector<double>{1, 2}, std::vector<double>{1}));
}

TEST_CASE("synthetic preferences and label flips") {
  envs::GridWorld g;
  const auto a = synthetic_preferences(g, 64, 5, 3);
  const auto b = synthetic_preferences(g, 64, 5, 3);
  REQUIRE(a.size() == 64);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].label == b[i].label);
    CHECK(a[i].first.length() == 5);
    const double r0 = a[i].first.true_return(), r1 = a[i].second.true_return();
    if (r0 > r1) CHECK(a[i].label == Label::prefer_first());
    if (r0 < r1) CHECK(a[i].label == Label::prefer_second());
    if (r0 == r1) CHECK(a[i].label.is_tie());
  }
  const auto flipped = flip_labels(a, 1.0, 4);
  const auto kept = flip_labels(a, 0.0, 4);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(flipped[i].label == a[i].label.flipped());
    CHECK(kept[i].label == a[i].label);
  }
}

TEST_CASE("range and latent analysis") {
  envs::PointMass p;
  const auto probes = make_probe_set(p);
  CHECK(probes.rows.rows() == probes.true_rewards.size());
  reward::RewardModelConfig mc;
  mc.input_dim = p.feature_dim();
  mc.latent_dim = 2;
  mc.encoder_hidden = {8};
  mc.decoder_hidden = {8};
  ensemble::RewardEnsemble e1(mc, 2, 5), e2(mc, 2, 6);
  const auto ranges = analyze_reward_range({{1.0, &e1}, {100.0, &e2}}, probes.rows, 10);
  CHECK(ranges.bin_edges.size() == 11);
  REQUIRE(ranges.entries.size() == 2);
  for (const auto& e : ranges.entries) {
    CHECK(e.range == doctest::Approx(e.max - e.min));
    std::size_t total = 0;
    for (auto h : e.histogram) total += h;
    CHECK(total == probes.rows.rows());
  }
  const auto latents = analyze_latents(e1, probes.rows);
  CHECK(latents.projections.size() == 2);
  CHECK(latents.member_spread.size() == 2);
  CHECK(latents.mean_kl >= 0.0);

  const auto dir = scratch_dir("analysis");
  write_analysis(dir, ranges, {{1.0, latents}, {100.0, analyze_latents(e2, probes.rows)}});
  for (const char* f : {"range.csv", "range_histogram.csv", "latents.csv", "latent_summary.csv"}) {
    CHECK(fs::exists(dir / f));
  }
  fs::remove_all(dir);

  envs::GridWorld g;
  CHECK_THROWS(analyze_reward_range({{1.0, &e1}}, make_probe_set(g).rows));
}

}  // TEST_SUITE
