#include "prefrl/harness/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <stdexcept>

#include <Eigen/Eigenvalues>

#include "prefrl/annotators.hpp"

namespace prefrl::harness {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const RowMatrix> as_matrix(const Tensor& t) {
  return {t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

}  // namespace

ProbeSet make_probe_set(const envs::Task& task) {
  const auto probes = task.probe_set();
  ProbeSet out;
  out.rows = Tensor::zeros(probes.size(), task.feature_dim());
  for (std::size_t i = 0; i < probes.size(); ++i) {
    const auto f = task.features(probes[i].first, probes[i].second);
    std::copy(f.begin(), f.end(), out.rows.data() + i * task.feature_dim());
    out.true_rewards.push_back(task.step(probes[i].first, probes[i].second).true_reward);
  }
  return out;
}

RewardRangeReport analyze_reward_range(const std::vector<std::pair<double, const ensemble::RewardEnsemble*>>& runs,
                                       const Tensor& probes, std::size_t bins, ensemble::Aggregation mode) {
  if (bins == 0) throw std::invalid_argument("histogram needs at least one bin");
  std::vector<std::vector<double>> rewards;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& [phi, ens] : runs) {
    if (ens->input_dim() != probes.cols()) {
      throw std::invalid_argument("probe width " + std::to_string(probes.cols()) + " does not match ensemble input " +
                                  std::to_string(ens->input_dim()));
    }
    rewards.push_back(ensemble::ensemble_reward(*ens, probes, mode));
    const auto [mn, mx] = std::minmax_element(rewards.back().begin(), rewards.back().end());
    lo = std::min(lo, *mn);
    hi = std::max(hi, *mx);
  }
  RewardRangeReport report;
  if (runs.empty()) return report;
  if (hi == lo) hi = lo + 1.0;
  for (std::size_t b = 0; b <= bins; ++b) {
    report.bin_edges.push_back(lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(bins));
  }
  for (std::size_t i = 0; i < runs.size(); ++i) {
    RewardRange r;
    r.phi = runs[i].first;
    const auto [mn, mx] = std::minmax_element(rewards[i].begin(), rewards[i].end());
    r.min = *mn;
    r.max = *mx;
    r.range = r.max - r.min;
    r.histogram.assign(bins, 0);
    for (double v : rewards[i]) {
      auto b = static_cast<std::size_t>((v - lo) / (hi - lo) * static_cast<double>(bins));
      ++r.histogram[std::min(b, bins - 1)];
    }
    report.entries.push_back(std::move(r));
  }
  return report;
}

Projection pca_2d(const Tensor& points) {
  const auto x = as_matrix(points);
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  Projection out;
  out.coords = Tensor::zeros(static_cast<std::size_t>(n), 2);
  out.variances.assign(2, 0.0);
  if (n == 0) return out;
  const RowMatrix centered = x.rowwise() - x.colwise().mean();
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  // Eigenvalues come back ascending.
  for (Eigen::Index k = 0; k < std::min<Eigen::Index>(2, d); ++k) {
    const Eigen::Index col = d - 1 - k;
    Eigen::VectorXd axis = solver.eigenvectors().col(col);
    // Fix the sign so the projection is reproducible.
    Eigen::Index pivot = 0;
    axis.cwiseAbs().maxCoeff(&pivot);
    if (axis(pivot) < 0) axis = -axis;
    const Eigen::VectorXd proj = centered * axis;
    for (Eigen::Index i = 0; i < n; ++i) out.coords(static_cast<std::size_t>(i), static_cast<std::size_t>(k)) = proj(i);
    out.variances[static_cast<std::size_t>(k)] = std::max(0.0, solver.eigenvalues()(col));
  }
  return out;
}

double spread(const Tensor& points) {
  const auto x = as_matrix(points);
  if (x.rows() == 0) return 0.0;
  const Eigen::RowVectorXd centroid = x.colwise().mean();
  return (x.rowwise() - centroid).rowwise().norm().mean();
}

LatentReport analyze_latents(const ensemble::RewardEnsemble& ens, const Tensor& probes) {
  if (probes.rows() == 0) throw std::invalid_argument("probe set is empty");
  LatentReport report;
  double kl_sum = 0.0;
  for (std::size_t m = 0; m < ens.size(); ++m) {
    const auto g = ens.model(m).encode(probes);
    report.projections.push_back(pca_2d(g.mean));
    report.member_spread.push_back(spread(g.mean));
    const auto kl = reward::kl_to_standard(g);
    kl_sum += std::accumulate(kl.begin(), kl.end(), 0.0) / static_cast<double>(kl.size());
  }
  report.spread = std::accumulate(report.member_spread.begin(), report.member_spread.end(), 0.0) /
                  static_cast<double>(ens.size());
  report.mean_kl = kl_sum / static_cast<double>(ens.size());
  return report;
}

std::vector<PreferenceTriple> synthetic_preferences(const envs::Task& task, std::size_t pairs,
                                                    std::size_t segment_length, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, static_cast<int>(task.num_actions()) - 1);
  // Enough short episodes that segments start all over the state space.
  const std::size_t episode_length = std::min<std::size_t>(task.episode_length(), 4 * segment_length);
  const std::size_t episodes = std::max<std::size_t>(8, pairs / 4);
  envs::ReplayBuffer buffer(episodes * episode_length);
  for (std::size_t e = 0; e < episodes; ++e) {
    auto state = task.initial_state(rng);
    for (std::size_t t = 0; t < episode_length; ++t) {
      auto tr = task.step(state, pick(rng));
      tr.episode_id = e;
      tr.t = t;
      state = tr.next_state;
      buffer.push(std::move(tr));
    }
  }
  const auto queries = envs::sample_query_pairs(buffer, pairs, segment_length, rng);
  envs::NormalizationStats stats;
  for (const auto& [a, b] : queries) {
    stats.observe(a.true_return());
    stats.observe(b.true_return());
  }
  return annotators::label_batch(annotators::oracle_pool(), queries, stats, rng);
}

std::vector<PreferenceTriple> flip_labels(std::vector<PreferenceTriple> triples, double probability,
                                          std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution flip(probability);
  for (auto& t : triples) {
    if (flip(rng) && !t.label.is_tie()) t.label = t.label.flipped();
  }
  return triples;
}

ensemble::RewardEnsemble train_on_fixed_set(const reward::RewardModelConfig& model, std::size_t members,
                                            std::uint64_t seed, const std::vector<PreferenceTriple>& triples,
                                            const reward::TrainingConfig& training, std::size_t steps) {
  ensemble::RewardEnsemble ens(model, members, seed, training.adam);
  envs::PreferenceBuffer buffer;
  buffer.append(triples);
  ensemble::train_ensemble(ens, buffer, training, steps);
  return ens;
}

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("spearman needs equal-length inputs");
  if (a.size() < 2) throw std::invalid_argument("spearman needs at least two points");
  auto ranks = [](std::span<const double> v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < order.size();) {
      std::size_t j = i;
      while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto ra = ranks(a);
  const auto rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) return 0.0;
  return cov / std::sqrt(va * vb);
}

void write_analysis(const std::filesystem::path& dir, const RewardRangeReport& ranges,
                    const std::vector<std::pair<double, LatentReport>>& latents) {
  std::filesystem::create_directories(dir);
  std::ofstream range(dir / "range.csv");
  range << std::setprecision(10) << "phi,min,max,range\n";
  for (const auto& e : ranges.entries) range << e.phi << ',' << e.min << ',' << e.max << ',' << e.range << '\n';

  std::ofstream hist(dir / "range_histogram.csv");
  hist << std::setprecision(10) << "phi,bin_lo,bin_hi,count\n";
  for (const auto& e : ranges.entries) {
    for (std::size_t b = 0; b < e.histogram.size(); ++b) {
      hist << e.phi << ',' << ranges.bin_edges[b] << ',' << ranges.bin_edges[b + 1] << ',' << e.histogram[b] << '\n';
    }
  }

  std::ofstream lat(dir / "latents.csv");
  lat << std::setprecision(10) << "phi,member,index,pc1,pc2\n";
  std::ofstream summary(dir / "latent_summary.csv");
  summary << std::setprecision(10) << "phi,spread,mean_kl\n";
  for (const auto& [phi, report] : latents) {
    summary << phi << ',' << report.spread << ',' << report.mean_kl << '\n';
    for (std::size_t m = 0; m < report.projections.size(); ++m) {
      const auto& c = report.projections[m].coords;
      for (std::size_t i = 0; i < c.rows(); ++i) lat << phi << ',' << m << ',' << i << ',' << c(i, 0) << ',' << c(i, 1) << '\n';
    }
  }
}

}  // namespace prefrl::harness
