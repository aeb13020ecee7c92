#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "prefrl/ensemble.hpp"
#include "prefrl/envs.hpp"
#include "prefrl/harness/config.hpp"

namespace prefrl::harness {

/// Probe rows for a task plus the ground-truth reward of each (state, action).
struct ProbeSet {
  Tensor rows;
  std::vector<double> true_rewards;
};
ProbeSet make_probe_set(const envs::Task& task);

struct RewardRange {
  double phi = 0.0;
  double min = 0.0;
  double max = 0.0;
  double range = 0.0;
  std::vector<std::size_t> histogram;
};

struct RewardRangeReport {
  std::vector<double> bin_edges;  // shared by every entry, bins + 1 values
  std::vector<RewardRange> entries;
};

/// Ensemble reward statistics per phi on one probe set. Histograms share bin
/// edges spanning the pooled min/max. Throws when probe width differs from an ensemble's input.
RewardRangeReport analyze_reward_range(const std::vector<std::pair<double, const ensemble::RewardEnsemble*>>& runs,
                                       const Tensor& probes, std::size_t bins = 20,
                                       ensemble::Aggregation mode = ensemble::Aggregation::kl_confidence);

struct Projection {
  Tensor coords;                  // n x 2
  std::vector<double> variances;  // variance along each of the two axes, descending
};

/// Projection of the rows of `points` onto their top two principal axes.
Projection pca_2d(const Tensor& points);

/// Mean Euclidean distance of the rows to their centroid.
double spread(const Tensor& points);

struct LatentReport {
  std::vector<Projection> projections;  // per member, latent means
  std::vector<double> member_spread;    // in the full latent space
  double spread = 0.0;                  // member mean
  double mean_kl = 0.0;                 // per-input KL averaged over inputs and members
};

LatentReport analyze_latents(const ensemble::RewardEnsemble& ensemble, const Tensor& probes);

/// Pairs of segments from uniform-random-policy rollouts of `task`, labeled by
/// the oracle annotator. Deterministic in `seed`.
std::vector<PreferenceTriple> synthetic_preferences(const envs::Task& task, std::size_t pairs,
                                                    std::size_t segment_length, std::uint64_t seed);

/// Flips each non-tie label independently with probability `probability`.
std::vector<PreferenceTriple> flip_labels(std::vector<PreferenceTriple> triples, double probability,
                                          std::uint64_t seed);

/// Trains a fresh ensemble on a fixed preference set.
ensemble::RewardEnsemble train_on_fixed_set(const reward::RewardModelConfig& model, std::size_t members,
                                            std::uint64_t seed, const std::vector<PreferenceTriple>& triples,
                                            const reward::TrainingConfig& training, std::size_t steps);

/// Spearman rank correlation; tied values get their average rank.
double spearman(std::span<const double> a, std::span<const double> b);

/// Writes range.csv, range_histogram.csv and latents.csv for a set of
/// ensembles trained at different phi.
void write_analysis(const std::filesystem::path& dir, const RewardRangeReport& ranges,
                    const std::vector<std::pair<double, LatentReport>>& latents);

}  // namespace prefrl::harness
