#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "prefrl/ensemble.hpp"
#include "prefrl/harness/annotation_service.hpp"
#include "prefrl/harness/config.hpp"

namespace prefrl::harness {

/// One row of metrics.csv.
struct MetricsRecord {
  std::size_t iteration = 0;  // loop iterations completed
  std::size_t env_steps = 0;
  double eval_return = 0.0;
  double success_rate = 0.0;
  std::optional<double> optimal_return;  // known only for the gridworld
  reward::LossValues losses;             // member mean at the last reward step
  double mean_kl = 0.0;                  // over members, on the probe set
  std::vector<double> member_kl;
  double probe_min = 0.0;
  double probe_max = 0.0;
  double probe_mean = 0.0;
  std::size_t labels_collected = 0;
};

std::string metrics_header();
std::string metrics_row(const MetricsRecord& r);

struct RunResult {
  std::vector<MetricsRecord> records;
  ensemble::RewardEnsemble ensemble;
  std::size_t feedback_sessions = 0;  // sessions that trained the reward model
  std::size_t labels_collected = 0;
  std::size_t rejected_policy_steps = 0;

  /// Evaluation return of the last record (0 when nothing was evaluated).
  double final_return() const { return records.empty() ? 0.0 : records.back().eval_return; }
};

struct RunOptions {
  /// Where config.json, metrics.csv, events.log, preferences.jsonl and
  /// checkpoints go. Nothing is written when empty.
  std::filesystem::path run_dir;
  /// Required for the "human" pool; receives queries and supplies labels.
  AnnotationService* annotation = nullptr;
  /// Optional sink for event lines, in addition to events.log.
  std::function<void(const std::string&)> on_event;
};

/// Runs the preference-learning loop: every `feedback_every` iterations sample
/// query pairs from the replay buffer, label them, and retrain the reward
/// ensemble; every iteration collect experience and update the policy on
/// relabeled minibatches. Evaluation uses ground-truth rewards only.
RunResult run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

}  // namespace prefrl::harness
