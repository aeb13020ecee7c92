#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prefrl/agent.hpp"
#include "prefrl/annotators.hpp"
#include "prefrl/ensemble.hpp"
#include "prefrl/reward_model.hpp"

namespace prefrl::harness {

/// Everything that determines a scripted run, given the seed.
struct ExperimentConfig {
  std::string task = "gridworld";
  std::uint64_t seed = 1;

  // Reward learning
  double phi = 100.0;
  std::size_t ensemble_size = 3;
  std::string ensemble_mode = "kl_confidence";  // kl_confidence | mean | single
  std::size_t latent_dim = 8;
  std::vector<std::size_t> encoder_hidden{32, 32};
  std::vector<std::size_t> decoder_hidden{32};
  double reward_learning_rate = 1e-3;
  std::size_t reward_batch_size = 64;
  std::size_t reward_steps = 200;  // per feedback session
  std::string reward_source = "learned";  // learned | true (bypasses the reward model)
  /// Policy sees learned rewards z-scored over the replay buffer after each session.
  bool standardize_rewards = true;

  // Feedback
  std::size_t feedback_every = 10;  // K
  std::size_t queries_per_session = 256;
  std::string pool = "100";  // annotator count, "oracle", or "human"
  std::string pool_file;     // optional serialized pool, overrides `pool` when set
  std::string discount_order = "late_steps";  // late_steps | early_steps
  std::size_t segment_length = 25;            // H
  double human_timeout_seconds = 600.0;

  // Policy
  std::size_t iterations = 200;
  std::size_t steps_per_iteration = 200;
  std::size_t policy_steps = 1000;
  std::size_t policy_batch_size = 64;
  std::size_t replay_capacity = 100000;
  agent::TabularConfig tabular{};
  agent::ActorCriticConfig actor_critic{};

  // Evaluation
  std::size_t eval_every = 10;
  std::size_t eval_episodes = 10;

  void validate() const;
  ensemble::Aggregation aggregation() const { return ensemble::aggregation_from_string(ensemble_mode); }
  /// Effective member count (1 for the single-model mode).
  std::size_t members() const { return ensemble_mode == "single" ? 1 : ensemble_size; }
  bool human_pool() const { return pool == "human" && pool_file.empty(); }
};

nlohmann::json to_json(const ExperimentConfig& config);
/// Missing keys keep their defaults; unknown keys are rejected.
ExperimentConfig config_from_json(const nlohmann::json& j, ExperimentConfig base = {});
ExperimentConfig load_config(const std::filesystem::path& path);

/// Builds the scripted annotator pool a config asks for (throws for "human").
annotators::AnnotatorPool make_pool(const ExperimentConfig& config);

reward::RewardModelConfig reward_model_config(const ExperimentConfig& config, std::size_t input_dim);

}  // namespace prefrl::harness
