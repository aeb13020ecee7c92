#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "prefrl/diffcore/adam.hpp"
#include "prefrl/diffcore/checkpoint.hpp"
#include "prefrl/diffcore/mlp.hpp"
#include "prefrl/ensemble.hpp"
#include "prefrl/envs.hpp"

namespace prefrl::agent {

enum class ActMode { explore, greedy };

/// A transition whose training reward may differ from the ground truth.
struct RelabeledTransition {
  envs::Transition transition;
  double reward = 0.0;  // what the policy learns from
};

/// Relabels transitions with the ensemble reward, memoizing by feature row.
/// Clear the cache whenever the ensemble changes.
class RewardRelabeler {
 public:
  RewardRelabeler(const ensemble::RewardEnsemble& ensemble, ensemble::Aggregation mode)
      : ensemble_(&ensemble), mode_(mode) {}

  std::vector<RelabeledTransition> relabel(std::span<const envs::Transition> batch);
  void clear() { cache_.clear(); }

  /// Rewards handed out become (r - shift) / scale.
  void set_standardization(double shift, double scale);
  /// Sets shift and scale to the mean and standard deviation of the raw
  /// ensemble reward over `sample` (scale 1 when the rewards are constant).
  void standardize_on(std::span<const envs::Transition> sample);
  double shift() const { return shift_; }
  double scale() const { return scale_; }

 private:
  const ensemble::RewardEnsemble* ensemble_;
  ensemble::Aggregation mode_;
  double shift_ = 0.0;
  double scale_ = 1.0;
  std::unordered_map<std::string, double> cache_;
};

std::vector<RelabeledTransition> relabel(const ensemble::RewardEnsemble& ensemble,
                                         std::span<const envs::Transition> batch,
                                         ensemble::Aggregation mode = ensemble::Aggregation::kl_confidence);
/// Keeps the ground-truth reward as the training signal.
std::vector<RelabeledTransition> with_true_rewards(std::span<const envs::Transition> batch);

struct TabularConfig {
  double learning_rate = 0.1;
  double discount = 0.99;
  double explore_epsilon = 0.1;
};

/// Action-value table with epsilon-greedy exploration.
class TabularQ {
 public:
  TabularQ(std::size_t states, std::size_t actions, TabularConfig config = {});

  /// Greedy breaks ties toward the lowest index; explore breaks ties uniformly.
  int act(std::size_t state, ActMode mode, std::mt19937_64& rng) const;
  /// One Q-learning step per transition, in order. Returns false (and leaves
  /// the table untouched) if any update would be non-finite.
  bool update(std::span<const RelabeledTransition> batch, const std::vector<std::size_t>& states,
              const std::vector<std::size_t>& next_states);

  double q(std::size_t s, int a) const { return table_[s * actions_ + static_cast<std::size_t>(a)]; }
  double& q(std::size_t s, int a) { return table_[s * actions_ + static_cast<std::size_t>(a)]; }
  std::size_t num_states() const { return states_; }
  std::size_t num_actions() const { return actions_; }
  TabularConfig& config() { return config_; }
  /// Distribution used when exploring.
  std::vector<double> action_probabilities(std::size_t state) const;

  diffcore::Checkpoint to_checkpoint() const;
  static TabularQ from_checkpoint(const diffcore::Checkpoint& ckpt);

 private:
  std::size_t states_;
  std::size_t actions_;
  TabularConfig config_;
  std::vector<double> table_;
};

struct ActorCriticConfig {
  std::vector<std::size_t> hidden{32};
  double actor_learning_rate = 1e-3;
  double critic_learning_rate = 1e-3;
  double discount = 0.99;
  double entropy_bonus = 0.01;
};

struct ActorCriticLosses {
  double actor = 0.0;
  double critic = 0.0;
  double entropy = 0.0;
};

/// Softmax actor over discrete actions plus a state-value critic.
class ActorCritic {
 public:
  ActorCritic(std::size_t state_dim, std::size_t actions, ActorCriticConfig config, std::uint64_t seed);

  std::vector<double> action_probabilities(std::span<const double> state) const;
  int act(std::span<const double> state, ActMode mode, std::mt19937_64& rng) const;
  double value(std::span<const double> state) const;

  /// Records actor loss -mean(log pi(a|s) * A) - entropy_bonus * H and critic
  /// loss mean((V(s) - target)^2), with A and target = r + discount * V(s') held fixed.
  ActorCriticLosses record_losses(diffcore::Tape& tape, std::span<const RelabeledTransition> batch,
                                  diffcore::Var* actor_loss, diffcore::Var* critic_loss);
  /// One gradient step on each network. Returns false if a step was rejected.
  bool update(std::span<const RelabeledTransition> batch, ActorCriticLosses* losses = nullptr);

  diffcore::Mlp& actor() { return actor_; }
  diffcore::Mlp& critic() { return critic_; }
  const ActorCriticConfig& config() const { return config_; }
  ActorCriticConfig& mutable_config() { return config_; }

  diffcore::Checkpoint to_checkpoint() const;
  static ActorCritic from_checkpoint(const diffcore::Checkpoint& ckpt);

 private:
  ActorCritic(diffcore::Mlp actor, diffcore::Mlp critic, ActorCriticConfig config);

  ActorCriticConfig config_;
  diffcore::Mlp actor_;
  diffcore::Mlp critic_;
  diffcore::Adam actor_opt_;
  diffcore::Adam critic_opt_;
};

}  // namespace prefrl::agent
