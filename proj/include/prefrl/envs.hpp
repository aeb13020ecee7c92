#pragma once

#include <cstdint>
#include <deque>
#include <iosfwd>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <shared_mutex>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "prefrl/types.hpp"

namespace prefrl::envs {

struct Transition {
  std::vector<double> state;
  int action = 0;
  std::vector<double> next_state;
  double true_reward = 0.0;          // evaluation and annotators only
  std::vector<double> features;      // reward-model input row for (state, action)
  std::uint64_t episode_id = 0;
  std::size_t t = 0;
};

class InvalidAction : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Toy MDP with a known reward function and deterministic dynamics.
class Task {
 public:
  virtual ~Task() = default;

  virtual std::string id() const = 0;
  virtual std::size_t state_dim() const = 0;
  virtual std::size_t num_actions() const = 0;
  virtual std::size_t feature_dim() const = 0;
  virtual std::size_t episode_length() const = 0;

  virtual std::vector<double> initial_state(std::mt19937_64& rng) const = 0;
  /// Fills everything but episode_id and t.
  virtual Transition step(std::span<const double> state, int action) const = 0;
  virtual std::vector<double> features(std::span<const double> state, int action) const = 0;
  /// Rendering hints for the annotation UI (bounds, projection axes, goal).
  virtual nlohmann::json meta() const = 0;
  /// Fixed state-action rows used to probe the learned reward.
  virtual std::vector<std::pair<std::vector<double>, int>> probe_set() const = 0;

 protected:
  void check_action(int action) const;
};

struct GridWorldConfig {
  int width = 10;
  int height = 10;
  std::pair<int, int> goal{9, 9};
  std::vector<std::pair<int, int>> traps{{2, 2}, {3, 5}, {4, 5}, {5, 5}, {6, 5}, {7, 2}, {7, 7}, {8, 4}, {2, 8}};
  double goal_reward = 1.0;
  double trap_reward = -1.0;
  double step_reward = -0.05;
  std::size_t episode_length = 200;
};

/// 10x10 grid. Actions 0..3 move up/down/left/right; bumping into the border
/// leaves the state unchanged. The reward depends on the occupied cell: the
/// goal is absorbing and pays goal_reward per step, a trap cell pays
/// trap_reward, any other cell step_reward. Episodes start on a uniformly
/// drawn free cell. Features are a one-hot cell followed by a one-hot action.
class GridWorld final : public Task {
 public:
  explicit GridWorld(GridWorldConfig config = {});

  std::string id() const override { return "gridworld"; }
  std::size_t state_dim() const override { return 2; }
  std::size_t num_actions() const override { return 4; }
  std::size_t feature_dim() const override { return num_states() + 4; }
  std::size_t episode_length() const override { return config_.episode_length; }

  std::vector<double> initial_state(std::mt19937_64& rng) const override;
  Transition step(std::span<const double> state, int action) const override;
  std::vector<double> features(std::span<const double> state, int action) const override;
  nlohmann::json meta() const override;
  std::vector<std::pair<std::vector<double>, int>> probe_set() const override;

  std::size_t num_states() const { return static_cast<std::size_t>(config_.width * config_.height); }
  std::size_t state_index(std::span<const double> state) const;
  std::vector<double> state_of(std::size_t index) const;
  bool is_goal(std::size_t index) const;
  bool is_trap(std::size_t index) const;
  const GridWorldConfig& config() const { return config_; }

  /// Finite-horizon undiscounted optimal return from every state, by backward
  /// value iteration over `horizon` steps.
  std::vector<double> optimal_returns(std::size_t horizon) const;

 private:
  GridWorldConfig config_;
  std::vector<char> trap_;
};

struct PointMassConfig {
  std::pair<double, double> goal{0.5, 0.5};
  double dt = 0.1;
  double acceleration = 1.0;
  double damping = 0.9;
  double max_speed = 1.0;
  double velocity_penalty = 0.1;
  std::size_t episode_length = 200;
};

/// 2D point mass in [-1,1]^2 with 9 discrete accelerations ({-1,0,1}^2).
/// Reward is -|p' - goal| - velocity_penalty * |v'|, maximal (0) at the goal at rest.
class PointMass final : public Task {
 public:
  explicit PointMass(PointMassConfig config = {});

  std::string id() const override { return "pointmass"; }
  std::size_t state_dim() const override { return 4; }
  std::size_t num_actions() const override { return 9; }
  std::size_t feature_dim() const override { return 13; }
  std::size_t episode_length() const override { return config_.episode_length; }

  std::vector<double> initial_state(std::mt19937_64& rng) const override;
  Transition step(std::span<const double> state, int action) const override;
  std::vector<double> features(std::span<const double> state, int action) const override;
  nlohmann::json meta() const override;
  std::vector<std::pair<std::vector<double>, int>> probe_set() const override;

  const PointMassConfig& config() const { return config_; }

 private:
  PointMassConfig config_;
};

std::unique_ptr<Task> make_task(const std::string& id);

/// Bounded FIFO of transitions (D_r). One writer, any number of snapshot readers.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 100000) : capacity_(capacity) {}

  void push(Transition t);
  std::size_t size() const;
  std::size_t capacity() const { return capacity_; }
  std::vector<Transition> sample(std::size_t count, std::mt19937_64& rng) const;
  std::vector<Transition> snapshot() const;

  /// Offsets whose next `length` transitions are contiguous within one episode.
  std::vector<std::size_t> segment_starts(std::size_t length) const;
  Segment segment_at(std::size_t start, std::size_t length) const;

 private:
  Segment make_segment(std::size_t start, std::size_t length) const;
  std::vector<std::size_t> starts_unlocked(std::size_t length) const;

  std::size_t capacity_;
  std::deque<Transition> items_;
  mutable std::shared_mutex mutex_;
};

/// Uniformly drawn segment pairs with distinct start offsets. Returns fewer
/// than `count` pairs (possibly none) when fewer than two segments exist.
std::vector<std::pair<Segment, Segment>> sample_query_pairs(const ReplayBuffer& buffer, std::size_t count,
                                                            std::size_t length, std::mt19937_64& rng);

/// Append-only preference log (D_p). Appends are serialized; reads copy.
class PreferenceBuffer {
 public:
  void append(PreferenceTriple triple);
  void append(std::vector<PreferenceTriple> triples);
  std::size_t size() const;
  std::vector<PreferenceTriple> snapshot() const;
  /// Copy of the triple at `index`.
  PreferenceTriple at(std::size_t index) const;
  /// Uniform draws without replacement (all items when count >= size).
  std::vector<PreferenceTriple> sample(std::size_t count, std::mt19937_64& rng) const;

 private:
  std::vector<PreferenceTriple> items_;
  mutable std::mutex mutex_;
};

/// Running min/max of observed segment returns, used to put returns on a [0,1] scale.
class NormalizationStats {
 public:
  void observe(double segment_return);
  std::size_t count() const { return count_; }
  double min() const { return min_; }
  double max() const { return max_; }
  /// (ret - min) / (max - min), clamped to [0,1]; 0 when min == max or nothing observed.
  double normalize(double ret) const;
  /// |a - b| / (max - min); 0 in the degenerate case.
  double normalized_gap(double a, double b) const;

 private:
  std::size_t count_ = 0;
  double min_ = 0.0;
  double max_ = 0.0;
};

/// Line-delimited JSON records {episode, t, state, action, reward}.
void export_trajectory(std::ostream& out, std::span<const Transition> transitions);

nlohmann::json segment_to_json(const Segment& segment);

}  // namespace prefrl::envs
