#include "prefrl/envs.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace prefrl::envs {

void Task::check_action(int action) const {
  if (action < 0 || static_cast<std::size_t>(action) >= num_actions()) {
    throw InvalidAction("action " + std::to_string(action) + " is outside [0, " + std::to_string(num_actions()) +
                        ") for task " + id());
  }
}

// ---------------------------------------------------------------- GridWorld

GridWorld::GridWorld(GridWorldConfig config) : config_(std::move(config)) {
  if (config_.width <= 0 || config_.height <= 0) throw std::invalid_argument("grid dimensions must be positive");
  trap_.assign(num_states(), 0);
  auto inside = [&](std::pair<int, int> c) {
    return c.first >= 0 && c.first < config_.width && c.second >= 0 && c.second < config_.height;
  };
  if (!inside(config_.goal)) throw std::invalid_argument("goal outside grid");
  for (auto c : config_.traps) {
    if (!inside(c)) throw std::invalid_argument("trap outside grid");
    if (c == config_.goal) throw std::invalid_argument("trap on the goal cell");
    trap_[static_cast<std::size_t>(c.second * config_.width + c.first)] = 1;
  }
}

std::size_t GridWorld::state_index(std::span<const double> state) const {
  if (state.size() != 2) throw std::invalid_argument("gridworld state has two coordinates");
  const auto x = static_cast<int>(state[0]);
  const auto y = static_cast<int>(state[1]);
  if (x < 0 || x >= config_.width || y < 0 || y >= config_.height || x != state[0] || y != state[1]) {
    throw std::invalid_argument("state is not a grid cell");
  }
  return static_cast<std::size_t>(y * config_.width + x);
}

std::vector<double> GridWorld::state_of(std::size_t index) const {
  const auto w = static_cast<std::size_t>(config_.width);
  return {static_cast<double>(index % w), static_cast<double>(index / w)};
}

bool GridWorld::is_goal(std::size_t index) const {
  return index == static_cast<std::size_t>(config_.goal.second * config_.width + config_.goal.first);
}

bool GridWorld::is_trap(std::size_t index) const { return trap_.at(index) != 0; }

std::vector<double> GridWorld::initial_state(std::mt19937_64& rng) const {
  std::uniform_int_distribution<std::size_t> pick(0, num_states() - 1);
  for (;;) {
    const std::size_t s = pick(rng);
    if (!is_goal(s) && !is_trap(s)) return state_of(s);
  }
}

Transition GridWorld::step(std::span<const double> state, int action) const {
  check_action(action);
  const std::size_t s = state_index(state);
  Transition tr;
  tr.state.assign(state.begin(), state.end());
  tr.action = action;
  tr.features = features(state, action);
  if (is_goal(s)) {
    tr.true_reward = config_.goal_reward;
  } else if (is_trap(s)) {
    tr.true_reward = config_.trap_reward;
  } else {
    tr.true_reward = config_.step_reward;
  }
  if (is_goal(s)) {
    tr.next_state = tr.state;
    return tr;
  }
  static constexpr int dx[4] = {0, 0, -1, 1};
  static constexpr int dy[4] = {1, -1, 0, 0};
  const int x = std::clamp(static_cast<int>(state[0]) + dx[action], 0, config_.width - 1);
  const int y = std::clamp(static_cast<int>(state[1]) + dy[action], 0, config_.height - 1);
  tr.next_state = {static_cast<double>(x), static_cast<double>(y)};
  return tr;
}

std::vector<double> GridWorld::features(std::span<const double> state, int action) const {
  check_action(action);
  std::vector<double> f(feature_dim(), 0.0);
  f[state_index(state)] = 1.0;
  f[num_states() + static_cast<std::size_t>(action)] = 1.0;
  return f;
}

nlohmann::json GridWorld::meta() const {
  nlohmann::json traps = nlohmann::json::array();
  for (auto [x, y] : config_.traps) traps.push_back({x, y});
  return {{"task", id()},
          {"bounds", {{0, 0}, {config_.width - 1, config_.height - 1}}},
          {"projection", {0, 1}},
          {"goal", {config_.goal.first, config_.goal.second}},
          {"traps", traps},
          {"actions", {"up", "down", "left", "right"}}};
}

std::vector<std::pair<std::vector<double>, int>> GridWorld::probe_set() const {
  std::vector<std::pair<std::vector<double>, int>> out;
  for (std::size_t s = 0; s < num_states(); ++s) {
    for (int a = 0; a < 4; ++a) out.emplace_back(state_of(s), a);
  }
  return out;
}

std::vector<double> GridWorld::optimal_returns(std::size_t horizon) const {
  std::vector<double> value(num_states(), 0.0);
  std::vector<double> next(num_states(), 0.0);
  for (std::size_t h = 0; h < horizon; ++h) {
    for (std::size_t s = 0; s < num_states(); ++s) {
      const auto st = state_of(s);
      double best = -std::numeric_limits<double>::infinity();
      for (int a = 0; a < 4; ++a) {
        const Transition tr = step(st, a);
        best = std::max(best, tr.true_reward + value[state_index(tr.next_state)]);
      }
      next[s] = best;
    }
    std::swap(value, next);
  }
  return value;
}

// ---------------------------------------------------------------- PointMass

PointMass::PointMass(PointMassConfig config) : config_(config) {}

std::vector<double> PointMass::initial_state(std::mt19937_64& rng) const {
  std::uniform_real_distribution<double> pos(-1.0, 1.0);
  const double x = pos(rng);
  const double y = pos(rng);
  return {x, y, 0.0, 0.0};
}

Transition PointMass::step(std::span<const double> state, int action) const {
  check_action(action);
  if (state.size() != 4) throw std::invalid_argument("point-mass state has four components");
  const double ax = config_.acceleration * static_cast<double>(action % 3 - 1);
  const double ay = config_.acceleration * static_cast<double>(action / 3 - 1);
  double vx = std::clamp(config_.damping * state[2] + ax * config_.dt, -config_.max_speed, config_.max_speed);
  double vy = std::clamp(config_.damping * state[3] + ay * config_.dt, -config_.max_speed, config_.max_speed);
  double px = state[0] + vx * config_.dt;
  double py = state[1] + vy * config_.dt;
  if (px < -1.0 || px > 1.0) {
    px = std::clamp(px, -1.0, 1.0);
    vx = 0.0;
  }
  if (py < -1.0 || py > 1.0) {
    py = std::clamp(py, -1.0, 1.0);
    vy = 0.0;
  }
  Transition tr;
  tr.state.assign(state.begin(), state.end());
  tr.action = action;
  tr.next_state = {px, py, vx, vy};
  tr.features = features(state, action);
  const double dist = std::hypot(px - config_.goal.first, py - config_.goal.second);
  tr.true_reward = -dist - config_.velocity_penalty * std::hypot(vx, vy);
  return tr;
}

std::vector<double> PointMass::features(std::span<const double> state, int action) const {
  check_action(action);
  std::vector<double> f(feature_dim(), 0.0);
  std::copy(state.begin(), state.begin() + 4, f.begin());
  f[4 + static_cast<std::size_t>(action)] = 1.0;
  return f;
}

nlohmann::json PointMass::meta() const {
  return {{"task", id()},
          {"bounds", {{-1.0, -1.0}, {1.0, 1.0}}},
          {"projection", {0, 1}},
          {"goal", {config_.goal.first, config_.goal.second}},
          {"actions", 9}};
}

std::vector<std::pair<std::vector<double>, int>> PointMass::probe_set() const {
  std::vector<std::pair<std::vector<double>, int>> out;
  constexpr int n = 6;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double x = -0.9 + 1.8 * i / (n - 1);
      const double y = -0.9 + 1.8 * j / (n - 1);
      for (int a = 0; a < 9; ++a) out.emplace_back(std::vector<double>{x, y, 0.0, 0.0}, a);
    }
  }
  return out;
}

std::unique_ptr<Task> make_task(const std::string& id) {
  if (id == "gridworld") return std::make_unique<GridWorld>();
  if (id == "pointmass") return std::make_unique<PointMass>();
  throw std::invalid_argument("unknown task '" + id + "'");
}

// ---------------------------------------------------------------- buffers

void ReplayBuffer::push(Transition t) {
  std::unique_lock lock(mutex_);
  if (capacity_ == 0) return;
  if (items_.size() == capacity_) items_.pop_front();
  items_.push_back(std::move(t));
}

std::size_t ReplayBuffer::size() const {
  std::shared_lock lock(mutex_);
  return items_.size();
}

std::vector<Transition> ReplayBuffer::sample(std::size_t count, std::mt19937_64& rng) const {
  std::shared_lock lock(mutex_);
  std::vector<Transition> out;
  if (items_.empty()) return out;
  std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(items_[pick(rng)]);
  return out;
}

std::vector<Transition> ReplayBuffer::snapshot() const {
  std::shared_lock lock(mutex_);
  return {items_.begin(), items_.end()};
}

std::vector<std::size_t> ReplayBuffer::starts_unlocked(std::size_t length) const {
  std::vector<std::size_t> out;
  if (length == 0 || items_.size() < length) return out;
  for (std::size_t i = 0; i + length <= items_.size(); ++i) {
    const auto& a = items_[i];
    const auto& b = items_[i + length - 1];
    if (a.episode_id == b.episode_id && b.t == a.t + length - 1) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> ReplayBuffer::segment_starts(std::size_t length) const {
  std::shared_lock lock(mutex_);
  return starts_unlocked(length);
}

Segment ReplayBuffer::make_segment(std::size_t start, std::size_t length) const {
  const auto& first = items_.at(start);
  const std::size_t sd = first.state.size();
  const std::size_t fd = first.features.size();
  Segment seg;
  seg.states = Tensor::zeros(length, sd);
  seg.features = Tensor::zeros(length, fd);
  seg.episode_id = first.episode_id;
  seg.start_t = first.t;
  for (std::size_t i = 0; i < length; ++i) {
    const auto& tr = items_.at(start + i);
    if (tr.episode_id != first.episode_id) throw std::logic_error("segment crosses an episode boundary");
    std::copy(tr.state.begin(), tr.state.end(), seg.states.data() + i * sd);
    std::copy(tr.features.begin(), tr.features.end(), seg.features.data() + i * fd);
    seg.actions.push_back(tr.action);
    seg.true_rewards.push_back(tr.true_reward);
  }
  return seg;
}

Segment ReplayBuffer::segment_at(std::size_t start, std::size_t length) const {
  std::shared_lock lock(mutex_);
  return make_segment(start, length);
}

std::vector<std::pair<Segment, Segment>> sample_query_pairs(const ReplayBuffer& buffer, std::size_t count,
                                                            std::size_t length, std::mt19937_64& rng) {
  std::vector<std::pair<Segment, Segment>> out;
  const auto starts = buffer.segment_starts(length);
  if (starts.size() < 2) return out;
  std::uniform_int_distribution<std::size_t> first(0, starts.size() - 1);
  std::uniform_int_distribution<std::size_t> second(0, starts.size() - 2);
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t a = first(rng);
    std::size_t b = second(rng);
    if (b >= a) ++b;  // uniform over the other starts
    out.emplace_back(buffer.segment_at(starts[a], length), buffer.segment_at(starts[b], length));
  }
  return out;
}

void PreferenceBuffer::append(PreferenceTriple triple) {
  validate(triple.label);
  std::lock_guard lock(mutex_);
  items_.push_back(std::move(triple));
}

void PreferenceBuffer::append(std::vector<PreferenceTriple> triples) {
  for (const auto& t : triples) validate(t.label);
  std::lock_guard lock(mutex_);
  for (auto& t : triples) items_.push_back(std::move(t));
}

std::size_t PreferenceBuffer::size() const {
  std::lock_guard lock(mutex_);
  return items_.size();
}

std::vector<PreferenceTriple> PreferenceBuffer::snapshot() const {
  std::lock_guard lock(mutex_);
  return items_;
}

PreferenceTriple PreferenceBuffer::at(std::size_t index) const {
  std::lock_guard lock(mutex_);
  return items_.at(index);
}

std::vector<PreferenceTriple> PreferenceBuffer::sample(std::size_t count, std::mt19937_64& rng) const {
  std::lock_guard lock(mutex_);
  if (count >= items_.size()) return items_;
  std::vector<std::size_t> idx(items_.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  // Partial Fisher-Yates.
  std::vector<PreferenceTriple> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
    out.push_back(items_[idx[i]]);
  }
  return out;
}

void NormalizationStats::observe(double segment_return) {
  if (count_ == 0) {
    min_ = max_ = segment_return;
  } else {
    min_ = std::min(min_, segment_return);
    max_ = std::max(max_, segment_return);
  }
  ++count_;
}

double NormalizationStats::normalize(double ret) const {
  if (count_ == 0 || max_ == min_) return 0.0;
  return std::clamp((ret - min_) / (max_ - min_), 0.0, 1.0);
}

double NormalizationStats::normalized_gap(double a, double b) const {
  if (count_ == 0 || max_ == min_) return 0.0;
  return std::abs(a - b) / (max_ - min_);
}

void export_trajectory(std::ostream& out, std::span<const Transition> transitions) {
  for (const auto& tr : transitions) {
    nlohmann::json j{{"episode", tr.episode_id},
                     {"t", tr.t},
                     {"state", tr.state},
                     {"action", tr.action},
                     {"reward", tr.true_reward}};
    out << j.dump() << '\n';
  }
}

nlohmann::json segment_to_json(const Segment& segment) {
  auto steps = nlohmann::json::array();
  for (std::size_t i = 0; i < segment.length(); ++i) {
    auto row = segment.states.row_view(i);
    steps.push_back({{"state", std::vector<double>(row.begin(), row.end())},
                     {"action", segment.actions[i]},
                     {"t", segment.start_t + i}});
  }
  return steps;
}

}  // namespace prefrl::envs
