#include "prefrl/agent.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace prefrl::agent {

std::vector<RelabeledTransition> RewardRelabeler::relabel(std::span<const envs::Transition> batch) {
  std::vector<RelabeledTransition> out;
  out.reserve(batch.size());
  std::vector<std::size_t> missing;
  std::vector<std::string> keys;
  keys.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& f = batch[i].features;
    keys.emplace_back(reinterpret_cast<const char*>(f.data()), f.size() * sizeof(double));
    out.push_back({batch[i], 0.0});
    auto it = cache_.find(keys.back());
    if (it != cache_.end()) {
      out.back().reward = (it->second - shift_) / scale_;
    } else {
      missing.push_back(i);
    }
  }
  if (!missing.empty()) {
    const std::size_t width = batch[missing.front()].features.size();
    Tensor rows = Tensor::zeros(missing.size(), width);
    for (std::size_t k = 0; k < missing.size(); ++k) {
      std::copy(batch[missing[k]].features.begin(), batch[missing[k]].features.end(), rows.data() + k * width);
    }
    const auto r = ensemble::ensemble_reward(*ensemble_, rows, mode_);
    for (std::size_t k = 0; k < missing.size(); ++k) {
      out[missing[k]].reward = (r[k] - shift_) / scale_;
      cache_.emplace(keys[missing[k]], r[k]);
    }
  }
  return out;
}

void RewardRelabeler::set_standardization(double shift, double scale) {
  if (!std::isfinite(shift) || !std::isfinite(scale) || scale <= 0.0) {
    throw std::invalid_argument("standardization needs a finite shift and a positive scale");
  }
  shift_ = shift;
  scale_ = scale;
}

void RewardRelabeler::standardize_on(std::span<const envs::Transition> sample) {
  shift_ = 0.0;
  scale_ = 1.0;
  if (sample.empty()) return;
  const auto raw = relabel(sample);
  double mean = 0.0;
  for (const auto& r : raw) mean += r.reward;
  mean /= static_cast<double>(raw.size());
  double var = 0.0;
  for (const auto& r : raw) var += (r.reward - mean) * (r.reward - mean);
  const double sd = std::sqrt(var / static_cast<double>(raw.size()));
  shift_ = mean;
  // Round-off leaves a tiny nonzero spread on constant rewards; treat it as zero.
  const bool degenerate = !std::isfinite(sd) || sd <= 1e-12 * std::max(1.0, std::abs(mean));
  scale_ = degenerate ? 1.0 : sd;
}

std::vector<RelabeledTransition> relabel(const ensemble::RewardEnsemble& ensemble,
                                         std::span<const envs::Transition> batch, ensemble::Aggregation mode) {
  std::vector<RelabeledTransition> out;
  if (batch.empty()) return out;
  const std::size_t width = batch.front().features.size();
  Tensor rows = Tensor::zeros(batch.size(), width);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    std::copy(batch[i].features.begin(), batch[i].features.end(), rows.data() + i * width);
  }
  const auto r = ensemble::ensemble_reward(ensemble, rows, mode);
  out.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) out.push_back({batch[i], r[i]});
  return out;
}

std::vector<RelabeledTransition> with_true_rewards(std::span<const envs::Transition> batch) {
  std::vector<RelabeledTransition> out;
  out.reserve(batch.size());
  for (const auto& t : batch) out.push_back({t, t.true_reward});
  return out;
}

// ---------------------------------------------------------------- TabularQ

TabularQ::TabularQ(std::size_t states, std::size_t actions, TabularConfig config)
    : states_(states), actions_(actions), config_(config), table_(states * actions, 0.0) {
  if (states == 0 || actions == 0) throw std::invalid_argument("Q table needs states and actions");
}

int TabularQ::act(std::size_t state, ActMode mode, std::mt19937_64& rng) const {
  if (state >= states_) throw std::out_of_range("state index out of range");
  const double* row = &table_[state * actions_];
  const double best = *std::max_element(row, row + actions_);
  if (mode == ActMode::greedy) {
    return static_cast<int>(std::max_element(row, row + actions_) - row);
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (unit(rng) < config_.explore_epsilon) {
    std::uniform_int_distribution<std::size_t> any(0, actions_ - 1);
    return static_cast<int>(any(rng));
  }
  std::vector<int> ties;
  for (std::size_t a = 0; a < actions_; ++a) {
    if (row[a] == best) ties.push_back(static_cast<int>(a));
  }
  std::uniform_int_distribution<std::size_t> pick(0, ties.size() - 1);
  return ties[pick(rng)];
}

std::vector<double> TabularQ::action_probabilities(std::size_t state) const {
  const double* row = &table_[state * actions_];
  const double best = *std::max_element(row, row + actions_);
  const auto ties = static_cast<double>(std::count(row, row + actions_, best));
  const double floor = config_.explore_epsilon / static_cast<double>(actions_);
  std::vector<double> p(actions_, floor);
  for (std::size_t a = 0; a < actions_; ++a) {
    if (row[a] == best) p[a] += (1.0 - config_.explore_epsilon) / ties;
  }
  return p;
}

bool TabularQ::update(std::span<const RelabeledTransition> batch, const std::vector<std::size_t>& states,
                      const std::vector<std::size_t>& next_states) {
  if (states.size() != batch.size() || next_states.size() != batch.size()) {
    throw std::invalid_argument("state index lists must match the batch");
  }
  std::vector<double> scratch = table_;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto a = static_cast<std::size_t>(batch[i].transition.action);
    const double* next = &scratch[next_states[i] * actions_];
    const double target = batch[i].reward + config_.discount * *std::max_element(next, next + actions_);
    double& q = scratch[states[i] * actions_ + a];
    q += config_.learning_rate * (target - q);
    if (!std::isfinite(q)) return false;
  }
  table_ = std::move(scratch);
  return true;
}

diffcore::Checkpoint TabularQ::to_checkpoint() const {
  diffcore::Checkpoint ckpt;
  ckpt.add("q", Tensor::matrix(states_, actions_, table_));
  ckpt.meta = {{"kind", "tabular_q"},
               {"learning_rate", config_.learning_rate},
               {"discount", config_.discount},
               {"explore_epsilon", config_.explore_epsilon}};
  return ckpt;
}

TabularQ TabularQ::from_checkpoint(const diffcore::Checkpoint& ckpt) {
  const Tensor& q = ckpt.at("q");
  TabularConfig cfg{ckpt.meta.at("learning_rate").get<double>(), ckpt.meta.at("discount").get<double>(),
                    ckpt.meta.at("explore_epsilon").get<double>()};
  TabularQ out(q.rows(), q.cols(), cfg);
  out.table_.assign(q.values().begin(), q.values().end());
  return out;
}

// ---------------------------------------------------------------- ActorCritic

namespace {

diffcore::Mlp make_net(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out,
                       std::mt19937_64& rng) {
  std::vector<std::size_t> widths{in};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(out);
  return diffcore::Mlp(widths, diffcore::Activation::tanh, diffcore::Activation::identity, rng);
}

std::vector<double> softmax(std::span<const double> logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) total += p[i] = std::exp(logits[i] - m);
  for (auto& v : p) v /= total;
  return p;
}

}  // namespace

ActorCritic::ActorCritic(std::size_t state_dim, std::size_t actions, ActorCriticConfig config, std::uint64_t seed)
    : config_(std::move(config)) {
  std::mt19937_64 rng(seed);
  actor_ = make_net(state_dim, config_.hidden, actions, rng);
  critic_ = make_net(state_dim, config_.hidden, 1, rng);
  actor_opt_ = diffcore::Adam({config_.actor_learning_rate});
  critic_opt_ = diffcore::Adam({config_.critic_learning_rate});
}

ActorCritic::ActorCritic(diffcore::Mlp actor, diffcore::Mlp critic, ActorCriticConfig config)
    : config_(std::move(config)),
      actor_(std::move(actor)),
      critic_(std::move(critic)),
      actor_opt_({config_.actor_learning_rate}),
      critic_opt_({config_.critic_learning_rate}) {}

std::vector<double> ActorCritic::action_probabilities(std::span<const double> state) const {
  const Tensor logits = actor_.forward(Tensor::row(state));
  return softmax(logits.values());
}

int ActorCritic::act(std::span<const double> state, ActMode mode, std::mt19937_64& rng) const {
  const auto p = action_probabilities(state);
  if (mode == ActMode::greedy) return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
  std::discrete_distribution<int> pick(p.begin(), p.end());
  return pick(rng);
}

double ActorCritic::value(std::span<const double> state) const { return critic_.forward(Tensor::row(state)).item(); }

ActorCriticLosses ActorCritic::record_losses(diffcore::Tape& tape, std::span<const RelabeledTransition> batch,
                                             diffcore::Var* actor_loss, diffcore::Var* critic_loss) {
  using namespace diffcore;
  if (batch.empty()) throw std::invalid_argument("empty policy batch");
  const std::size_t b = batch.size();
  const std::size_t d = batch.front().transition.state.size();
  const std::size_t na = actor_.output_dim();
  Tensor states = Tensor::zeros(b, d);
  Tensor next_states = Tensor::zeros(b, d);
  for (std::size_t i = 0; i < b; ++i) {
    std::copy(batch[i].transition.state.begin(), batch[i].transition.state.end(), states.data() + i * d);
    std::copy(batch[i].transition.next_state.begin(), batch[i].transition.next_state.end(),
              next_states.data() + i * d);
  }
  const Tensor next_values = critic_.forward(next_states);
  Tensor targets = Tensor::zeros(b, 1);
  for (std::size_t i = 0; i < b; ++i) targets[i] = batch[i].reward + config_.discount * next_values[i];

  Var v = critic_.forward(tape, tape.constant(states));
  Var critic = mean(square(sub(v, tape.constant(targets))));

  Tensor weighted_mask = Tensor::zeros(b, na);
  for (std::size_t i = 0; i < b; ++i) {
    const double advantage = targets[i] - v.value()[i];
    weighted_mask(i, static_cast<std::size_t>(batch[i].transition.action)) = advantage;
  }
  Var log_p = log_softmax(actor_.forward(tape, tape.constant(states)));
  Var policy_term = scale(sum(mul(tape.constant(weighted_mask), log_p)), -1.0 / static_cast<double>(b));
  // sum p log p = -entropy
  Var neg_entropy = scale(sum(mul(exp(log_p), log_p)), 1.0 / static_cast<double>(b));
  Var actor = add(policy_term, scale(neg_entropy, config_.entropy_bonus));
  if (actor_loss) *actor_loss = actor;
  if (critic_loss) *critic_loss = critic;
  return {actor.value().item(), critic.value().item(), -neg_entropy.value().item()};
}

bool ActorCritic::update(std::span<const RelabeledTransition> batch, ActorCriticLosses* losses) {
  auto actor_params = actor_.parameters();
  auto critic_params = critic_.parameters();
  diffcore::zero_grad(actor_params);
  diffcore::zero_grad(critic_params);
  diffcore::Tape tape;
  diffcore::Var actor_loss;
  diffcore::Var critic_loss;
  const auto values = record_losses(tape, batch, &actor_loss, &critic_loss);
  if (losses) *losses = values;
  tape.backward(diffcore::add(actor_loss, critic_loss));
  // Check both before touching either network.
  for (auto* p : actor_params) {
    if (!p->grad.all_finite()) return false;
  }
  for (auto* p : critic_params) {
    if (!p->grad.all_finite()) return false;
  }
  actor_opt_.step(actor_params);
  critic_opt_.step(critic_params);
  return true;
}

diffcore::Checkpoint ActorCritic::to_checkpoint() const {
  diffcore::Checkpoint ckpt;
  diffcore::append_mlp(ckpt, "actor", actor_);
  diffcore::append_mlp(ckpt, "critic", critic_);
  ckpt.meta["kind"] = "actor_critic";
  ckpt.meta["hidden"] = config_.hidden;
  ckpt.meta["actor_learning_rate"] = config_.actor_learning_rate;
  ckpt.meta["critic_learning_rate"] = config_.critic_learning_rate;
  ckpt.meta["discount"] = config_.discount;
  ckpt.meta["entropy_bonus"] = config_.entropy_bonus;
  return ckpt;
}

ActorCritic ActorCritic::from_checkpoint(const diffcore::Checkpoint& ckpt) {
  ActorCriticConfig cfg;
  cfg.hidden = ckpt.meta.at("hidden").get<std::vector<std::size_t>>();
  cfg.actor_learning_rate = ckpt.meta.at("actor_learning_rate").get<double>();
  cfg.critic_learning_rate = ckpt.meta.at("critic_learning_rate").get<double>();
  cfg.discount = ckpt.meta.at("discount").get<double>();
  cfg.entropy_bonus = ckpt.meta.at("entropy_bonus").get<double>();
  return ActorCritic(diffcore::mlp_from_checkpoint(ckpt, "actor"), diffcore::mlp_from_checkpoint(ckpt, "critic"), cfg);
}

}  // namespace prefrl::agent
