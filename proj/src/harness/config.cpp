#include "prefrl/harness/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

namespace prefrl::harness {

void ExperimentConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw std::invalid_argument(std::string(name) + " must be positive");
  };
  if (task != "gridworld" && task != "pointmass") throw std::invalid_argument("unknown task '" + task + "'");
  if (!(phi >= 0.0)) throw std::invalid_argument("phi must be nonnegative");
  positive(ensemble_size, "ensemble_size");
  (void)ensemble::aggregation_from_string(ensemble_mode);
  positive(latent_dim, "latent_dim");
  positive(reward_batch_size, "reward_batch_size");
  positive(feedback_every, "feedback_every");
  positive(queries_per_session, "queries_per_session");
  positive(segment_length, "segment_length");
  positive(steps_per_iteration, "steps_per_iteration");
  positive(policy_batch_size, "policy_batch_size");
  positive(replay_capacity, "replay_capacity");
  positive(eval_every, "eval_every");
  positive(eval_episodes, "eval_episodes");
  if (reward_source != "learned" && reward_source != "true") {
    throw std::invalid_argument("reward_source must be 'learned' or 'true'");
  }
  if (discount_order != "late_steps" && discount_order != "early_steps") {
    throw std::invalid_argument("discount_order must be 'late_steps' or 'early_steps'");
  }
  if (pool_file.empty() && pool != "oracle" && pool != "human") {
    std::size_t pos = 0;
    const long long m = std::stoll(pool, &pos);
    if (pos != pool.size() || m <= 0) throw std::invalid_argument("pool must be a positive count, 'oracle' or 'human'");
  }
}

nlohmann::json to_json(const ExperimentConfig& c) {
  return {
      {"task", c.task},
      {"seed", c.seed},
      {"phi", c.phi},
      {"ensemble_size", c.ensemble_size},
      {"ensemble_mode", c.ensemble_mode},
      {"latent_dim", c.latent_dim},
      {"encoder_hidden", c.encoder_hidden},
      {"decoder_hidden", c.decoder_hidden},
      {"reward_learning_rate", c.reward_learning_rate},
      {"reward_batch_size", c.reward_batch_size},
      {"reward_steps", c.reward_steps},
      {"reward_source", c.reward_source},
      {"standardize_rewards", c.standardize_rewards},
      {"feedback_every", c.feedback_every},
      {"queries_per_session", c.queries_per_session},
      {"pool", c.pool},
      {"pool_file", c.pool_file},
      {"discount_order", c.discount_order},
      {"segment_length", c.segment_length},
      {"human_timeout_seconds", c.human_timeout_seconds},
      {"iterations", c.iterations},
      {"steps_per_iteration", c.steps_per_iteration},
      {"policy_steps", c.policy_steps},
      {"policy_batch_size", c.policy_batch_size},
      {"replay_capacity", c.replay_capacity},
      {"tabular",
       {{"learning_rate", c.tabular.learning_rate},
        {"discount", c.tabular.discount},
        {"explore_epsilon", c.tabular.explore_epsilon}}},
      {"actor_critic",
       {{"hidden", c.actor_critic.hidden},
        {"actor_learning_rate", c.actor_critic.actor_learning_rate},
        {"critic_learning_rate", c.actor_critic.critic_learning_rate},
        {"discount", c.actor_critic.discount},
        {"entropy_bonus", c.actor_critic.entropy_bonus}}},
      {"eval_every", c.eval_every},
      {"eval_episodes", c.eval_episodes},
  };
}

namespace {

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

ExperimentConfig config_from_json(const nlohmann::json& j, ExperimentConfig c) {
  static const std::set<std::string> known = [] {
    std::set<std::string> keys;
    const auto defaults = to_json(ExperimentConfig{});
    for (const auto& [k, v] : defaults.items()) keys.insert(k);
    return keys;
  }();
  for (const auto& [k, v] : j.items()) {
    if (!known.contains(k)) throw std::invalid_argument("unknown config key '" + k + "'");
  }
  const auto defaults = to_json(ExperimentConfig{});
  for (const char* group : {"tabular", "actor_critic"}) {
    if (!j.contains(group)) continue;
    if (!j.at(group).is_object()) throw std::invalid_argument(std::string("config key '") + group + "' must be an object");
    for (const auto& [k, v] : j.at(group).items()) {
      if (!defaults.at(group).contains(k)) {
        throw std::invalid_argument("unknown config key '" + std::string(group) + "." + k + "'");
      }
    }
  }
  read(j, "task", c.task);
  read(j, "seed", c.seed);
  read(j, "phi", c.phi);
  read(j, "ensemble_size", c.ensemble_size);
  read(j, "ensemble_mode", c.ensemble_mode);
  read(j, "latent_dim", c.latent_dim);
  read(j, "encoder_hidden", c.encoder_hidden);
  read(j, "decoder_hidden", c.decoder_hidden);
  read(j, "reward_learning_rate", c.reward_learning_rate);
  read(j, "reward_batch_size", c.reward_batch_size);
  read(j, "reward_steps", c.reward_steps);
  read(j, "reward_source", c.reward_source);
  read(j, "standardize_rewards", c.standardize_rewards);
  read(j, "feedback_every", c.feedback_every);
  read(j, "queries_per_session", c.queries_per_session);
  if (j.contains("pool")) {
    const auto& p = j.at("pool");
    c.pool = p.is_number() ? std::to_string(p.get<long long>()) : p.get<std::string>();
  }
  read(j, "pool_file", c.pool_file);
  read(j, "discount_order", c.discount_order);
  read(j, "segment_length", c.segment_length);
  read(j, "human_timeout_seconds", c.human_timeout_seconds);
  read(j, "iterations", c.iterations);
  read(j, "steps_per_iteration", c.steps_per_iteration);
  read(j, "policy_steps", c.policy_steps);
  read(j, "policy_batch_size", c.policy_batch_size);
  read(j, "replay_capacity", c.replay_capacity);
  if (j.contains("tabular")) {
    const auto& t = j.at("tabular");
    read(t, "learning_rate", c.tabular.learning_rate);
    read(t, "discount", c.tabular.discount);
    read(t, "explore_epsilon", c.tabular.explore_epsilon);
  }
  if (j.contains("actor_critic")) {
    const auto& a = j.at("actor_critic");
    read(a, "hidden", c.actor_critic.hidden);
    read(a, "actor_learning_rate", c.actor_critic.actor_learning_rate);
    read(a, "critic_learning_rate", c.actor_critic.critic_learning_rate);
    read(a, "discount", c.actor_critic.discount);
    read(a, "entropy_bonus", c.actor_critic.entropy_bonus);
  }
  read(j, "eval_every", c.eval_every);
  read(j, "eval_episodes", c.eval_episodes);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  return config_from_json(nlohmann::json::parse(in));
}

annotators::AnnotatorPool make_pool(const ExperimentConfig& config) {
  annotators::AnnotatorPool pool;
  if (!config.pool_file.empty()) {
    std::ifstream in(config.pool_file);
    if (!in) throw std::runtime_error("cannot open pool file " + config.pool_file);
    pool = annotators::pool_from_json(nlohmann::json::parse(in));
  } else if (config.pool == "oracle") {
    pool = annotators::oracle_pool();
  } else if (config.pool == "human") {
    throw std::logic_error("a human pool has no scripted annotators");
  } else {
    // The pool depends on the run seed only, so runs that differ in method share annotators.
    pool = annotators::sample_pool(static_cast<std::size_t>(std::stoull(config.pool)), config.seed * 7919 + 17);
  }
  pool.discount_order = config.discount_order == "early_steps" ? annotators::DiscountOrder::early_steps
                                                               : annotators::DiscountOrder::late_steps;
  return pool;
}

reward::RewardModelConfig reward_model_config(const ExperimentConfig& config, std::size_t input_dim) {
  reward::RewardModelConfig rc;
  rc.input_dim = input_dim;
  rc.latent_dim = config.latent_dim;
  rc.encoder_hidden = config.encoder_hidden;
  rc.decoder_hidden = config.decoder_hidden;
  return rc;
}

}  // namespace prefrl::harness
