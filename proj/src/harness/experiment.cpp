#include "prefrl/harness/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "prefrl/agent.hpp"
#include "prefrl/annotators.hpp"
#include "prefrl/envs.hpp"

namespace prefrl::harness {

namespace fs = std::filesystem;

namespace {

// Independent RNG stream per purpose, so changing one consumer never shifts another.
enum Stream : std::uint64_t { env_stream = 1, query_stream, label_stream, policy_stream, eval_stream, ensemble_stream };

std::mt19937_64 make_stream(std::uint64_t seed, Stream id) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(id)};
  return std::mt19937_64(seq);
}

std::uint64_t stream_seed(std::uint64_t seed, Stream id) { return make_stream(seed, id)(); }

std::string fmt(double v) {
  std::ostringstream out;
  out << std::setprecision(10) << v;
  return out.str();
}

class Learner {
 public:
  virtual ~Learner() = default;
  virtual int act(const std::vector<double>& state, agent::ActMode mode, std::mt19937_64& rng) = 0;
  virtual bool update(std::span<const agent::RelabeledTransition> batch) = 0;
  virtual diffcore::Checkpoint checkpoint() const = 0;
};

class TabularLearner final : public Learner {
 public:
  TabularLearner(const envs::GridWorld& world, agent::TabularConfig config)
      : world_(world), q_(world.num_states(), world.num_actions(), config) {}

  int act(const std::vector<double>& state, agent::ActMode mode, std::mt19937_64& rng) override {
    return q_.act(world_.state_index(state), mode, rng);
  }
  bool update(std::span<const agent::RelabeledTransition> batch) override {
    std::vector<std::size_t> s, n;
    s.reserve(batch.size());
    n.reserve(batch.size());
    for (const auto& r : batch) {
      s.push_back(world_.state_index(r.transition.state));
      n.push_back(world_.state_index(r.transition.next_state));
    }
    return q_.update(batch, s, n);
  }
  diffcore::Checkpoint checkpoint() const override { return q_.to_checkpoint(); }

 private:
  const envs::GridWorld& world_;
  agent::TabularQ q_;
};

class ActorCriticLearner final : public Learner {
 public:
  ActorCriticLearner(const envs::Task& task, agent::ActorCriticConfig config, std::uint64_t seed)
      : ac_(task.state_dim(), task.num_actions(), std::move(config), seed) {}

  int act(const std::vector<double>& state, agent::ActMode mode, std::mt19937_64& rng) override {
    return ac_.act(state, mode, rng);
  }
  bool update(std::span<const agent::RelabeledTransition> batch) override { return ac_.update(batch); }
  diffcore::Checkpoint checkpoint() const override { return ac_.to_checkpoint(); }

 private:
  agent::ActorCritic ac_;
};

nlohmann::json segment_ref(const Segment& s) {
  return {{"episode", s.episode_id}, {"start_t", s.start_t}, {"true_return", s.true_return()}};
}

struct Evaluation {
  double mean_return = 0.0;
  double success_rate = 0.0;
};

Evaluation evaluate(const envs::Task& task, Learner& learner, const std::vector<std::vector<double>>& starts) {
  const auto* grid = dynamic_cast<const envs::GridWorld*>(&task);
  std::mt19937_64 unused(0);
  Evaluation e;
  for (const auto& start : starts) {
    std::vector<double> state = start;
    double ret = 0.0;
    bool success = false;
    for (std::size_t t = 0; t < task.episode_length(); ++t) {
      const auto tr = task.step(state, learner.act(state, agent::ActMode::greedy, unused));
      ret += tr.true_reward;
      state = tr.next_state;
      if (grid && grid->is_goal(grid->state_index(state))) success = true;
    }
    if (!grid) {
      const auto goal = dynamic_cast<const envs::PointMass&>(task).config().goal;
      success = std::hypot(state[0] - goal.first, state[1] - goal.second) < 0.1;
    }
    e.mean_return += ret;
    e.success_rate += success ? 1.0 : 0.0;
  }
  e.mean_return /= static_cast<double>(starts.size());
  e.success_rate /= static_cast<double>(starts.size());
  return e;
}

Tensor probe_rows(const envs::Task& task) {
  const auto probes = task.probe_set();
  Tensor rows = Tensor::zeros(probes.size(), task.feature_dim());
  for (std::size_t i = 0; i < probes.size(); ++i) {
    const auto f = task.features(probes[i].first, probes[i].second);
    std::copy(f.begin(), f.end(), rows.data() + i * task.feature_dim());
  }
  return rows;
}

}  // namespace

std::string metrics_header() {
  return "iteration,env_steps,eval_return,success_rate,optimal_return,loss_s,loss_c,loss_total,mean_kl,member_kl,"
         "probe_min,probe_max,probe_mean,labels_collected";
}

std::string metrics_row(const MetricsRecord& r) {
  std::ostringstream out;
  out << r.iteration << ',' << r.env_steps << ',' << fmt(r.eval_return) << ',' << fmt(r.success_rate) << ','
      << (r.optimal_return ? fmt(*r.optimal_return) : std::string()) << ',' << fmt(r.losses.supervised) << ','
      << fmt(r.losses.constraint) << ',' << fmt(r.losses.total) << ',' << fmt(r.mean_kl) << ',';
  for (std::size_t i = 0; i < r.member_kl.size(); ++i) out << (i ? ";" : "") << fmt(r.member_kl[i]);
  out << ',' << fmt(r.probe_min) << ',' << fmt(r.probe_max) << ',' << fmt(r.probe_mean) << ','
      << r.labels_collected;
  return out.str();
}

RunResult run_experiment(const ExperimentConfig& config, const RunOptions& options) {
  config.validate();
  const bool human = config.human_pool();
  if (human && !options.annotation) throw std::invalid_argument("the human pool needs an annotation service");
  const bool learned = config.reward_source == "learned";

  const auto task = envs::make_task(config.task);
  const auto* grid = dynamic_cast<const envs::GridWorld*>(task.get());
  const bool write = !options.run_dir.empty();

  std::ofstream metrics_out, events_out, prefs_out;
  if (write) {
    fs::create_directories(options.run_dir);
    std::ofstream(options.run_dir / "config.json") << to_json(config).dump(2) << '\n';
    metrics_out.open(options.run_dir / "metrics.csv");
    events_out.open(options.run_dir / "events.log");
    prefs_out.open(options.run_dir / "preferences.jsonl");
    if (!metrics_out || !events_out || !prefs_out) {
      throw std::runtime_error("cannot write into run directory " + options.run_dir.string());
    }
    metrics_out << metrics_header() << '\n';
  }
  const auto started = std::chrono::steady_clock::now();
  auto event = [&](const std::string& msg) {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    if (write) events_out << std::fixed << std::setprecision(3) << secs << "s " << msg << std::endl;
    if (options.on_event) options.on_event(msg);
  };

  annotators::AnnotatorPool pool;
  if (learned && !human) {
    pool = make_pool(config);
    if (write) std::ofstream(options.run_dir / "pool.json") << annotators::pool_to_json(pool).dump() << '\n';
  }

  auto env_rng = make_stream(config.seed, env_stream);
  auto query_rng = make_stream(config.seed, query_stream);
  auto label_rng = make_stream(config.seed, label_stream);
  auto policy_rng = make_stream(config.seed, policy_stream);
  auto eval_rng = make_stream(config.seed, eval_stream);

  diffcore::AdamConfig adam;
  adam.learning_rate = config.reward_learning_rate;
  RunResult result;
  result.ensemble = ensemble::RewardEnsemble(reward_model_config(config, task->feature_dim()), config.members(),
                                             stream_seed(config.seed, ensemble_stream), adam);
  const auto mode = config.aggregation();
  agent::RewardRelabeler relabeler(result.ensemble, mode);

  std::unique_ptr<Learner> learner;
  if (grid) {
    learner = std::make_unique<TabularLearner>(*grid, config.tabular);
  } else {
    learner = std::make_unique<ActorCriticLearner>(*task, config.actor_critic, stream_seed(config.seed, policy_stream));
  }

  envs::ReplayBuffer replay(config.replay_capacity);
  envs::PreferenceBuffer own_prefs;
  envs::PreferenceBuffer& prefs = human ? options.annotation->buffer() : own_prefs;
  envs::NormalizationStats stats;

  reward::TrainingConfig train_cfg;
  train_cfg.phi = config.phi;
  train_cfg.batch_size = config.reward_batch_size;
  train_cfg.adam = adam;

  std::vector<std::vector<double>> eval_starts;
  for (std::size_t i = 0; i < config.eval_episodes; ++i) eval_starts.push_back(task->initial_state(eval_rng));
  std::optional<double> optimal;
  if (grid) {
    const auto best = grid->optimal_returns(grid->episode_length());
    double sum = 0.0;
    for (const auto& s : eval_starts) sum += best[grid->state_index(s)];
    optimal = sum / static_cast<double>(eval_starts.size());
  }
  const Tensor probes = probe_rows(*task);

  reward::LossValues last_losses;
  bool restandardize = true;
  std::uint64_t episode = 0;
  std::size_t t_in_episode = 0;
  std::size_t env_steps = 0;
  std::vector<double> state = task->initial_state(env_rng);

  auto record = [&](std::size_t iteration) {
    MetricsRecord r;
    r.iteration = iteration;
    r.env_steps = env_steps;
    const auto e = evaluate(*task, *learner, eval_starts);
    r.eval_return = e.mean_return;
    r.success_rate = e.success_rate;
    r.optimal_return = optimal;
    r.losses = last_losses;
    const Tensor kl = ensemble::member_kl(result.ensemble, probes);
    r.member_kl.assign(kl.cols(), 0.0);
    for (std::size_t i = 0; i < kl.rows(); ++i) {
      for (std::size_t m = 0; m < kl.cols(); ++m) r.member_kl[m] += kl(i, m) / static_cast<double>(kl.rows());
    }
    r.mean_kl = std::accumulate(r.member_kl.begin(), r.member_kl.end(), 0.0) / static_cast<double>(r.member_kl.size());
    const auto pr = ensemble::ensemble_reward(result.ensemble, probes, mode);
    r.probe_min = *std::min_element(pr.begin(), pr.end());
    r.probe_max = *std::max_element(pr.begin(), pr.end());
    r.probe_mean = std::accumulate(pr.begin(), pr.end(), 0.0) / static_cast<double>(pr.size());
    r.labels_collected = prefs.size();
    if (write) metrics_out << metrics_row(r) << std::endl;
    if (options.annotation) options.annotation->set_progress(iteration, r.eval_return);
    result.records.push_back(std::move(r));
  };

  auto feedback_session = [&](std::size_t iteration) {
    auto queries = envs::sample_query_pairs(replay, config.queries_per_session, config.segment_length, query_rng);
    if (queries.size() < config.queries_per_session) {
      event("warning: iteration " + std::to_string(iteration) + " sampled " + std::to_string(queries.size()) + " of " +
            std::to_string(config.queries_per_session) + " queries");
    }
    const std::size_t before = prefs.size();
    if (!queries.empty()) {
      if (human) {
        const auto ids = options.annotation->publish(std::move(queries));
        const auto timeout = std::chrono::milliseconds(static_cast<long long>(config.human_timeout_seconds * 1000.0));
        const std::size_t got = options.annotation->wait_for(ids, timeout);
        if (got < ids.size()) {
          event("warning: " + std::to_string(ids.size() - got) + " queries unlabeled at timeout");
        }
      } else {
        for (const auto& [a, b] : queries) {
          stats.observe(a.true_return());
          stats.observe(b.true_return());
        }
        auto triples = annotators::label_batch(pool, queries, stats, label_rng);
        prefs.append(std::move(triples));
      }
    }
    if (write) {
      for (std::size_t i = before; i < prefs.size(); ++i) {
        const auto t = prefs.at(i);
        prefs_out << nlohmann::json{{"iteration", iteration},
                                    {"annotator", t.annotator},
                                    {"label", t.label.name()},
                                    {"segment0", segment_ref(t.first)},
                                    {"segment1", segment_ref(t.second)}}
                         .dump()
                  << '\n';
      }
      prefs_out.flush();
    }
    const auto report = ensemble::train_ensemble(result.ensemble, prefs, train_cfg, config.reward_steps);
    if (report.skipped_empty_buffer) {
      event("warning: iteration " + std::to_string(iteration) + " reward training skipped, preference buffer empty");
      return;
    }
    ++result.feedback_sessions;
    if (report.rejected_steps > 0) {
      event("warning: " + std::to_string(report.rejected_steps) + " reward steps rejected (non-finite gradient)");
    }
    last_losses = {};
    std::size_t n = 0;
    for (const auto& trace : report.member_losses) {
      if (trace.empty()) continue;
      last_losses.supervised += trace.back().supervised;
      last_losses.constraint += trace.back().constraint;
      last_losses.total += trace.back().total;
      ++n;
    }
    if (n > 0) {
      last_losses.supervised /= static_cast<double>(n);
      last_losses.constraint /= static_cast<double>(n);
      last_losses.total /= static_cast<double>(n);
    }
    relabeler.clear();
    restandardize = true;
    event("feedback session at iteration " + std::to_string(iteration) + ": " + std::to_string(prefs.size()) +
          " labels, L=" + fmt(last_losses.total));
  };

  event("run started: task=" + config.task + " seed=" + std::to_string(config.seed));
  try {
    for (std::size_t it = 0; it < config.iterations; ++it) {
      if (learned && it % config.feedback_every == 0) feedback_session(it);

      for (std::size_t k = 0; k < config.steps_per_iteration; ++k) {
        auto tr = task->step(state, learner->act(state, agent::ActMode::explore, policy_rng));
        tr.episode_id = episode;
        tr.t = t_in_episode;
        state = tr.next_state;
        replay.push(std::move(tr));
        ++env_steps;
        if (++t_in_episode == task->episode_length()) {
          ++episode;
          t_in_episode = 0;
          state = task->initial_state(env_rng);
        }
      }

      if (learned && restandardize) {
        relabeler.clear();
        if (config.standardize_rewards) relabeler.standardize_on(replay.snapshot());
        restandardize = false;
      }
      for (std::size_t k = 0; k < config.policy_steps; ++k) {
        const auto batch = replay.sample(config.policy_batch_size, policy_rng);
        const auto labeled = learned ? relabeler.relabel(batch) : agent::with_true_rewards(batch);
        if (!learner->update(labeled)) {
          ++result.rejected_policy_steps;
          event("warning: policy update rejected at iteration " + std::to_string(it));
        }
      }

      if ((it + 1) % config.eval_every == 0 || it + 1 == config.iterations) record(it + 1);
    }
  } catch (const std::exception& e) {
    event(std::string("error: ") + e.what());
    throw;
  }

  result.labels_collected = prefs.size();
  if (write) {
    result.ensemble.save(options.run_dir / "ensemble");
    diffcore::save_binary(options.run_dir / "policy.ckpt", learner->checkpoint());
  }
  event("run finished: final_return=" + fmt(result.final_return()));
  return result;
}

}  // namespace prefrl::harness
