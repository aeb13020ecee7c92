// Command-line front end: run / sweep / analyze / serve.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "prefrl/harness/analysis.hpp"
#include "prefrl/harness/annotation_service.hpp"
#include "prefrl/harness/config.hpp"
#include "prefrl/harness/experiment.hpp"
#include "prefrl/harness/sweep.hpp"

namespace fs = std::filesystem;
using namespace prefrl;
using namespace prefrl::harness;

namespace {

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  for (std::string item; std::getline(in, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// One "--key" flag per config field; nested objects become "--group.key".
struct ConfigFlags {
  std::string config_file;
  std::map<std::string, std::string> values;

  void add_to(CLI::App& app) {
    app.add_option("--config", config_file, "JSON config file; flags override its values")->check(CLI::ExistingFile);
    const auto defaults = to_json(ExperimentConfig{});
    for (const auto& [key, value] : defaults.items()) {
      if (value.is_object()) {
        for (const auto& [sub, v] : value.items()) add_flag(app, key + "." + sub, v);
      } else {
        add_flag(app, key, value);
      }
    }
  }

  ExperimentConfig resolve() const {
    ExperimentConfig base = config_file.empty() ? ExperimentConfig{} : load_config(config_file);
    const auto defaults = to_json(ExperimentConfig{});
    nlohmann::json overrides = nlohmann::json::object();
    for (const auto& [flag, text] : values) {
      if (text.empty()) continue;
      const auto dot = flag.find('.');
      const std::string group = dot == std::string::npos ? flag : flag.substr(0, dot);
      const nlohmann::json& like = dot == std::string::npos ? defaults.at(flag) : defaults.at(group).at(flag.substr(dot + 1));
      nlohmann::json v;
      if (like.is_string()) {
        v = text;
      } else if (like.is_array()) {
        v = nlohmann::json::array();
        for (const auto& part : split(text)) v.push_back(std::stoull(part));
      } else if (like.is_boolean()) {
        v = text == "true" || text == "1" || text == "on";
      } else {
        v = nlohmann::json::parse(text);
      }
      if (dot == std::string::npos) {
        overrides[flag] = v;
      } else {
        overrides[group][flag.substr(dot + 1)] = v;
      }
    }
    ExperimentConfig c = config_from_json(overrides, base);
    c.validate();
    return c;
  }

 private:
  void add_flag(CLI::App& app, const std::string& name, const nlohmann::json& def) {
    const std::string shown = def.is_string() ? def.get<std::string>() : def.dump();
    app.add_option("--" + name, values[name], "default " + shown);
  }
};

int run_command(const ConfigFlags& flags, const std::string& out, int port) {
  const ExperimentConfig config = flags.resolve();
  RunOptions options;
  options.run_dir = out;
  options.on_event = [](const std::string& msg) { std::cerr << msg << '\n'; };
  std::unique_ptr<envs::PreferenceBuffer> buffer;
  std::unique_ptr<AnnotationService> service;
  std::unique_ptr<AnnotationServer> server;
  if (config.human_pool()) {
    buffer = std::make_unique<envs::PreferenceBuffer>();
    service = std::make_unique<AnnotationService>(*buffer, envs::make_task(config.task)->meta());
    server = std::make_unique<AnnotationServer>(*service);
    const int bound = server->start("127.0.0.1", port);
    std::cerr << "annotation API on http://127.0.0.1:" << bound << "/api/\n";
    options.annotation = service.get();
  }
  const auto result = run_experiment(config, options);
  std::cout << "final_return " << result.final_return() << '\n';
  if (!result.records.empty() && result.records.back().optimal_return) {
    std::cout << "optimal_return " << *result.records.back().optimal_return << '\n';
  }
  std::cout << "labels " << result.labels_collected << '\n';
  return 0;
}

int sweep_command(const ConfigFlags& flags, const std::string& axis, const std::string& values,
                  const std::string& seeds, const std::string& out) {
  const ExperimentConfig config = flags.resolve();
  std::vector<std::uint64_t> seed_list;
  for (const auto& s : split(seeds)) seed_list.push_back(std::stoull(s));
  const auto result = sweep(config, axis, split(values), seed_list, out);
  std::cout << "value,runs,mean_final_return,std_final_return\n";
  for (const auto& s : result.summary) {
    std::cout << s.value << ',' << s.completed << ',' << s.mean_final_return << ',' << s.std_final_return << '\n';
  }
  for (const auto& r : result.runs) {
    if (!r.ok) std::cerr << "run " << axis << "=" << r.value << " seed " << r.seed << " failed: " << r.error << '\n';
  }
  return 0;
}

int analyze_command(const ConfigFlags& flags, const std::vector<std::string>& ensembles, const std::string& phis,
                    std::size_t pairs, std::size_t steps, const std::string& out) {
  const ExperimentConfig config = flags.resolve();
  const auto task = envs::make_task(config.task);
  const auto probes = make_probe_set(*task);

  std::vector<std::pair<double, ensemble::RewardEnsemble>> trained;
  if (!ensembles.empty()) {
    for (const auto& spec : ensembles) {
      const auto colon = spec.find(':');
      if (colon == std::string::npos) throw std::invalid_argument("--ensemble expects PHI:DIR, got '" + spec + "'");
      trained.emplace_back(std::stod(spec.substr(0, colon)), ensemble::RewardEnsemble::load(spec.substr(colon + 1)));
    }
  } else {
    const auto triples = synthetic_preferences(*task, pairs, config.segment_length, config.seed);
    for (const auto& p : split(phis)) {
      reward::TrainingConfig training;
      training.phi = std::stod(p);
      training.batch_size = config.reward_batch_size;
      training.adam.learning_rate = config.reward_learning_rate;
      std::cerr << "training phi=" << p << '\n';
      trained.emplace_back(training.phi, train_on_fixed_set(reward_model_config(config, task->feature_dim()),
                                                            config.members(), config.seed, triples, training, steps));
    }
  }
  std::vector<std::pair<double, const ensemble::RewardEnsemble*>> refs;
  std::vector<std::pair<double, LatentReport>> latents;
  for (const auto& [phi, ens] : trained) {
    refs.emplace_back(phi, &ens);
    latents.emplace_back(phi, analyze_latents(ens, probes.rows));
  }
  const auto ranges = analyze_reward_range(refs, probes.rows, 20, config.aggregation());
  write_analysis(out, ranges, latents);
  std::cout << "phi,min,max,range,spread,mean_kl\n";
  for (std::size_t i = 0; i < trained.size(); ++i) {
    const auto& e = ranges.entries[i];
    std::cout << e.phi << ',' << e.min << ',' << e.max << ',' << e.range << ',' << latents[i].second.spread << ','
              << latents[i].second.mean_kl << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Preference-based RL from diverse annotators"};
  app.require_subcommand(1);

  std::string out = "runs/latest";
  int port = 8080;

  ConfigFlags run_flags;
  auto* run = app.add_subcommand("run", "Run one experiment");
  run_flags.add_to(*run);
  run->add_option("--out", out, "run directory");
  run->add_option("--port", port, "annotation API port when pool is human (0 picks a free port)");

  ConfigFlags sweep_flags;
  std::string axis = "phi", values, seeds = "1,2,3,4,5";
  auto* sw = app.add_subcommand("sweep", "Run one experiment per (value, seed)");
  sweep_flags.add_to(*sw);
  sw->add_option("--axis", axis, "phi | pool_size | ensemble_mode")->check(CLI::IsMember({"phi", "pool_size", "ensemble_mode"}));
  sw->add_option("--values", values, "comma-separated axis values")->required();
  sw->add_option("--seeds", seeds, "comma-separated seeds");
  sw->add_option("--out", out, "sweep directory");

  ConfigFlags analyze_flags;
  std::vector<std::string> ensembles;
  std::string phis = "1,10,100";
  std::size_t pairs = 512, steps = 400;
  auto* an = app.add_subcommand("analyze", "Reward-range and latent analysis across phi");
  analyze_flags.add_to(*an);
  an->add_option("--ensemble", ensembles, "PHI:DIR of a saved ensemble (repeatable); default trains on a synthetic set");
  an->add_option("--phis", phis, "phi values to train when no ensembles are given");
  an->add_option("--pairs", pairs, "synthetic preference pairs");
  an->add_option("--steps", steps, "reward steps per member");
  an->add_option("--out", out, "analysis directory");

  ConfigFlags serve_flags;
  auto* serve = app.add_subcommand("serve", "Run with human annotators through the HTTP API");
  serve_flags.add_to(*serve);
  serve->add_option("--out", out, "run directory");
  serve->add_option("--port", port, "annotation API port");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return run_command(run_flags, out, port);
    if (*sw) return sweep_command(sweep_flags, axis, values, seeds, out);
    if (*an) return analyze_command(analyze_flags, ensembles, phis, pairs, steps, out);
    if (*serve) {
      serve_flags.values["pool"] = "human";
      serve_flags.values["pool_file"] = "";
      return run_command(serve_flags, out, port);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
