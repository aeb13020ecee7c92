#include "prefrl/harness/sweep.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <stdexcept>

namespace prefrl::harness {

ExperimentConfig apply_axis(ExperimentConfig config, const std::string& axis, const std::string& value) {
  if (axis == "phi") {
    std::size_t pos = 0;
    config.phi = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("phi value '" + value + "' is not a number");
  } else if (axis == "pool_size") {
    config.pool = value;
    config.pool_file.clear();
  } else if (axis == "ensemble_mode") {
    config.ensemble_mode = value;
  } else {
    throw std::invalid_argument("unknown sweep axis '" + axis + "' (phi, pool_size, ensemble_mode)");
  }
  config.validate();
  return config;
}

namespace {

std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  return {mean, v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0};
}

}  // namespace

SweepResult sweep(const ExperimentConfig& base, const std::string& axis, const std::vector<std::string>& values,
                  const std::vector<std::uint64_t>& seeds, const std::filesystem::path& out_dir) {
  if (values.empty()) throw std::invalid_argument("sweep needs at least one value");
  if (seeds.empty()) throw std::invalid_argument("sweep needs at least one seed");
  SweepResult result;
  result.axis = axis;
  // Validate every value before spending time on runs.
  std::vector<ExperimentConfig> configs;
  for (const auto& v : values) configs.push_back(apply_axis(base, axis, v));

  for (std::size_t i = 0; i < values.size(); ++i) {
    for (auto seed : seeds) {
      SweepRun run;
      run.value = values[i];
      run.seed = seed;
      ExperimentConfig c = configs[i];
      c.seed = seed;
      RunOptions options;
      if (!out_dir.empty()) options.run_dir = out_dir / (axis + "=" + values[i]) / ("seed_" + std::to_string(seed));
      try {
        auto r = run_experiment(c, options);
        run.final_return = r.final_return();
        run.records = std::move(r.records);
        run.ok = true;
      } catch (const std::exception& e) {
        run.error = e.what();
      }
      result.runs.push_back(std::move(run));
    }
  }

  for (const auto& v : values) {
    std::vector<double> finals;
    for (const auto& r : result.runs) {
      if (r.value == v && r.ok) finals.push_back(r.final_return);
    }
    const auto [m, s] = mean_std(finals);
    result.summary.push_back({v, finals.size(), m, s});
  }

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    std::ofstream table(out_dir / "sweep.csv");
    table << std::setprecision(10) << "axis,value,seed,status,final_return,error\n";
    for (const auto& r : result.runs) {
      std::string err = r.error;
      for (char& ch : err) {
        if (ch == ',' || ch == '\n') ch = ' ';
      }
      table << axis << ',' << r.value << ',' << r.seed << ',' << (r.ok ? "ok" : "failed") << ','
            << (r.ok ? r.final_return : std::nan("")) << ',' << err << '\n';
    }
    std::ofstream curves(out_dir / "curves.csv");
    curves << std::setprecision(10) << "axis,value,iteration,runs,mean_return,std_return\n";
    for (const auto& v : values) {
      std::map<std::size_t, std::vector<double>> by_iter;
      for (const auto& r : result.runs) {
        if (r.value != v || !r.ok) continue;
        for (const auto& m : r.records) by_iter[m.iteration].push_back(m.eval_return);
      }
      for (const auto& [it, returns] : by_iter) {
        const auto [m, s] = mean_std(returns);
        curves << axis << ',' << v << ',' << it << ',' << returns.size() << ',' << m << ',' << s << '\n';
      }
    }
  }
  return result;
}

}  // namespace prefrl::harness
