#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "prefrl/harness/experiment.hpp"

namespace prefrl::harness {

/// Config with one sweep axis set: "phi", "pool_size" or "ensemble_mode".
ExperimentConfig apply_axis(ExperimentConfig config, const std::string& axis, const std::string& value);

struct SweepRun {
  std::string value;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  std::vector<MetricsRecord> records;
  double final_return = 0.0;
};

struct SweepSummary {
  std::string value;
  std::size_t completed = 0;
  double mean_final_return = 0.0;
  double std_final_return = 0.0;
};

struct SweepResult {
  std::string axis;
  std::vector<SweepRun> runs;
  std::vector<SweepSummary> summary;  // one per value, in input order
};

/// Runs every (value, seed) pair. A failing run is recorded and the sweep
/// continues. With a non-empty `out_dir`, each run writes into
/// out_dir/<axis>=<value>/seed_<seed>, and sweep.csv (final return per run)
/// plus curves.csv (mean and std per evaluation point) are written at the end.
SweepResult sweep(const ExperimentConfig& base, const std::string& axis, const std::vector<std::string>& values,
                  const std::vector<std::uint64_t>& seeds, const std::filesystem::path& out_dir = {});

}  // namespace prefrl::harness
