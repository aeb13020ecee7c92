#include "prefrl/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace prefrl::ensemble {

std::string to_string(Aggregation mode) {
  switch (mode) {
    case Aggregation::kl_confidence:
      return "kl_confidence";
    case Aggregation::mean:
      return "mean";
    case Aggregation::single:
      return "single";
  }
  return "kl_confidence";
}

Aggregation aggregation_from_string(const std::string& name) {
  if (name == "kl_confidence") return Aggregation::kl_confidence;
  if (name == "mean") return Aggregation::mean;
  if (name == "single") return Aggregation::single;
  throw std::invalid_argument("unknown ensemble mode '" + name + "'");
}

RewardEnsemble::RewardEnsemble(const reward::RewardModelConfig& config, std::size_t members, std::uint64_t seed,
                               const diffcore::AdamConfig& adam) {
  if (members == 0) throw std::invalid_argument("ensemble needs at least one member");
  std::seed_seq seq{seed};
  std::vector<std::uint64_t> seeds(2 * members);
  seq.generate(seeds.begin(), seeds.end());
  for (std::size_t i = 0; i < members; ++i) {
    members_.push_back({reward::RewardModel(config, seeds[2 * i]), diffcore::Adam(adam),
                        std::mt19937_64(seeds[2 * i + 1])});
  }
}

RewardEnsemble::RewardEnsemble(std::vector<reward::RewardModel> models, std::uint64_t seed,
                               const diffcore::AdamConfig& adam) {
  for (std::size_t i = 0; i < models.size(); ++i) add_member(std::move(models[i]), seed + i, adam);
}

void RewardEnsemble::add_member(reward::RewardModel model, std::uint64_t seed, const diffcore::AdamConfig& adam) {
  if (!members_.empty() && (model.input_dim() != input_dim() || model.latent_dim() != members_[0].model.latent_dim())) {
    throw diffcore::ShapeError("ensemble members must share input width and latent dimension");
  }
  members_.push_back({std::move(model), diffcore::Adam(adam), std::mt19937_64(seed)});
}

std::size_t RewardEnsemble::input_dim() const { return members_.empty() ? 0 : members_.front().model.input_dim(); }

void RewardEnsemble::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest{{"members", members_.size()}, {"files", nlohmann::json::array()}};
  for (std::size_t i = 0; i < members_.size(); ++i) {
    auto ckpt = members_[i].model.to_checkpoint();
    ckpt.meta["step_count"] = members_[i].optimizer.step_count();
    const std::string name = "member_" + std::to_string(i) + ".ckpt";
    diffcore::save_binary(dir / name, ckpt);
    manifest["files"].push_back(name);
  }
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

RewardEnsemble RewardEnsemble::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("missing ensemble manifest in " + dir.string());
  const auto manifest = nlohmann::json::parse(in);
  RewardEnsemble ens;
  std::uint64_t seed = 0;
  for (const auto& f : manifest.at("files")) {
    ens.add_member(reward::RewardModel::from_checkpoint(diffcore::load_binary(dir / f.get<std::string>())), seed++);
  }
  if (ens.size() == 0) throw std::runtime_error("ensemble manifest lists no members");
  return ens;
}

Tensor member_kl(const RewardEnsemble& ensemble, const Tensor& rows) {
  if (ensemble.size() == 0) throw std::invalid_argument("empty ensemble");
  Tensor out = Tensor::zeros(rows.rows(), ensemble.size());
  for (std::size_t m = 0; m < ensemble.size(); ++m) {
    const auto kls = reward::kl_to_standard(ensemble.model(m).encode(rows));
    for (std::size_t i = 0; i < kls.size(); ++i) out(i, m) = kls[i];
  }
  return out;
}

namespace {

void softmax_rows(Tensor& t) {
  for (std::size_t i = 0; i < t.rows(); ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < t.cols(); ++j) m = std::max(m, t(i, j));
    double total = 0.0;
    for (std::size_t j = 0; j < t.cols(); ++j) {
      t(i, j) = std::exp(t(i, j) - m);
      total += t(i, j);
    }
    for (std::size_t j = 0; j < t.cols(); ++j) {
      // Floor keeps every weight strictly positive when a KL gap exceeds ~745.
      t(i, j) = std::max(t(i, j) / total, std::numeric_limits<double>::min());
    }
  }
}

}  // namespace

Tensor confidence_weights(const RewardEnsemble& ensemble, const Tensor& rows) {
  Tensor w = member_kl(ensemble, rows);
  softmax_rows(w);
  return w;
}

std::vector<double> confidence_weights(const RewardEnsemble& ensemble, std::span<const double> row) {
  const Tensor w = confidence_weights(ensemble, Tensor::row(row));
  return {w.values().begin(), w.values().end()};
}

std::vector<double> ensemble_reward(const RewardEnsemble& ensemble, const Tensor& rows, Aggregation mode) {
  if (ensemble.size() == 0) throw std::invalid_argument("empty ensemble");
  const std::size_t b = rows.rows();
  if (mode == Aggregation::single || ensemble.size() == 1) return ensemble.model(0).reward(rows);

  std::vector<double> out(b, 0.0);
  if (mode == Aggregation::mean) {
    for (std::size_t m = 0; m < ensemble.size(); ++m) {
      const auto r = ensemble.model(m).reward(rows);
      for (std::size_t i = 0; i < b; ++i) out[i] += r[i];
    }
    for (auto& v : out) v /= static_cast<double>(ensemble.size());
    return out;
  }

  Tensor weights = Tensor::zeros(b, ensemble.size());
  std::vector<std::vector<double>> rewards(ensemble.size());
  for (std::size_t m = 0; m < ensemble.size(); ++m) {
    const auto& model = ensemble.model(m);
    const auto g = model.encode(rows);
    const auto kls = reward::kl_to_standard(g);
    const Tensor r = model.decode(g.mean);
    rewards[m].assign(r.values().begin(), r.values().end());
    for (std::size_t i = 0; i < b; ++i) weights(i, m) = kls[i];
  }
  softmax_rows(weights);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t m = 0; m < ensemble.size(); ++m) out[i] += weights(i, m) * rewards[m][i];
  }
  return out;
}

double ensemble_reward(const RewardEnsemble& ensemble, std::span<const double> row, Aggregation mode) {
  return ensemble_reward(ensemble, Tensor::row(row), mode).front();
}

TrainReport train_ensemble(RewardEnsemble& ensemble, const envs::PreferenceBuffer& buffer,
                           const reward::TrainingConfig& config, std::size_t steps) {
  TrainReport report;
  report.member_losses.resize(ensemble.size());
  if (buffer.size() == 0) {
    report.skipped_empty_buffer = true;
    return report;
  }
  if (steps == 0) return report;
  const auto all = buffer.snapshot();
  for (std::size_t m = 0; m < ensemble.size(); ++m) {
    auto& member = ensemble.member(m);
    for (std::size_t s = 0; s < steps; ++s) {
      std::vector<const PreferenceTriple*> picked;
      if (all.size() <= config.batch_size) {
        for (const auto& t : all) picked.push_back(&t);
      } else {
        // Uniform draw without replacement from this member's stream.
        std::vector<std::size_t> idx(all.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        for (std::size_t i = 0; i < config.batch_size; ++i) {
          std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
          std::swap(idx[i], idx[pick(member.rng)]);
          picked.push_back(&all[idx[i]]);
        }
      }
      const auto batch = reward::make_batch(std::span<const PreferenceTriple* const>(picked));
      bool applied = true;
      report.member_losses[m].push_back(member.train_step(batch, config, &applied));
      if (!applied) ++report.rejected_steps;
    }
  }
  return report;
}

}  // namespace prefrl::ensemble
