#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "prefrl/envs.hpp"
#include "prefrl/reward_model.hpp"

namespace prefrl::ensemble {

enum class Aggregation {
  kl_confidence,  // softmax over members of KL(p_i(z|s,a) || N(0,I))
  mean,           // uniform weights
  single,         // first member only
};

std::string to_string(Aggregation mode);
Aggregation aggregation_from_string(const std::string& name);

/// N independently initialized reward models, each with its own optimizer state and RNG stream.
class RewardEnsemble {
 public:
  RewardEnsemble() = default;
  RewardEnsemble(const reward::RewardModelConfig& config, std::size_t members, std::uint64_t seed,
                 const diffcore::AdamConfig& adam = {});
  explicit RewardEnsemble(std::vector<reward::RewardModel> models, std::uint64_t seed = 0,
                          const diffcore::AdamConfig& adam = {});

  std::size_t size() const { return members_.size(); }
  std::size_t input_dim() const;
  reward::RewardModel& model(std::size_t i) { return members_.at(i).model; }
  const reward::RewardModel& model(std::size_t i) const { return members_.at(i).model; }
  reward::TrainableRewardModel& member(std::size_t i) { return members_.at(i); }
  void add_member(reward::RewardModel model, std::uint64_t seed, const diffcore::AdamConfig& adam = {});

  /// Writes member_<i>.ckpt plus manifest.json into `dir`.
  void save(const std::filesystem::path& dir) const;
  static RewardEnsemble load(const std::filesystem::path& dir);

 private:
  std::vector<reward::TrainableRewardModel> members_;
};

/// B x N matrix of per-input member weights; each row is positive and sums to one.
Tensor confidence_weights(const RewardEnsemble& ensemble, const Tensor& rows);
std::vector<double> confidence_weights(const RewardEnsemble& ensemble, std::span<const double> row);

/// Weighted member rewards, decoded from latent means.
std::vector<double> ensemble_reward(const RewardEnsemble& ensemble, const Tensor& rows,
                                    Aggregation mode = Aggregation::kl_confidence);
double ensemble_reward(const RewardEnsemble& ensemble, std::span<const double> row,
                       Aggregation mode = Aggregation::kl_confidence);

/// Per-member KL of the latent mean posterior, B x N.
Tensor member_kl(const RewardEnsemble& ensemble, const Tensor& rows);

struct TrainReport {
  std::vector<std::vector<reward::LossValues>> member_losses;  // [member][step]
  std::size_t rejected_steps = 0;
  bool skipped_empty_buffer = false;
};

/// Each member draws its own minibatches from the buffer with its own RNG
/// stream and takes `steps` optimizer steps on the combined loss.
TrainReport train_ensemble(RewardEnsemble& ensemble, const envs::PreferenceBuffer& buffer,
                           const reward::TrainingConfig& config, std::size_t steps);

}  // namespace prefrl::ensemble
