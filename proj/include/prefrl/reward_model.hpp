#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "prefrl/diffcore/adam.hpp"
#include "prefrl/diffcore/checkpoint.hpp"
#include "prefrl/diffcore/mlp.hpp"
#include "prefrl/types.hpp"

namespace prefrl::reward {

using diffcore::Tape;
using diffcore::Var;

/// Diagonal Gaussian per input row: mean and log-variance, both B x K.
struct LatentGaussian {
  Tensor mean;
  Tensor log_variance;

  std::size_t batch() const { return mean.rows(); }
  std::size_t dim() const { return mean.cols(); }
};

/// KL(N(mean, exp(log_var)) || N(0, I)) = 1/2 sum_k (mu^2 + s^2 - log s^2 - 1).
double kl_to_standard(std::span<const double> mean, std::span<const double> log_variance);
/// One KL value per row.
std::vector<double> kl_to_standard(const LatentGaussian& g);

/// z = mean + exp(log_var / 2) * noise, row by row.
Tensor sample_latent(const LatentGaussian& g, const Tensor& noise);

struct RewardModelConfig {
  std::size_t input_dim = 0;
  std::size_t latent_dim = 16;
  std::vector<std::size_t> encoder_hidden{64, 64};
  std::vector<std::size_t> decoder_hidden{64};
  diffcore::Activation activation = diffcore::Activation::tanh;
  /// Log-variance head output is squashed into (-limit, limit).
  double log_variance_limit = 8.0;
};

/// Encoder p(z|s,a) with a shared trunk and mean / log-variance heads, plus a
/// decoder mapping a latent sample to a scalar reward.
class RewardModel {
 public:
  RewardModel() = default;
  RewardModel(RewardModelConfig config, std::uint64_t seed);
  RewardModel(RewardModelConfig config, diffcore::Mlp trunk, diffcore::Mlp mean_head, diffcore::Mlp log_var_head,
              diffcore::Mlp decoder);

  const RewardModelConfig& config() const { return config_; }
  std::size_t input_dim() const { return config_.input_dim; }
  std::size_t latent_dim() const { return config_.latent_dim; }

  LatentGaussian encode(const Tensor& rows) const;
  Tensor decode(const Tensor& latents) const;
  /// Inference reward: decoder applied to the latent mean. Returns B values.
  std::vector<double> reward(const Tensor& rows) const;

  struct EncodedVars {
    Var mean;
    Var log_variance;
  };
  EncodedVars encode(Tape& tape, Var rows);
  Var decode(Tape& tape, Var latents);

  std::vector<diffcore::Parameter*> parameters();

  diffcore::Mlp& trunk() { return trunk_; }
  diffcore::Mlp& mean_head() { return mean_head_; }
  diffcore::Mlp& log_variance_head() { return log_var_head_; }
  diffcore::Mlp& decoder() { return decoder_; }

  diffcore::Checkpoint to_checkpoint() const;
  static RewardModel from_checkpoint(const diffcore::Checkpoint& ckpt);

 private:
  void check_rows(const Tensor& rows) const;
  Tensor trunk_forward(const Tensor& rows) const;

  RewardModelConfig config_;
  diffcore::Mlp trunk_;  // may be empty when encoder_hidden is empty
  diffcore::Mlp mean_head_;
  diffcore::Mlp log_var_head_;
  diffcore::Mlp decoder_;
};

/// Summed predicted reward per segment, using latent means.
double segment_return(const RewardModel& model, const Segment& segment);

/// P[second > first] under the Bradley-Terry model on summed rewards.
double preference_probability(double first_return, double second_return);
double predict_preference(const RewardModel& model, const Segment& first, const Segment& second);

/// Minibatch of preference triples flattened for one differentiable pass.
/// Distinct feature rows are evaluated once; `counts` maps them back to segments.
struct PreferenceBatch {
  Tensor rows;        // U x input_dim, distinct (s,a) feature rows
  Tensor counts;      // 2B x U; row 2i is sigma^0 of pair i, row 2i+1 is sigma^1
  Tensor occurrence;  // 1 x U, share of all segment steps that land on each row
  std::vector<std::size_t> step_rows;  // S, distinct row of each step, segments in order
  Tensor step_segments;                // 2B x S, segment membership of each step
  Tensor labels;  // B x 2
  std::size_t pairs() const { return labels.rows(); }
  std::size_t steps() const { return step_rows.size(); }
};

PreferenceBatch make_batch(std::span<const PreferenceTriple* const> triples);
PreferenceBatch make_batch(std::span<const PreferenceTriple> triples);

struct LossVars {
  Var supervised;  // L_s
  Var constraint;  // L_c, KL averaged over every step of every segment
  Var total;       // phi * L_c + L_s
};

/// Records the combined loss. `noise` is S x K standard-normal, one latent per
/// segment step; all zeros evaluates the supervised term on latent means.
LossVars record_losses(Tape& tape, RewardModel& model, const PreferenceBatch& batch, const Tensor& noise,
                       double phi);

struct LossValues {
  double supervised = 0.0;
  double constraint = 0.0;
  double total = 0.0;
};

/// Loss values on latent means (no sampling, nothing recorded for training).
LossValues evaluate_losses(const RewardModel& model, const PreferenceBatch& batch, double phi);
double supervised_loss(const RewardModel& model, std::span<const PreferenceTriple> triples);
double latent_kl_loss(const RewardModel& model, const Tensor& rows);

struct TrainingConfig {
  double phi = 100.0;
  std::size_t batch_size = 64;
  std::size_t latent_samples = 1;
  diffcore::AdamConfig adam{};
};

/// Model plus everything needed to continue training it deterministically.
struct TrainableRewardModel {
  RewardModel model;
  diffcore::Adam optimizer;
  std::mt19937_64 rng;

  /// One optimizer step on the given minibatch; returns losses before the step.
  LossValues train_step(const PreferenceBatch& batch, const TrainingConfig& config, bool* applied = nullptr);
};

/// Discrete instance for the information-bound check.
struct DiscreteLatentSpec {
  std::vector<double> p_x;                       // |X|
  std::vector<std::vector<double>> p_z_given_x;  // |X| x |Z|
  std::vector<double> r_z;                       // |Z|
};

struct MiBoundResult {
  double constraint = 0.0;          // sum_x p(x) KL(p(z|x) || r(z))
  double mutual_information = 0.0;  // I(Z;X)
  bool bound_holds = false;         // constraint >= I - 1e-9
};

/// Enumerates the constraint term and I(Z;X) exactly. Throws
/// std::invalid_argument on tables that do not sum to one within 1e-12.
MiBoundResult verify_mi_bound(const DiscreteLatentSpec& spec);

}  // namespace prefrl::reward
