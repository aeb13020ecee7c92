#include "prefrl/reward_model.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_map>

namespace prefrl::reward {

using diffcore::Mlp;
using diffcore::ShapeError;

double kl_to_standard(std::span<const double> mean, std::span<const double> log_variance) {
  if (mean.size() != log_variance.size()) throw ShapeError("mean and log-variance lengths differ");
  double kl = 0.0;
  for (std::size_t k = 0; k < mean.size(); ++k) {
    kl += mean[k] * mean[k] + std::exp(log_variance[k]) - log_variance[k] - 1.0;
  }
  return 0.5 * kl;
}

std::vector<double> kl_to_standard(const LatentGaussian& g) {
  std::vector<double> out(g.batch());
  for (std::size_t i = 0; i < g.batch(); ++i) out[i] = kl_to_standard(g.mean.row_view(i), g.log_variance.row_view(i));
  return out;
}

Tensor sample_latent(const LatentGaussian& g, const Tensor& noise) {
  if (noise.rows() != g.batch() || noise.cols() != g.dim()) {
    throw ShapeError("noise " + noise.shape_string() + " does not match latent batch " + g.mean.shape_string());
  }
  Tensor z = Tensor::zeros(g.batch(), g.dim());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = g.mean[i] + std::exp(0.5 * g.log_variance[i]) * noise[i];
  return z;
}

RewardModel::RewardModel(RewardModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  if (config_.input_dim == 0 || config_.latent_dim == 0) {
    throw std::invalid_argument("reward model needs positive input and latent widths");
  }
  std::mt19937_64 rng(seed);
  std::size_t feature = config_.input_dim;
  if (!config_.encoder_hidden.empty()) {
    std::vector<std::size_t> widths{config_.input_dim};
    widths.insert(widths.end(), config_.encoder_hidden.begin(), config_.encoder_hidden.end());
    trunk_ = Mlp(widths, config_.activation, config_.activation, rng);
    feature = widths.back();
  }
  mean_head_ = Mlp({feature, config_.latent_dim}, diffcore::Activation::identity, diffcore::Activation::identity, rng);
  log_var_head_ =
      Mlp({feature, config_.latent_dim}, diffcore::Activation::identity, diffcore::Activation::identity, rng);
  std::vector<std::size_t> dec{config_.latent_dim};
  dec.insert(dec.end(), config_.decoder_hidden.begin(), config_.decoder_hidden.end());
  dec.push_back(1);
  decoder_ = Mlp(dec, config_.activation, diffcore::Activation::identity, rng);
}

RewardModel::RewardModel(RewardModelConfig config, Mlp trunk, Mlp mean_head, Mlp log_var_head, Mlp decoder)
    : config_(std::move(config)),
      trunk_(std::move(trunk)),
      mean_head_(std::move(mean_head)),
      log_var_head_(std::move(log_var_head)),
      decoder_(std::move(decoder)) {
  const std::size_t feature = trunk_.layers().empty() ? config_.input_dim : trunk_.output_dim();
  if (!trunk_.layers().empty() && trunk_.input_dim() != config_.input_dim) {
    throw ShapeError("encoder trunk input width does not match input_dim");
  }
  if (mean_head_.input_dim() != feature || log_var_head_.input_dim() != feature) {
    throw ShapeError("encoder heads do not match trunk width");
  }
  if (mean_head_.output_dim() != config_.latent_dim || log_var_head_.output_dim() != config_.latent_dim) {
    throw ShapeError("encoder heads must emit latent_dim values");
  }
  if (decoder_.input_dim() != config_.latent_dim || decoder_.output_dim() != 1) {
    throw ShapeError("decoder must map latent_dim -> 1");
  }
}

void RewardModel::check_rows(const Tensor& rows) const {
  if (rows.cols() != config_.input_dim) {
    throw ShapeError("reward model expects rows of width " + std::to_string(config_.input_dim) + ", got " +
                     rows.shape_string());
  }
}

Tensor RewardModel::trunk_forward(const Tensor& rows) const {
  check_rows(rows);
  return trunk_.layers().empty() ? rows : trunk_.forward(rows);
}

LatentGaussian RewardModel::encode(const Tensor& rows) const {
  Tensor h = trunk_forward(rows);
  LatentGaussian g{mean_head_.forward(h), log_var_head_.forward(h)};
  const double limit = config_.log_variance_limit;
  for (auto& v : g.log_variance.values()) v = limit * std::tanh(v / limit);
  return g;
}

Tensor RewardModel::decode(const Tensor& latents) const {
  if (latents.cols() != config_.latent_dim) {
    throw ShapeError("decoder expects latents of width " + std::to_string(config_.latent_dim) + ", got " +
                     latents.shape_string());
  }
  return decoder_.forward(latents);
}

std::vector<double> RewardModel::reward(const Tensor& rows) const {
  Tensor r = decode(encode(rows).mean);
  return {r.values().begin(), r.values().end()};
}

RewardModel::EncodedVars RewardModel::encode(Tape& tape, Var rows) {
  check_rows(rows.value());
  Var h = trunk_.layers().empty() ? rows : trunk_.forward(tape, rows);
  Var mean = mean_head_.forward(tape, h);
  const double limit = config_.log_variance_limit;
  Var log_var = diffcore::scale(diffcore::tanh(diffcore::scale(log_var_head_.forward(tape, h), 1.0 / limit)), limit);
  return {mean, log_var};
}

Var RewardModel::decode(Tape& tape, Var latents) {
  if (latents.cols() != config_.latent_dim) {
    throw ShapeError("decoder expects latents of width " + std::to_string(config_.latent_dim));
  }
  return decoder_.forward(tape, latents);
}

std::vector<diffcore::Parameter*> RewardModel::parameters() {
  std::vector<diffcore::Parameter*> out = trunk_.parameters();
  for (auto* mlp : {&mean_head_, &log_var_head_, &decoder_}) {
    auto p = mlp->parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

diffcore::Checkpoint RewardModel::to_checkpoint() const {
  diffcore::Checkpoint ckpt;
  if (!trunk_.layers().empty()) diffcore::append_mlp(ckpt, "trunk", trunk_);
  diffcore::append_mlp(ckpt, "mean_head", mean_head_);
  diffcore::append_mlp(ckpt, "log_variance_head", log_var_head_);
  diffcore::append_mlp(ckpt, "decoder", decoder_);
  ckpt.meta["input_dim"] = config_.input_dim;
  ckpt.meta["latent_dim"] = config_.latent_dim;
  ckpt.meta["encoder_hidden"] = config_.encoder_hidden;
  ckpt.meta["decoder_hidden"] = config_.decoder_hidden;
  ckpt.meta["activation"] = diffcore::to_string(config_.activation);
  ckpt.meta["log_variance_limit"] = config_.log_variance_limit;
  return ckpt;
}

RewardModel RewardModel::from_checkpoint(const diffcore::Checkpoint& ckpt) {
  RewardModelConfig cfg;
  cfg.input_dim = ckpt.meta.at("input_dim").get<std::size_t>();
  cfg.latent_dim = ckpt.meta.at("latent_dim").get<std::size_t>();
  cfg.encoder_hidden = ckpt.meta.at("encoder_hidden").get<std::vector<std::size_t>>();
  cfg.decoder_hidden = ckpt.meta.at("decoder_hidden").get<std::vector<std::size_t>>();
  cfg.activation = diffcore::activation_from_string(ckpt.meta.at("activation").get<std::string>());
  cfg.log_variance_limit = ckpt.meta.at("log_variance_limit").get<double>();
  Mlp trunk = ckpt.meta.contains("trunk") ? diffcore::mlp_from_checkpoint(ckpt, "trunk") : Mlp();
  return RewardModel(cfg, std::move(trunk), diffcore::mlp_from_checkpoint(ckpt, "mean_head"),
                     diffcore::mlp_from_checkpoint(ckpt, "log_variance_head"),
                     diffcore::mlp_from_checkpoint(ckpt, "decoder"));
}

double segment_return(const RewardModel& model, const Segment& segment) {
  auto r = model.reward(segment.features);
  return std::accumulate(r.begin(), r.end(), 0.0);
}

double preference_probability(double first_return, double second_return) {
  // exp(R1) / (exp(R0) + exp(R1)) after subtracting max(R0, R1).
  const double m = std::max(first_return, second_return);
  const double e0 = std::exp(first_return - m);
  const double e1 = std::exp(second_return - m);
  return e1 / (e0 + e1);
}

double predict_preference(const RewardModel& model, const Segment& first, const Segment& second) {
  if (first.length() != second.length()) {
    throw std::invalid_argument("segments differ in length (" + std::to_string(first.length()) + " vs " +
                                std::to_string(second.length()) + ")");
  }
  return preference_probability(segment_return(model, first), segment_return(model, second));
}

PreferenceBatch make_batch(std::span<const PreferenceTriple* const> triples) {
  if (triples.empty()) throw std::invalid_argument("empty preference batch");
  const std::size_t width = triples.front()->first.features.cols();
  std::unordered_map<std::string, std::size_t> index;
  std::vector<double> rows;
  // (segment row, distinct row) pairs, one per step
  std::vector<std::pair<std::size_t, std::size_t>> hits;
  Tensor labels = Tensor::zeros(triples.size(), 2);

  for (std::size_t i = 0; i < triples.size(); ++i) {
    const PreferenceTriple& t = *triples[i];
    validate(t.label);
    if (t.first.length() != t.second.length()) throw std::invalid_argument("preference pair has unequal lengths");
    labels(i, 0) = t.label.first;
    labels(i, 1) = t.label.second;
    const Segment* segs[2] = {&t.first, &t.second};
    for (std::size_t s = 0; s < 2; ++s) {
      const Tensor& f = segs[s]->features;
      if (f.cols() != width || f.rows() != segs[s]->length()) {
        throw ShapeError("segment features " + f.shape_string() + " inconsistent with batch width " +
                         std::to_string(width));
      }
      for (std::size_t r = 0; r < f.rows(); ++r) {
        auto row = f.row_view(r);
        std::string key(reinterpret_cast<const char*>(row.data()), row.size() * sizeof(double));
        auto [it, inserted] = index.try_emplace(std::move(key), index.size());
        if (inserted) rows.insert(rows.end(), row.begin(), row.end());
        hits.emplace_back(2 * i + s, it->second);
      }
    }
  }
  PreferenceBatch batch;
  const std::size_t distinct = index.size();
  batch.rows = Tensor::matrix(distinct, width, std::move(rows));
  batch.counts = Tensor::zeros(2 * triples.size(), distinct);
  batch.occurrence = Tensor::zeros(1, distinct);
  batch.step_segments = Tensor::zeros(2 * triples.size(), hits.size());
  batch.step_rows.reserve(hits.size());
  for (std::size_t step = 0; step < hits.size(); ++step) {
    const auto [seg, col] = hits[step];
    batch.counts(seg, col) += 1.0;
    batch.occurrence(0, col) += 1.0 / static_cast<double>(hits.size());
    batch.step_segments(seg, step) = 1.0;
    batch.step_rows.push_back(col);
  }
  batch.labels = std::move(labels);
  return batch;
}

PreferenceBatch make_batch(std::span<const PreferenceTriple> triples) {
  std::vector<const PreferenceTriple*> ptrs;
  ptrs.reserve(triples.size());
  for (const auto& t : triples) ptrs.push_back(&t);
  return make_batch(std::span<const PreferenceTriple* const>(ptrs));
}

LossVars record_losses(Tape& tape, RewardModel& model, const PreferenceBatch& batch, const Tensor& noise, double phi) {
  if (phi < 0.0) throw std::invalid_argument("phi must be nonnegative");
  const std::size_t steps = batch.steps();
  const std::size_t k = model.latent_dim();
  if (noise.rows() != steps || noise.cols() != k) {
    throw ShapeError("noise " + noise.shape_string() + " must be " + std::to_string(steps) + " x " +
                     std::to_string(k));
  }
  using namespace diffcore;
  Var x = tape.constant(batch.rows);
  auto [mu, log_var] = model.encode(tape, x);

  // The encoder runs once per distinct row; every step still draws its own latent.
  Var step_mu = gather_rows(mu, batch.step_rows);
  Var step_log_var = gather_rows(log_var, batch.step_rows);
  Var z = add(step_mu, mul(exp(scale(step_log_var, 0.5)), tape.constant(noise)));
  Var r = model.decode(tape, z);
  Var seg_returns = matmul(tape.constant(batch.step_segments), r);
  Var log_p = log_softmax(reshape(seg_returns, batch.pairs(), 2));
  Var supervised = scale(sum(mul(tape.constant(batch.labels), log_p)), -1.0 / static_cast<double>(batch.pairs()));

  Var kl_terms = sub(add(square(mu), exp(log_var)), log_var);
  Var constraint = add(scale(sum(matmul(tape.constant(batch.occurrence), kl_terms)), 0.5),
                       tape.constant(Tensor::scalar(-0.5 * static_cast<double>(k))));
  Var total = add(scale(constraint, phi), supervised);
  return {supervised, constraint, total};
}

LossValues evaluate_losses(const RewardModel& model, const PreferenceBatch& batch, double phi) {
  const LatentGaussian g = model.encode(batch.rows);
  const Tensor r = model.decode(g.mean);
  LossValues out;
  for (std::size_t i = 0; i < batch.pairs(); ++i) {
    double ret[2] = {0.0, 0.0};
    for (std::size_t s = 0; s < 2; ++s) {
      for (std::size_t u = 0; u < batch.rows.rows(); ++u) ret[s] += batch.counts(2 * i + s, u) * r[u];
    }
    const double m = std::max(ret[0], ret[1]);
    const double lse = m + std::log(std::exp(ret[0] - m) + std::exp(ret[1] - m));
    out.supervised -= batch.labels(i, 0) * (ret[0] - lse) + batch.labels(i, 1) * (ret[1] - lse);
  }
  out.supervised /= static_cast<double>(batch.pairs());
  const auto kls = kl_to_standard(g);
  for (std::size_t u = 0; u < kls.size(); ++u) out.constraint += batch.occurrence(0, u) * kls[u];
  out.total = phi * out.constraint + out.supervised;
  return out;
}

double supervised_loss(const RewardModel& model, std::span<const PreferenceTriple> triples) {
  return evaluate_losses(model, make_batch(triples), 0.0).supervised;
}

double latent_kl_loss(const RewardModel& model, const Tensor& rows) {
  auto kls = kl_to_standard(model.encode(rows));
  return std::accumulate(kls.begin(), kls.end(), 0.0) / static_cast<double>(kls.size());
}

LossValues TrainableRewardModel::train_step(const PreferenceBatch& batch, const TrainingConfig& config,
                                            bool* applied) {
  auto params = model.parameters();
  diffcore::zero_grad(params);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t samples = std::max<std::size_t>(1, config.latent_samples);
  LossValues out;
  for (std::size_t s = 0; s < samples; ++s) {
    Tensor noise = Tensor::zeros(batch.steps(), model.latent_dim());
    for (auto& v : noise.values()) v = normal(rng);
    Tape tape;
    LossVars losses = record_losses(tape, model, batch, noise, config.phi);
    // Average over latent samples by scaling each pass.
    Var objective = diffcore::scale(losses.total, 1.0 / static_cast<double>(samples));
    tape.backward(objective);
    out.supervised += losses.supervised.value().item() / static_cast<double>(samples);
    out.constraint += losses.constraint.value().item() / static_cast<double>(samples);
    out.total += losses.total.value().item() / static_cast<double>(samples);
  }
  const auto status = optimizer.step(params);
  if (applied != nullptr) *applied = status == diffcore::StepStatus::applied;
  return out;
}

namespace {

void require_distribution(const std::vector<double>& p, const std::string& what) {
  if (p.empty()) throw std::invalid_argument(what + " is empty");
  double total = 0.0;
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument(what + " has a negative or non-finite entry");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-12) {
    throw std::invalid_argument(what + " sums to " + std::to_string(total) + ", not 1");
  }
}

// sum_z p(z) log(p(z) / q(z)) with 0 log 0 = 0.
double discrete_kl(const std::vector<double>& p, const std::vector<double>& q) {
  double kl = 0.0;
  for (std::size_t z = 0; z < p.size(); ++z) {
    if (p[z] == 0.0) continue;
    if (q[z] == 0.0) return std::numeric_limits<double>::infinity();
    kl += p[z] * std::log(p[z] / q[z]);
  }
  return kl;
}

}  // namespace

MiBoundResult verify_mi_bound(const DiscreteLatentSpec& spec) {
  require_distribution(spec.p_x, "p(x)");
  require_distribution(spec.r_z, "r(z)");
  if (spec.p_z_given_x.size() != spec.p_x.size()) throw std::invalid_argument("p(z|x) needs one row per x");
  const std::size_t nz = spec.r_z.size();
  std::vector<double> marginal(nz, 0.0);
  for (std::size_t x = 0; x < spec.p_x.size(); ++x) {
    const auto& row = spec.p_z_given_x[x];
    if (row.size() != nz) throw std::invalid_argument("p(z|x) row width differs from |Z|");
    require_distribution(row, "p(z|x=" + std::to_string(x) + ")");
    for (std::size_t z = 0; z < nz; ++z) marginal[z] += spec.p_x[x] * row[z];
  }
  MiBoundResult out;
  for (std::size_t x = 0; x < spec.p_x.size(); ++x) {
    if (spec.p_x[x] == 0.0) continue;
    out.constraint += spec.p_x[x] * discrete_kl(spec.p_z_given_x[x], spec.r_z);
    out.mutual_information += spec.p_x[x] * discrete_kl(spec.p_z_given_x[x], marginal);
  }
  out.bound_holds = out.constraint >= out.mutual_information - 1e-9;
  return out;
}

}  // namespace prefrl::reward
