#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "prefrl/diffcore/checkpoint.hpp"
#include "prefrl/diffcore/tape.hpp"

namespace prefrl::diffcore {

enum class Activation { identity, tanh, relu };

std::string to_string(Activation act);
Activation activation_from_string(const std::string& name);

struct Layer {
  Parameter weight;  // in x out
  Parameter bias;    // 1 x out
  Activation activation = Activation::identity;

  std::size_t in_dim() const { return weight.value.rows(); }
  std::size_t out_dim() const { return weight.value.cols(); }
};

/// Stack of affine layers, each followed by its own activation.
class Mlp {
 public:
  Mlp() = default;
  /// widths = {in, h1, ..., out}; hidden layers use `hidden`, the last uses `output`.
  Mlp(const std::vector<std::size_t>& widths, Activation hidden, Activation output, std::mt19937_64& rng);
  explicit Mlp(std::vector<Layer> layers);

  Var forward(Tape& tape, Var input);
  /// Same arithmetic without recording anything.
  Tensor forward(const Tensor& input) const;

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }

  std::size_t input_dim() const;
  std::size_t output_dim() const;

 private:
  void check_input(const Tensor& input) const;
  std::vector<Layer> layers_;
};

void zero_grad(const std::vector<Parameter*>& params);

/// Stores layers as "<prefix>.<i>.weight" / ".bias" with activations under meta[prefix].
void append_mlp(Checkpoint& ckpt, const std::string& prefix, const Mlp& mlp);
Mlp mlp_from_checkpoint(const Checkpoint& ckpt, const std::string& prefix);

}  // namespace prefrl::diffcore
