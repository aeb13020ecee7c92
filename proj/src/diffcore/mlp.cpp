#include "prefrl/diffcore/mlp.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>

namespace prefrl::diffcore {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatMap = Eigen::Map<const RowMatrix>;
using MatMap = Eigen::Map<RowMatrix>;

ConstMatMap view(const Tensor& t) {
  return ConstMatMap(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

Var activate(Var x, Activation act) {
  switch (act) {
    case Activation::tanh:
      return tanh(x);
    case Activation::relu:
      return relu(x);
    case Activation::identity:
      break;
  }
  return x;
}

}  // namespace

std::string to_string(Activation act) {
  switch (act) {
    case Activation::tanh:
      return "tanh";
    case Activation::relu:
      return "relu";
    case Activation::identity:
      break;
  }
  return "identity";
}

Activation activation_from_string(const std::string& name) {
  if (name == "tanh") return Activation::tanh;
  if (name == "relu") return Activation::relu;
  if (name == "identity") return Activation::identity;
  throw std::invalid_argument("unknown activation '" + name + "'");
}

Mlp::Mlp(const std::vector<std::size_t>& widths, Activation hidden, Activation output, std::mt19937_64& rng) {
  if (widths.size() < 2) throw std::invalid_argument("an MLP needs at least input and output widths");
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const std::size_t in = widths[i];
    const std::size_t out = widths[i + 1];
    // Glorot-uniform weights, zero bias.
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Tensor w = Tensor::zeros(in, out);
    for (auto& v : w.values()) v = dist(rng);
    Layer layer{Parameter(std::move(w)), Parameter(Tensor::zeros(1, out)),
                i + 2 == widths.size() ? output : hidden};
    layers_.push_back(std::move(layer));
  }
}

Mlp::Mlp(std::vector<Layer> layers) : layers_(std::move(layers)) {
  for (std::size_t i = 0; i + 1 < layers_.size(); ++i) {
    if (layers_[i].out_dim() != layers_[i + 1].in_dim()) {
      throw ShapeError("layer " + std::to_string(i) + " emits " + std::to_string(layers_[i].out_dim()) +
                       " features but layer " + std::to_string(i + 1) + " expects " +
                       std::to_string(layers_[i + 1].in_dim()));
    }
  }
  for (const auto& l : layers_) {
    if (l.bias.value.rows() != 1 || l.bias.value.cols() != l.out_dim()) {
      throw ShapeError("bias " + l.bias.value.shape_string() + " does not match weight " +
                       l.weight.value.shape_string());
    }
  }
}

std::size_t Mlp::input_dim() const { return layers_.empty() ? 0 : layers_.front().in_dim(); }
std::size_t Mlp::output_dim() const { return layers_.empty() ? 0 : layers_.back().out_dim(); }

void Mlp::check_input(const Tensor& input) const {
  if (layers_.empty()) throw std::logic_error("forward on an empty MLP");
  if (input.cols() != input_dim()) {
    throw ShapeError("MLP expects rows of width " + std::to_string(input_dim()) + ", got input " +
                     input.shape_string());
  }
}

Var Mlp::forward(Tape& tape, Var input) {
  check_input(input.value());
  Var h = input;
  for (auto& layer : layers_) {
    Var w = tape.parameter(layer.weight);
    Var b = tape.parameter(layer.bias);
    h = activate(add_row(matmul(h, w), b), layer.activation);
  }
  return h;
}

Tensor Mlp::forward(const Tensor& input) const {
  check_input(input);
  RowMatrix h = view(input);
  for (const auto& layer : layers_) {
    RowMatrix next = h * view(layer.weight.value);
    next.rowwise() += view(layer.bias.value).row(0);
    switch (layer.activation) {
      case Activation::tanh:
        tanh_into(std::span<const double>(next.data(), next.size()), std::span<double>(next.data(), next.size()));
        break;
      case Activation::relu:
        next = next.array().max(0.0);
        break;
      case Activation::identity:
        break;
    }
    h = std::move(next);
  }
  Tensor out = Tensor::zeros(static_cast<std::size_t>(h.rows()), static_cast<std::size_t>(h.cols()));
  MatMap(out.data(), h.rows(), h.cols()) = h;
  return out;
}

std::vector<Parameter*> Mlp::parameters() {
  std::vector<Parameter*> out;
  for (auto& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

std::vector<const Parameter*> Mlp::parameters() const {
  std::vector<const Parameter*> out;
  for (const auto& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

void zero_grad(const std::vector<Parameter*>& params) {
  for (auto* p : params) p->zero_grad();
}

}  // namespace prefrl::diffcore

namespace prefrl::diffcore {

void append_mlp(Checkpoint& ckpt, const std::string& prefix, const Mlp& mlp) {
  auto acts = nlohmann::json::array();
  for (std::size_t i = 0; i < mlp.layers().size(); ++i) {
    const auto& l = mlp.layers()[i];
    ckpt.add(prefix + "." + std::to_string(i) + ".weight", l.weight.value);
    ckpt.add(prefix + "." + std::to_string(i) + ".bias", l.bias.value);
    acts.push_back(to_string(l.activation));
  }
  ckpt.meta[prefix] = {{"activations", acts}};
}

Mlp mlp_from_checkpoint(const Checkpoint& ckpt, const std::string& prefix) {
  const auto& acts = ckpt.meta.at(prefix).at("activations");
  std::vector<Layer> layers;
  for (std::size_t i = 0; i < acts.size(); ++i) {
    Layer l{Parameter(ckpt.at(prefix + "." + std::to_string(i) + ".weight")),
            Parameter(ckpt.at(prefix + "." + std::to_string(i) + ".bias")),
            activation_from_string(acts[i].get<std::string>())};
    layers.push_back(std::move(l));
  }
  return Mlp(std::move(layers));
}

}  // namespace prefrl::diffcore
