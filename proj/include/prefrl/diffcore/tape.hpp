#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

#include "prefrl/diffcore/tensor.hpp"

namespace prefrl::diffcore {

/// A trainable tensor with its gradient accumulator. Gradients accumulate
/// across backward passes until zero_grad() is called.
struct Parameter {
  Tensor value;
  Tensor grad;

  Parameter() = default;
  explicit Parameter(Tensor v) : value(std::move(v)), grad(value.shape(), 0.0) {
    value.set_requires_grad(true);
  }
  void zero_grad() { grad.fill(0.0); }
};

class Tape;

/// Handle to a node recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Tensor& grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

class BackwardError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

enum class Op {
  leaf,
  matmul,
  add,
  add_row,
  sub,
  mul,
  scale,
  tanh,
  relu,
  exp,
  log,
  square,
  sum,
  mean,
  log_softmax,
  reshape,
  gather_rows,
};

/// Records primitive operations in execution order so a single reverse sweep
/// can replay them. Nodes are appended only after their inputs, which keeps
/// the record topologically sorted by construction.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never receives a gradient.
  Var constant(Tensor value);
  /// Leaf with its own gradient slot, readable through grad() after backward.
  Var input(Tensor value);
  /// Leaf bound to an external parameter; backward adds into param.grad.
  Var parameter(Parameter& param);

  /// Reverse sweep from a 1x1 loss. A record supports exactly one sweep.
  void backward(Var loss);

  const Tensor& value(Var v) const;
  const Tensor& grad(Var v) const;
  std::size_t size() const { return nodes_.size(); }
  bool backward_done() const { return backward_done_; }

  // Used by the free operation functions below.
  Var record(Op op, Tensor value, std::size_t a, std::size_t b = npos, double scalar = 0.0);
  Var record_gather(Tensor value, std::size_t a, std::vector<std::size_t> index);
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

 private:
  struct Node {
    Op op = Op::leaf;
    std::size_t a = npos;
    std::size_t b = npos;
    double scalar = 0.0;
    Tensor value;
    Tensor grad;
    Parameter* param = nullptr;
    bool needs_grad = false;
    std::vector<std::size_t> index;  // gather_rows only
  };

  void propagate(const Node& node);
  Tensor& grad_slot(std::size_t id);

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// Primitive set. All operands must live on the same tape.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
/// Adds a 1 x n row to every row of an m x n operand.
Var add_row(Var x, Var row);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double factor);
Var tanh(Var x);
Var relu(Var x);
Var exp(Var x);
Var log(Var x);
Var square(Var x);
Var sum(Var x);
Var mean(Var x);
/// Row-wise log-softmax.
Var log_softmax(Var x);
Var reshape(Var x, std::size_t rows, std::size_t cols);
/// Row i of the result is row index[i] of x; rows may repeat.
Var gather_rows(Var x, std::vector<std::size_t> index);

}  // namespace prefrl::diffcore
