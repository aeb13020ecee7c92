#include "prefrl/diffcore/tape.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

namespace prefrl::diffcore {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

MatMap as_matrix(Tensor& t) {
  return MatMap(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
ConstMatMap as_matrix(const Tensor& t) {
  return ConstMatMap(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

Tape* common_tape(Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape) throw std::invalid_argument("operands recorded on different tapes");
  return a.tape;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " + b.shape_string());
  }
}

Tensor matrix_like(const Tensor& t) { return Tensor::zeros(t.rows(), t.cols()); }

template <typename F>
Var unary(Var x, Op op, F f, double scalar = 0.0) {
  const Tensor& in = x.value();
  Tensor out = matrix_like(in);
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return x.tape->record(op, std::move(out), x.id, Tape::npos, scalar);
}

}  // namespace

const Tensor& Var::value() const { return tape->value(*this); }
const Tensor& Var::grad() const { return tape->grad(*this); }

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Tape::input(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = true;
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Tape::parameter(Parameter& param) {
  Node n;
  n.value = param.value;
  n.param = &param;
  n.needs_grad = true;
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(Op op, Tensor value, std::size_t a, std::size_t b, double scalar) {
  if (backward_done_) throw BackwardError("cannot record on a tape after backward()");
  Node n;
  n.op = op;
  n.a = a;
  n.b = b;
  n.scalar = scalar;
  n.value = std::move(value);
  n.needs_grad = nodes_[a].needs_grad || (b != npos && nodes_[b].needs_grad);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Tape::record_gather(Tensor value, std::size_t a, std::vector<std::size_t> index) {
  Var v = record(Op::gather_rows, std::move(value), a);
  nodes_.back().index = std::move(index);
  return v;
}

const Tensor& Tape::value(Var v) const { return nodes_.at(v.id).value; }

const Tensor& Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (!backward_done_) throw BackwardError("grad() requested before backward()");
  if (!n.needs_grad) throw BackwardError("node does not require a gradient");
  return n.grad;
}

Tensor& Tape::grad_slot(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = matrix_like(n.value);
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw BackwardError("loss belongs to another tape");
  if (backward_done_) throw BackwardError("backward() already ran on this record");
  if (nodes_[loss.id].value.size() != 1) {
    throw BackwardError("backward() needs a scalar loss, got shape " + nodes_[loss.id].value.shape_string());
  }
  backward_done_ = true;
  for (std::size_t i = 0; i <= loss.id; ++i) {
    if (nodes_[i].needs_grad) grad_slot(i);
  }
  grad_slot(loss.id)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad) continue;
    if (n.op == Op::leaf) {
      if (n.param != nullptr) {
        auto& pg = n.param->grad;
        if (pg.size() != n.grad.size()) pg = Tensor(n.param->value.shape(), 0.0);
        for (std::size_t k = 0; k < pg.size(); ++k) pg[k] += n.grad[k];
      }
      continue;
    }
    propagate(n);
  }
}

void Tape::propagate(const Node& node) {
  const Tensor& g = node.grad;
  const bool ga = nodes_[node.a].needs_grad;
  const bool gb = node.b != npos && nodes_[node.b].needs_grad;

  switch (node.op) {
    case Op::leaf:
      break;
    case Op::matmul: {
      const Tensor& av = nodes_[node.a].value;
      const Tensor& bv = nodes_[node.b].value;
      if (ga) as_matrix(grad_slot(node.a)).noalias() += as_matrix(g) * as_matrix(bv).transpose();
      if (gb) as_matrix(grad_slot(node.b)).noalias() += as_matrix(av).transpose() * as_matrix(g);
      break;
    }
    case Op::add: {
      if (ga) as_matrix(grad_slot(node.a)) += as_matrix(g);
      if (gb) as_matrix(grad_slot(node.b)) += as_matrix(g);
      break;
    }
    case Op::add_row: {
      if (ga) as_matrix(grad_slot(node.a)) += as_matrix(g);
      if (gb) as_matrix(grad_slot(node.b)) += as_matrix(g).colwise().sum();
      break;
    }
    case Op::sub: {
      if (ga) as_matrix(grad_slot(node.a)) += as_matrix(g);
      if (gb) as_matrix(grad_slot(node.b)) -= as_matrix(g);
      break;
    }
    case Op::mul: {
      const Tensor& av = nodes_[node.a].value;
      const Tensor& bv = nodes_[node.b].value;
      if (ga) as_matrix(grad_slot(node.a)).array() += as_matrix(g).array() * as_matrix(bv).array();
      if (gb) as_matrix(grad_slot(node.b)).array() += as_matrix(g).array() * as_matrix(av).array();
      break;
    }
    case Op::scale: {
      if (ga) as_matrix(grad_slot(node.a)) += node.scalar * as_matrix(g);
      break;
    }
    case Op::tanh: {
      if (ga) {
        auto y = as_matrix(node.value).array();
        as_matrix(grad_slot(node.a)).array() += as_matrix(g).array() * (1.0 - y * y);
      }
      break;
    }
    case Op::relu: {
      if (ga) {
        const Tensor& x = nodes_[node.a].value;
        Tensor& gx = grad_slot(node.a);
        for (std::size_t i = 0; i < x.size(); ++i) {
          if (x[i] > 0.0) gx[i] += g[i];
        }
      }
      break;
    }
    case Op::exp: {
      if (ga) as_matrix(grad_slot(node.a)).array() += as_matrix(g).array() * as_matrix(node.value).array();
      break;
    }
    case Op::log: {
      if (ga) {
        as_matrix(grad_slot(node.a)).array() += as_matrix(g).array() / as_matrix(nodes_[node.a].value).array();
      }
      break;
    }
    case Op::square: {
      if (ga) {
        as_matrix(grad_slot(node.a)).array() += 2.0 * as_matrix(g).array() * as_matrix(nodes_[node.a].value).array();
      }
      break;
    }
    case Op::sum: {
      if (ga) as_matrix(grad_slot(node.a)).array() += g[0];
      break;
    }
    case Op::mean: {
      if (ga) {
        const double n = static_cast<double>(nodes_[node.a].value.size());
        as_matrix(grad_slot(node.a)).array() += g[0] / n;
      }
      break;
    }
    case Op::log_softmax: {
      if (ga) {
        auto y = as_matrix(node.value).array();
        auto gy = as_matrix(g);
        Eigen::VectorXd row_sums = gy.rowwise().sum();
        auto softmax = y.exp();
        auto gx = as_matrix(grad_slot(node.a));
        gx.array() += gy.array() - (softmax.colwise() * row_sums.array());
      }
      break;
    }
    case Op::reshape: {
      if (ga) {
        Tensor& gx = grad_slot(node.a);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
      }
      break;
    }
    case Op::gather_rows: {
      if (ga) {
        Tensor& gx = grad_slot(node.a);
        const std::size_t width = g.cols();
        for (std::size_t i = 0; i < node.index.size(); ++i) {
          const double* src = g.data() + i * width;
          double* dst = gx.data() + node.index[i] * width;
          for (std::size_t c = 0; c < width; ++c) dst[c] += src[c];
        }
      }
      break;
    }
  }
}

Var matmul(Var a, Var b) {
  Tape* tape = common_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw ShapeError("matmul: inner dimensions differ, " + av.shape_string() + " x " + bv.shape_string());
  }
  Tensor out = Tensor::zeros(av.rows(), bv.cols());
  as_matrix(out).noalias() = as_matrix(av) * as_matrix(bv);
  return tape->record(Op::matmul, std::move(out), a.id, b.id);
}

Var add(Var a, Var b) {
  Tape* tape = common_tape(a, b);
  require_same_shape("add", a.value(), b.value());
  Tensor out = matrix_like(a.value());
  as_matrix(out) = as_matrix(a.value()) + as_matrix(b.value());
  return tape->record(Op::add, std::move(out), a.id, b.id);
}

Var add_row(Var x, Var row) {
  Tape* tape = common_tape(x, row);
  const Tensor& xv = x.value();
  const Tensor& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != xv.cols()) {
    throw ShapeError("add_row: row " + rv.shape_string() + " does not broadcast over " + xv.shape_string());
  }
  Tensor out = matrix_like(xv);
  as_matrix(out) = as_matrix(xv).rowwise() + as_matrix(rv).row(0);
  return tape->record(Op::add_row, std::move(out), x.id, row.id);
}

Var sub(Var a, Var b) {
  Tape* tape = common_tape(a, b);
  require_same_shape("sub", a.value(), b.value());
  Tensor out = matrix_like(a.value());
  as_matrix(out) = as_matrix(a.value()) - as_matrix(b.value());
  return tape->record(Op::sub, std::move(out), a.id, b.id);
}

Var mul(Var a, Var b) {
  Tape* tape = common_tape(a, b);
  require_same_shape("mul", a.value(), b.value());
  Tensor out = matrix_like(a.value());
  as_matrix(out).array() = as_matrix(a.value()).array() * as_matrix(b.value()).array();
  return tape->record(Op::mul, std::move(out), a.id, b.id);
}

Var scale(Var x, double factor) {
  return unary(x, Op::scale, [factor](double v) { return factor * v; }, factor);
}

Var tanh(Var x) {
  const Tensor& in = x.value();
  Tensor out = matrix_like(in);
  tanh_into(in.values(), out.values());
  return x.tape->record(Op::tanh, std::move(out), x.id);
}

Var relu(Var x) {
  return unary(x, Op::relu, [](double v) { return v > 0.0 ? v : 0.0; });
}

Var exp(Var x) {
  return unary(x, Op::exp, [](double v) { return std::exp(v); });
}

Var log(Var x) {
  return unary(x, Op::log, [](double v) { return std::log(v); });
}

Var square(Var x) {
  return unary(x, Op::square, [](double v) { return v * v; });
}

Var sum(Var x) {
  const Tensor& v = x.value();
  double s = 0.0;
  for (double e : v.values()) s += e;
  return x.tape->record(Op::sum, Tensor::scalar(s), x.id);
}

Var mean(Var x) {
  const Tensor& v = x.value();
  double s = 0.0;
  for (double e : v.values()) s += e;
  return x.tape->record(Op::mean, Tensor::scalar(s / static_cast<double>(v.size())), x.id);
}

Var log_softmax(Var x) {
  const Tensor& v = x.value();
  Tensor out = matrix_like(v);
  for (std::size_t r = 0; r < v.rows(); ++r) {
    auto row = v.row_view(r);
    const double m = *std::max_element(row.begin(), row.end());
    double acc = 0.0;
    for (double e : row) acc += std::exp(e - m);
    const double lse = m + std::log(acc);
    for (std::size_t c = 0; c < v.cols(); ++c) out(r, c) = row[c] - lse;
  }
  return x.tape->record(Op::log_softmax, std::move(out), x.id);
}

Var reshape(Var x, std::size_t rows, std::size_t cols) {
  const Tensor& v = x.value();
  if (rows * cols != v.size()) {
    throw ShapeError("reshape: cannot view " + v.shape_string() + " as (" + std::to_string(rows) + ", " +
                     std::to_string(cols) + ")");
  }
  Tensor out = Tensor::matrix(rows, cols, std::vector<double>(v.values().begin(), v.values().end()));
  return x.tape->record(Op::reshape, std::move(out), x.id);
}

Var gather_rows(Var x, std::vector<std::size_t> index) {
  const Tensor& v = x.value();
  const std::size_t width = v.cols();
  Tensor out = Tensor::zeros(index.size(), width);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= v.rows()) {
      throw ShapeError("gather_rows: index " + std::to_string(index[i]) + " out of range for " + v.shape_string());
    }
    std::copy_n(v.data() + index[i] * width, width, out.data() + i * width);
  }
  return x.tape->record_gather(std::move(out), x.id, std::move(index));
}

}  // namespace prefrl::diffcore
