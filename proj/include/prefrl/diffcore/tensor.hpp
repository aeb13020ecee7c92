#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace prefrl::diffcore {

/// Raised for any shape disagreement between operands; the message carries both shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dense row-major array of doubles.
///
/// Tensors of rank 1 are treated as a single row when an operation needs a
/// matrix view, so rows() == 1 and cols() == size().
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> values);

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  static Tensor zeros(std::size_t rows, std::size_t cols);
  static Tensor scalar(double value);
  static Tensor row(std::span<const double> values);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  std::size_t rows() const { return shape_.size() < 2 ? (shape_.empty() ? 0 : 1) : shape_[0]; }
  std::size_t cols() const {
    if (shape_.size() == 2) return shape_[1];
    const auto r = rows();
    return r == 0 ? 0 : values_.size() / r;
  }

  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::span<const double> row_view(std::size_t r) const;
  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool flag) { requires_grad_ = flag; }

  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  /// Scalar value of a one-element tensor.
  double item() const;
  void fill(double value);

  std::string shape_string() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.values_ == b.values_;
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> values_;
  bool requires_grad_ = false;
};

std::string shape_string(const std::vector<std::size_t>& shape);

/// Elementwise tanh, vectorized through exp; within 1e-14 relative of std::tanh.
void tanh_into(std::span<const double> in, std::span<double> out);

}  // namespace prefrl::diffcore
