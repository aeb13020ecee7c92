#include "prefrl/diffcore/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include <Eigen/Core>

namespace prefrl::diffcore {

namespace {

std::size_t element_count(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void check_shape(const std::vector<std::size_t>& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape));
  }
}

}  // namespace

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  values_.assign(element_count(shape_), fill);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  check_shape(shape_);
  if (element_count(shape_) != values_.size()) {
    throw ShapeError("shape " + diffcore::shape_string(shape_) + " holds " + std::to_string(element_count(shape_)) +
                     " values, got " + std::to_string(values_.size()));
  }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

Tensor Tensor::zeros(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}, 0.0); }

Tensor Tensor::scalar(double value) { return Tensor({1, 1}, std::vector<double>{value}); }

Tensor Tensor::row(std::span<const double> values) {
  return Tensor({1, values.size()}, std::vector<double>(values.begin(), values.end()));
}

void tanh_into(std::span<const double> in, std::span<double> out) {
  if (in.size() != out.size()) throw ShapeError("tanh_into: size mismatch");
  using Array = Eigen::Array<double, Eigen::Dynamic, 1>;
  Eigen::Map<const Array> x(in.data(), static_cast<Eigen::Index>(in.size()));
  Eigen::Map<Array> y(out.data(), static_cast<Eigen::Index>(out.size()));
  const Array a = x.abs();
  const Array e = (-2.0 * a).exp();
  // Near zero 1 - e cancels; the series is exact to double precision there.
  const Array a2 = a * a;
  const Array series = a * (1.0 - a2 * (1.0 / 3.0 - a2 * (2.0 / 15.0 - a2 * (17.0 / 315.0))));
  y = (a < 1e-2).select(series, (1.0 - e) / (1.0 + e)) * x.sign();
}

std::span<const double> Tensor::row_view(std::size_t r) const {
  return std::span<const double>(values_).subspan(r * cols(), cols());
}

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

double Tensor::item() const {
  if (values_.size() != 1) throw ShapeError("item() needs a one-element tensor, got " + shape_string());
  return values_[0];
}

void Tensor::fill(double value) { std::fill(values_.begin(), values_.end(), value); }

std::string Tensor::shape_string() const { return diffcore::shape_string(shape_); }

}  // namespace prefrl::diffcore
