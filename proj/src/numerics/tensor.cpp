#include "numerics/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace numerics {

Tensor Tensor::scalar(double v) {
  Tensor t(1, 1);
  t.at(0, 0) = v;
  return t;
}

Tensor Tensor::full(int rows, int cols, double v) {
  Tensor t(rows, cols);
  t.fill(v);
  return t;
}

Tensor Tensor::row(std::initializer_list<double> v) {
  Tensor t(1, static_cast<int>(v.size()));
  int j = 0;
  for (double x : v) t.at(0, j++) = x;
  return t;
}

Tensor Tensor::col(std::initializer_list<double> v) {
  Tensor t(static_cast<int>(v.size()), 1);
  int i = 0;
  for (double x : v) t.at(i++, 0) = x;
  return t;
}

Tensor Tensor::from_rows(int rows, int cols, std::span<const double> v) {
  if (static_cast<std::size_t>(rows) * cols != v.size()) {
    throw std::invalid_argument("Tensor::from_rows: data length does not match shape");
  }
  Tensor t(rows, cols);
  std::copy(v.begin(), v.end(), t.data());
  return t;
}

double Tensor::item() const {
  if (rows_ != 1 || cols_ != 1) {
    throw std::invalid_argument("Tensor::item: tensor is " + shape_str() + ", not 1x1");
  }
  return data_[0];
}

bool Tensor::all_finite() const {
  // A plain sum detects any NaN and any isolated infinity without a branch
  // per element.
  double acc = 0.0;
  for (double v : data_) acc += v;
  return std::isfinite(acc);
}

std::string Tensor::shape_str() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

void Tensor::throw_bad_shape(int rows, int cols) {
  throw std::invalid_argument("Tensor: invalid shape " + std::to_string(rows) +
                              "x" + std::to_string(cols));
}

}  // namespace numerics
