#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace numerics {

/// Dense row-major matrix of 64-bit floats. Everything in the training stack
/// is expressed over rank-2 shapes; scalars are 1x1.
class Tensor {
 public:
  Tensor() = default;
  Tensor(int rows, int cols) : rows_(rows), cols_(cols) {
    if (rows < 0 || cols < 0) throw_bad_shape(rows, cols);
    data_.assign(static_cast<std::size_t>(rows) * cols, 0.0);
  }

  static Tensor scalar(double v);
  static Tensor full(int rows, int cols, double v);
  static Tensor row(std::initializer_list<double> v);
  static Tensor col(std::initializer_list<double> v);
  static Tensor from_rows(int rows, int cols, std::span<const double> v);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int size() const { return rows_ * cols_; }
  std::vector<int> shape() const { return {rows_, cols_}; }
  bool same_shape(const Tensor& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }

  double& at(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  double at(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<const double> values() const { return data_; }
  std::span<double> values() { return data_; }

  /// Value of a 1x1 tensor.
  double item() const;

  void fill(double v) { data_.assign(data_.size(), v); }

  bool all_finite() const;

  std::string shape_str() const;

 private:
  [[noreturn]] static void throw_bad_shape(int rows, int cols);

  int rows_ = 0, cols_ = 0;
  std::vector<double> data_;
};

}  // namespace numerics
