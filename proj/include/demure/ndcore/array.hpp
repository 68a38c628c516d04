#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace demure::nd {

/// Dense row-major array of doubles.
///
/// Every kernel in the engine works on rank-2 arrays; vectors are 1 x n rows
/// and scalars are 1 x 1. Higher ranks are storage-only (rows() is the leading
/// dimension and cols() the product of the rest).
class Array {
 public:
  Array() = default;
  Array(std::size_t rows, std::size_t cols, double fill = 0.0);
  Array(std::vector<std::size_t> shape, std::vector<double> data);

  static Array scalar(double v) { return Array(1, 1, v); }
  static Array row(std::vector<double> values);
  static Array from_rows(std::initializer_list<std::initializer_list<double>> rows);

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t rows() const noexcept {
    if (shape_.size() == 2) return shape_[0];
    return shape_.empty() ? 0 : (shape_.size() == 1 ? 1 : shape_[0]);
  }
  std::size_t cols() const noexcept {
    if (shape_.size() == 2) return shape_[1];
    return cols_slow();
  }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::span<double> row_span(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const double> row_span(std::size_t r) const {
    return {data_.data() + r * cols(), cols()};
  }
  const std::vector<double>& values() const noexcept { return data_; }

  bool same_shape(const Array& other) const noexcept { return shape_ == other.shape_; }
  bool all_finite() const noexcept;
  // Index of the first non-finite entry, or size() when all are finite.
  std::size_t first_non_finite() const noexcept;

  void fill(double v);
  Array& operator+=(const Array& other);

  std::string shape_string() const;

  friend bool operator==(const Array& a, const Array& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::size_t cols_slow() const noexcept;

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

Array transposed(const Array& a);

}  // namespace demure::nd
