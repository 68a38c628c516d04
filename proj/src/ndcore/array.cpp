#include "demure/ndcore/array.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "demure/errors.hpp"

namespace demure::nd {

Array::Array(std::size_t rows, std::size_t cols, double fill)
    : shape_{rows, cols}, data_(rows * cols, fill) {}

Array::Array(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_.empty()) throw ContractError("Array: shape must have at least one dimension");
  const std::size_t n =
      std::accumulate(shape_.begin(), shape_.end(), std::size_t{1}, std::multiplies<>());
  if (n != data_.size()) {
    throw ContractError("Array: shape " + shape_string() + " does not match " +
                        std::to_string(data_.size()) + " values");
  }
}

Array Array::row(std::vector<double> values) {
  const std::size_t n = values.size();
  return Array({1, n}, std::move(values));
}

Array Array::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ContractError("Array::from_rows: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Array({r, c}, std::move(data));
}

std::size_t Array::cols_slow() const noexcept {
  if (shape_.empty()) return 0;
  if (shape_.size() == 1) return shape_[0];
  std::size_t c = 1;
  for (std::size_t i = 1; i < shape_.size(); ++i) c *= shape_[i];
  return c;
}

bool Array::all_finite() const noexcept { return first_non_finite() == data_.size(); }

std::size_t Array::first_non_finite() const noexcept {
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) return i;
  }
  return data_.size();
}

void Array::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Array& Array::operator+=(const Array& other) {
  if (!same_shape(other)) {
    throw ContractError("Array +=: shape " + shape_string() + " vs " + other.shape_string());
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

std::string Array::shape_string() const {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? ", " : "") << shape_[i];
  os << ')';
  return os.str();
}

Array transposed(const Array& a) {
  const std::size_t r = a.rows(), c = a.cols();
  Array t(c, r);
  const double* src = a.data().data();
  double* dst = t.data().data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) dst[j * r + i] = src[i * c + j];
  return t;
}

}  // namespace demure::nd
