#include "demure/ndcore/linalg.hpp"

#include "demure/errors.hpp"

namespace demure::nd {

namespace {

void require(bool ok, const char* what, const Array& a, const Array& b) {
  if (!ok) {
    throw ContractError(std::string(what) + ": incompatible shapes " + a.shape_string() + " and " +
                        b.shape_string());
  }
}

}  // namespace

void gemm_nn_acc(const Array& a, const Array& b, Array& c) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  require(b.rows() == k && c.rows() == m && c.cols() == n, "gemm_nn", a, b);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = c.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = pc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = pa[i * k + p];
      if (s == 0.0) continue;
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += s * brow[j];
    }
  }
}

void gemm_nt_acc(const Array& a, const Array& b, Array& c) {
  require(a.cols() == b.cols(), "gemm_nt", a, b);
  gemm_nn_acc(a, transposed(b), c);
}

void gemm_tn_acc(const Array& a, const Array& b, Array& c) {
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  require(b.rows() == k && c.rows() == m && c.cols() == n, "gemm_tn", a, b);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = c.data().data();
  for (std::size_t p = 0; p < k; ++p) {
    const double* brow = pb + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double s = pa[p * m + i];
      if (s == 0.0) continue;
      double* crow = pc + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += s * brow[j];
    }
  }
}

Array matmul(const Array& a, const Array& b) {
  require(a.cols() == b.rows(), "matmul", a, b);
  Array c(a.rows(), b.cols());
  gemm_nn_acc(a, b, c);
  return c;
}

Array matmul_nt(const Array& a, const Array& b) {
  require(a.cols() == b.cols(), "matmul_nt", a, b);
  Array c(a.rows(), b.rows());
  gemm_nt_acc(a, b, c);
  return c;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ContractError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace demure::nd
