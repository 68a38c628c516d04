#pragma once

#include "demure/ndcore/array.hpp"

namespace demure::nd {

// Plain (untracked) dense kernels shared by the tape ops and by code that
// works on detached values. All accumulate into `c` (c += ...).

// c(m x n) += a(m x k) * b(k x n)
void gemm_nn_acc(const Array& a, const Array& b, Array& c);
// c(m x n) += a(m x k) * b(n x k)^T
void gemm_nt_acc(const Array& a, const Array& b, Array& c);
// c(m x n) += a(k x m)^T * b(k x n)
void gemm_tn_acc(const Array& a, const Array& b, Array& c);

Array matmul(const Array& a, const Array& b);
// a * b^T
Array matmul_nt(const Array& a, const Array& b);

double dot(std::span<const double> a, std::span<const double> b);

}  // namespace demure::nd
