#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "demure/ndcore/tape.hpp"

namespace demure::nd {

// Differentiable kernels. Every encoder and objective is composed from these.
// Binary elementwise ops broadcast `b` onto `a` when b is 1x1, a 1 x cols row
// or a rows x 1 column.

Var matmul(Var a, Var b);
Var transpose(Var a);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var add_scalar(Var a, double c);
Var scale(Var a, double c);

Var exp(Var a);
Var log(Var a);
Var relu(Var a);

// Softmax along each row, max-shifted per row.
Var row_softmax(Var a);

// Mean over all entries (1x1), over each row (rows x 1), over each column (1 x cols).
Var mean(Var a);
Var mean_rows(Var a);
Var mean_cols(Var a);

// Sum of elementwise products of two equally shaped arrays (1x1).
Var dot(Var a, Var b);

Var concat_rows(std::span<const Var> parts);
Var gather_rows(Var a, std::span<const std::size_t> rows);
// Row-major reinterpretation; size must be preserved.
Var reshape(Var a, std::size_t rows, std::size_t cols);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

}  // namespace demure::nd
