#pragma once

#include <functional>

#include "demure/ndcore/array.hpp"
#include "demure/ndcore/tape.hpp"

namespace demure::nd {

// A differentiable scalar function: records f(x) on `tape` given the leaf x.
using TapeFunction = std::function<Var(Tape& tape, Var x)>;
// Same function evaluated without a tape.
using ScalarFunction = std::function<double(const Array& x)>;

enum class FdScheme {
  kCentral,     // (f(x+h) - f(x-h)) / 2h
  kRichardson,  // (4 D(h/2) - D(h)) / 3, fourth-order accurate
};

/// Numeric gradient of f at x by coordinate-wise finite differences.
Array numeric_gradient(const ScalarFunction& f, const Array& x, double h,
                       FdScheme scheme = FdScheme::kCentral);

/// Max over coordinates of |numeric_k - analytic_k| / (|analytic_k| + 1e-12).
double max_relative_error(const Array& numeric, const Array& analytic);

/// Analytic gradient of f at x via one tape backward pass.
Array analytic_gradient(const TapeFunction& f, const Array& x);

/// Compares the tape gradient of f at x against central differences with step h.
/// Throws NumericError if f is non-finite anywhere it is evaluated.
double finite_difference_check(const TapeFunction& f, const Array& x, double h,
                               FdScheme scheme = FdScheme::kCentral);

}  // namespace demure::nd
