#include "demure/ndcore/gradcheck.hpp"

#include <cmath>
#include <string>

#include "demure/errors.hpp"

namespace demure::nd {

namespace {

double checked(double v) {
  if (!std::isfinite(v)) throw NumericError("finite difference: f returned a non-finite value");
  return v;
}

double central(const ScalarFunction& f, Array& x, std::size_t k, double h) {
  const double x0 = x[k];
  x[k] = x0 + h;
  const double fp = checked(f(x));
  x[k] = x0 - h;
  const double fm = checked(f(x));
  x[k] = x0;
  return (fp - fm) / (2.0 * h);
}

}  // namespace

Array numeric_gradient(const ScalarFunction& f, const Array& x, double h, FdScheme scheme) {
  if (!(h > 0.0)) throw ContractError("finite difference: step must be positive");
  Array work = x;
  Array g(x.shape(), std::vector<double>(x.size(), 0.0));
  for (std::size_t k = 0; k < x.size(); ++k) {
    if (scheme == FdScheme::kCentral) {
      g[k] = central(f, work, k, h);
    } else {
      const double coarse = central(f, work, k, h);
      const double fine = central(f, work, k, h / 2.0);
      g[k] = (4.0 * fine - coarse) / 3.0;
    }
  }
  return g;
}

double max_relative_error(const Array& numeric, const Array& analytic) {
  if (numeric.size() != analytic.size()) throw ContractError("max_relative_error: size mismatch");
  double worst = 0.0;
  for (std::size_t k = 0; k < numeric.size(); ++k) {
    const double err = std::abs(numeric[k] - analytic[k]) / (std::abs(analytic[k]) + 1e-12);
    worst = std::max(worst, err);
  }
  return worst;
}

Array analytic_gradient(const TapeFunction& f, const Array& x) {
  Tape tape;
  Var leaf = tape.leaf(x, "x");
  Var y = f(tape, leaf);
  tape.backward(y);
  return tape.gradient_of(leaf);
}

double finite_difference_check(const TapeFunction& f, const Array& x, double h, FdScheme scheme) {
  const Array analytic = analytic_gradient(f, x);
  const ScalarFunction eval = [&f](const Array& v) {
    Tape tape;
    Var y = f(tape, tape.constant(v));
    return y.value()[0];
  };
  return max_relative_error(numeric_gradient(eval, x, h, scheme), analytic);
}

}  // namespace demure::nd
