#include <doctest.h>

#include <cmath>

#include "demure/errors.hpp"
#include "demure/model/objectives.hpp"
#include "demure/ndcore/gradcheck.hpp"
#include "test_util.hpp"

using namespace demure;
using namespace demure::model;
using nd::Array;
using testing::random_array;

namespace {

double row_dot(const Array& a, std::size_t ra, const Array& b, std::size_t rb) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.cols(); ++k) s += a(ra, k) * b(rb, k);
  return s;
}

// Unstabilized textbook evaluation, one user at a time.
double naive_ssm(const Array& u, const Array& pos, const Array& neg) {
  double total = 0.0;
  for (std::size_t b = 0; b < u.rows(); ++b) {
    const double num = std::exp(row_dot(u, b, pos, b));
    double den = num;
    for (std::size_t n = 0; n < neg.rows(); ++n) den += std::exp(row_dot(u, b, neg, n));
    total += -std::log(num / den);
  }
  return total / static_cast<double>(u.rows());
}

double naive_cont(const Array& u, const std::vector<Array>& pos, const std::vector<Array>& neg) {
  double total = 0.0;
  for (std::size_t b = 0; b < u.rows(); ++b) {
    double p = 0.0, n = 0.0;
    for (const auto& v : pos) p += std::exp(row_dot(v, b, u, b));
    for (const auto& v : neg) n += std::exp(row_dot(v, b, u, b));
    total += -std::log(p / (p + n));
  }
  return total / static_cast<double>(u.rows());
}

double ssm_value(const Array& u, const Array& pos, const Array& neg) {
  nd::Tape t;
  return sampled_softmax_loss(t.constant(u), t.constant(pos), t.constant(neg)).value()[0];
}

double cont_value(const Array& u, const std::vector<Array>& pos, const std::vector<Array>& neg) {
  nd::Tape t;
  std::vector<nd::Var> p, n;
  for (const auto& a : pos) p.push_back(t.constant(a));
  for (const auto& a : neg) n.push_back(t.constant(a));
  return contrastive_loss(t.constant(u), p, n).value()[0];
}

// Rows chosen so every logit is exactly `logit`: u = (logit, 0), items = (1, 0).
Array unit_rows(std::size_t n) {
  Array a(n, 2, 0.0);
  for (std::size_t r = 0; r < n; ++r) a(r, 0) = 1.0;
  return a;
}

}  // namespace

TEST_CASE("equal logits give log(n + 1)") {
  for (std::size_t n : {1u, 10u, 255u}) {
    const Array u = Array::row({0.7, 0.0});
    CHECK(std::abs(ssm_value(u, unit_rows(1), unit_rows(n)) - std::log(n + 1.0)) < 1e-9);
  }
  CHECK(ssm_value(Array::row({0.0, 0.0}), unit_rows(1), unit_rows(1)) ==
        doctest::Approx(0.693147).epsilon(1e-6));
}

TEST_CASE("a dominant positive saturates to zero") {
  const Array u = Array::row({1.0});
  const double loss = ssm_value(u, Array::row({10.0}), Array::row({-10.0}));
  CHECK(loss >= 0.0);
  CHECK(loss < 1e-8);
}

TEST_CASE("equal similarities give log 2 for any J") {
  for (std::size_t J : {1u, 2u, 4u}) {
    const Array u = Array::row({0.3, 0.0});
    std::vector<Array> views(J, Array::row({1.0, 0.0}));
    CHECK(std::abs(cont_value(u, views, views) - std::log(2.0)) < 1e-9);
  }
}

TEST_CASE("separated contrastive views drive the loss to zero") {
  const Array u = Array::row({1.0, 0.0});
  const double loss = cont_value(u, {Array::row({40.0, 0.0})}, {Array::row({-40.0, 0.0})});
  CHECK(loss < 1e-12);
}

TEST_CASE("losses match direct scalar evaluation") {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const Array u = random_array(rng, 5, 6, 0.5);
    const Array pos = random_array(rng, 5, 6, 0.5);
    const Array neg = random_array(rng, 9, 6, 0.5);
    CHECK(std::abs(ssm_value(u, pos, neg) - naive_ssm(u, pos, neg)) < 1e-12);
    std::vector<Array> p{random_array(rng, 5, 6, 0.5), random_array(rng, 5, 6, 0.5)};
    std::vector<Array> n{random_array(rng, 5, 6, 0.5), random_array(rng, 5, 6, 0.5)};
    CHECK(std::abs(cont_value(u, p, n) - naive_cont(u, p, n)) < 1e-12);
  }
}

TEST_CASE("adding a constant to a softmax group leaves the loss unchanged") {
  Rng rng(22);
  // Append a coordinate equal to 1 on the user and c on all items: every logit shifts by c.
  const Array u0 = random_array(rng, 1, 4);
  const Array p0 = random_array(rng, 1, 4);
  const Array n0 = random_array(rng, 6, 4);
  auto extend = [](const Array& a, double v) {
    Array out(a.rows(), a.cols() + 1);
    for (std::size_t r = 0; r < a.rows(); ++r) {
      for (std::size_t c = 0; c < a.cols(); ++c) out(r, c) = a(r, c);
      out(r, a.cols()) = v;
    }
    return out;
  };
  const double base = ssm_value(extend(u0, 1.0), extend(p0, 0.0), extend(n0, 0.0));
  for (double c : {-30.0, 3.0, 250.0}) {
    CHECK(std::abs(ssm_value(extend(u0, 1.0), extend(p0, c), extend(n0, c)) - base) < 1e-12);
  }
}

TEST_CASE("losses are positive and decrease as the positive logit grows") {
  Rng rng(23);
  const Array neg = random_array(rng, 4, 1);
  double prev = INFINITY;
  for (double s = -5.0; s <= 5.0; s += 0.5) {
    const double l = ssm_value(Array::row({1.0}), Array::row({s}), neg);
    CHECK(l > 0.0);
    CHECK(l < prev);
    prev = l;
  }
  prev = INFINITY;
  for (double s = -5.0; s <= 5.0; s += 0.5) {
    const double l = cont_value(Array::row({1.0}), {Array::row({s})}, {Array::row({0.3})});
    CHECK(l > 0.0);
    CHECK(l < prev);
    prev = l;
  }
}

TEST_CASE("loss gradients with respect to the user match finite differences") {
  Rng rng(24);
  const Array u = random_array(rng, 3, 5, 0.5);
  const Array pos = random_array(rng, 3, 5, 0.5);
  const Array neg = random_array(rng, 7, 5, 0.5);
  const Array vp = random_array(rng, 3, 5, 0.5);
  const Array vn = random_array(rng, 3, 5, 0.5);
  auto ssm = [&](nd::Tape& t, nd::Var x) {
    return sampled_softmax_loss(x, t.constant(pos), t.constant(neg));
  };
  auto cont = [&](nd::Tape& t, nd::Var x) {
    const nd::Var p[] = {t.constant(vp)};
    const nd::Var n[] = {t.constant(vn)};
    return contrastive_loss(x, p, n);
  };
  CHECK(nd::finite_difference_check(ssm, u, 1e-5, nd::FdScheme::kRichardson) <= 1e-5);
  CHECK(nd::finite_difference_check(cont, u, 1e-5, nd::FdScheme::kRichardson) <= 1e-5);
  // Gradient also reaches the augmented views.
  auto cont_view = [&](nd::Tape& t, nd::Var x) {
    const nd::Var p[] = {x};
    const nd::Var n[] = {t.constant(vn)};
    return contrastive_loss(t.constant(u), p, n);
  };
  CHECK(nd::finite_difference_check(cont_view, vp, 1e-5, nd::FdScheme::kRichardson) <= 1e-5);
}

TEST_CASE("total loss composition") {
  const auto b = breakdown(0.5, 0.5, 0.5, 1.0, 1.0);
  CHECK(b.total == 1.5);
  CHECK(breakdown(0.8, 3.0, 7.0, 0.0, 0.0).total == 0.8);
  nd::Tape t;
  Rng rng(25);
  for (int i = 0; i < 10; ++i) {
    const double a = rng.uniform(), c = rng.uniform(), e = rng.uniform();
    const auto v = total_loss(t.constant(Array::scalar(a)), t.constant(Array::scalar(c)),
                              t.constant(Array::scalar(e)), 1.0, 0.1);
    CHECK(v.value()[0] == breakdown(a, c, e, 1.0, 0.1).total);
  }
  CHECK_THROWS_AS(breakdown(1, 1, 1, -1.0, 0.0), ContractError);
}

TEST_CASE("objective contract errors") {
  nd::Tape t;
  const auto u = t.constant(Array(2, 3, 0.1));
  CHECK_THROWS_AS(sampled_softmax_loss(u, u, t.constant(Array(0, 3))), ContractError);
  CHECK_THROWS_AS(sampled_softmax_loss(u, u, t.constant(Array(4, 2))), ContractError);
  const nd::Var one[] = {u};
  const nd::Var two[] = {u, u};
  CHECK_THROWS_AS(contrastive_loss(u, std::span<const nd::Var>(), std::span<const nd::Var>()),
                  ContractError);
  CHECK_THROWS_AS(contrastive_loss(u, one, two), ContractError);
}
