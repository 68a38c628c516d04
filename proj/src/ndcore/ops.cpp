#include "demure/ndcore/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "demure/errors.hpp"
#include "demure/ndcore/linalg.hpp"

namespace demure::nd {

namespace {

Tape& same_tape(Var a, Var b, const char* op) {
  if (a.tape == nullptr || a.tape != b.tape) {
    throw ContractError(std::string(op) + ": operands live on different tapes");
  }
  a.tape->check(a);
  b.tape->check(b);
  return *a.tape;
}

Tape& tape_of(Var a) {
  if (a.tape == nullptr) throw LookupError("op: Var is not attached to a tape");
  a.tape->check(a);
  return *a.tape;
}

enum class Broadcast { kSame, kScalar, kRow, kCol };

Broadcast broadcast_mode(const Array& a, const Array& b, const char* op) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Broadcast::kSame;
  if (b.rows() == 1 && b.cols() == 1) return Broadcast::kScalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::kRow;
  if (b.cols() == 1 && b.rows() == a.rows()) return Broadcast::kCol;
  throw ContractError(std::string(op) + ": cannot broadcast " + b.shape_string() + " onto " +
                      a.shape_string());
}

inline std::size_t b_index(Broadcast mode, std::size_t r, std::size_t c, std::size_t cols) {
  switch (mode) {
    case Broadcast::kSame: return r * cols + c;
    case Broadcast::kScalar: return 0;
    case Broadcast::kRow: return c;
    case Broadcast::kCol: return r;
  }
  return 0;
}

template <class F>
Array binary_forward(const Array& a, const Array& b, Broadcast mode, F f) {
  Array out(a.rows(), a.cols());
  const std::size_t rows = a.rows(), cols = a.cols();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      out[r * cols + c] = f(a[r * cols + c], b[b_index(mode, r, c, cols)]);
  return out;
}

// Reduces a full-shape gradient onto b's (possibly broadcast) shape.
void reduce_into(const Array& g, Broadcast mode, double sign, Array& gb) {
  const std::size_t rows = g.rows(), cols = g.cols();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) gb[b_index(mode, r, c, cols)] += sign * g[r * cols + c];
}

Var add_sub(Var a, Var b, double sign, const char* op) {
  Tape& t = same_tape(a, b, op);
  const Array& av = a.value();
  const Array& bv = b.value();
  const Broadcast mode = broadcast_mode(av, bv, op);
  Array out = binary_forward(av, bv, mode, [sign](double x, double y) { return x + sign * y; });
  const bool rg = a.requires_grad() || b.requires_grad();
  const auto ia = a.id, ib = b.id;
  return t.record(std::move(out), op, rg, [ia, ib, mode, sign](BackwardContext& ctx) {
    const Array& g = ctx.out_grad();
    if (ctx.needs(ia)) ctx.grad(ia) += g;
    if (ctx.needs(ib)) reduce_into(g, mode, sign, ctx.grad(ib));
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b, "matmul");
  Array out = nd::matmul(a.value(), b.value());
  const auto ia = a.id, ib = b.id;
  return t.record(std::move(out), "matmul", a.requires_grad() || b.requires_grad(),
                  [ia, ib](BackwardContext& ctx) {
                    const Array& g = ctx.out_grad();
                    if (ctx.needs(ia)) gemm_nt_acc(g, ctx.value(ib), ctx.grad(ia));
                    if (ctx.needs(ib)) gemm_tn_acc(ctx.value(ia), g, ctx.grad(ib));
                  });
}

Var transpose(Var a) {
  Tape& t = tape_of(a);
  const auto ia = a.id;
  return t.record(transposed(a.value()), "transpose", a.requires_grad(),
                  [ia](BackwardContext& ctx) {
                    const Array& g = ctx.out_grad();
                    Array& ga = ctx.grad(ia);
                    for (std::size_t r = 0; r < g.rows(); ++r)
                      for (std::size_t c = 0; c < g.cols(); ++c) ga(c, r) += g(r, c);
                  });
}

Var add(Var a, Var b) { return add_sub(a, b, 1.0, "add"); }
Var sub(Var a, Var b) { return add_sub(a, b, -1.0, "sub"); }

Var mul(Var a, Var b) {
  Tape& t = same_tape(a, b, "mul");
  const Array& av = a.value();
  const Array& bv = b.value();
  const Broadcast mode = broadcast_mode(av, bv, "mul");
  Array out = binary_forward(av, bv, mode, [](double x, double y) { return x * y; });
  const auto ia = a.id, ib = b.id;
  return t.record(std::move(out), "mul", a.requires_grad() || b.requires_grad(),
                  [ia, ib, mode](BackwardContext& ctx) {
                    const Array& g = ctx.out_grad();
                    const Array& av = ctx.value(ia);
                    const Array& bv = ctx.value(ib);
                    const std::size_t rows = g.rows(), cols = g.cols();
                    if (ctx.needs(ia)) {
                      Array& ga = ctx.grad(ia);
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t c = 0; c < cols; ++c)
                          ga[r * cols + c] += g[r * cols + c] * bv[b_index(mode, r, c, cols)];
                    }
                    if (ctx.needs(ib)) {
                      Array& gb = ctx.grad(ib);
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t c = 0; c < cols; ++c)
                          gb[b_index(mode, r, c, cols)] += g[r * cols + c] * av[r * cols + c];
                    }
                  });
}

Var add_scalar(Var a, double c) {
  Tape& t = tape_of(a);
  Array out = a.value();
  for (auto& x : out.data()) x += c;
  const auto ia = a.id;
  return t.record(std::move(out), "add_scalar", a.requires_grad(),
                  [ia](BackwardContext& ctx) { ctx.grad(ia) += ctx.out_grad(); });
}

Var scale(Var a, double c) {
  Tape& t = tape_of(a);
  Array out = a.value();
  for (auto& x : out.data()) x *= c;
  const auto ia = a.id;
  return t.record(std::move(out), "scale", a.requires_grad(), [ia, c](BackwardContext& ctx) {
    const Array& g = ctx.out_grad();
    Array& ga = ctx.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
  });
}

Var exp(Var a) {
  Tape& t = tape_of(a);
  Array out = a.value();
  for (auto& x : out.data()) x = std::exp(x);
  const auto ia = a.id;
  const auto self = static_cast<std::uint32_t>(t.size());
  return t.record(std::move(out), "exp", a.requires_grad(), [ia, self](BackwardContext& ctx) {
    const Array& g = ctx.out_grad();
    const Array& y = ctx.value(self);
    Array& ga = ctx.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
  });
}

Var log(Var a) {
  Tape& t = tape_of(a);
  Array out = a.value();
  for (auto& x : out.data()) {
    if (!(x > 0.0)) throw NumericError("log: non-positive input " + std::to_string(x));
    x = std::log(x);
  }
  const auto ia = a.id;
  return t.record(std::move(out), "log", a.requires_grad(), [ia](BackwardContext& ctx) {
    const Array& g = ctx.out_grad();
    const Array& x = ctx.value(ia);
    Array& ga = ctx.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / x[i];
  });
}

Var relu(Var a) {
  Tape& t = tape_of(a);
  Array out = a.value();
  for (auto& x : out.data()) x = x > 0.0 ? x : 0.0;
  const auto ia = a.id;
  return t.record(std::move(out), "relu", a.requires_grad(), [ia](BackwardContext& ctx) {
    const Array& g = ctx.out_grad();
    const Array& x = ctx.value(ia);
    Array& ga = ctx.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > 0.0) ga[i] += g[i];
  });
}

Var row_softmax(Var a) {
  Tape& t = tape_of(a);
  const Array& av = a.value();
  const std::size_t rows = av.rows(), cols = av.cols();
  Array out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    auto in = av.row_span(r);
    auto o = out.row_span(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += (o[c] = std::exp(in[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) o[c] /= z;
  }
  const auto ia = a.id;
  const auto self = static_cast<std::uint32_t>(t.size());
  return t.record(std::move(out), "row_softmax", a.requires_grad(),
                  [ia, self](BackwardContext& ctx) {
                    const Array& g = ctx.out_grad();
                    const Array& y = ctx.value(self);
                    Array& ga = ctx.grad(ia);
                    const std::size_t rows = y.rows(), cols = y.cols();
                    for (std::size_t r = 0; r < rows; ++r) {
                      double s = 0.0;
                      for (std::size_t c = 0; c < cols; ++c) s += g(r, c) * y(r, c);
                      for (std::size_t c = 0; c < cols; ++c) ga(r, c) += y(r, c) * (g(r, c) - s);
                    }
                  });
}

Var mean(Var a) {
  Tape& t = tape_of(a);
  const Array& av = a.value();
  double s = 0.0;
  for (double x : av.data()) s += x;
  const double inv = 1.0 / static_cast<double>(av.size());
  const auto ia = a.id;
  return t.record(Array::scalar(s * inv), "mean", a.requires_grad(),
                  [ia, inv](BackwardContext& ctx) {
                    const double g = ctx.out_grad()[0] * inv;
                    for (auto& x : ctx.grad(ia).data()) x += g;
                  });
}

Var mean_rows(Var a) {
  Tape& t = tape_of(a);
  const Array& av = a.value();
  const std::size_t rows = av.rows(), cols = av.cols();
  const double inv = 1.0 / static_cast<double>(cols);
  Array out(rows, 1);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (double x : av.row_span(r)) s += x;
    out[r] = s * inv;
  }
  const auto ia = a.id;
  return t.record(std::move(out), "mean_rows", a.requires_grad(),
                  [ia, inv](BackwardContext& ctx) {
                    const Array& g = ctx.out_grad();
                    Array& ga = ctx.grad(ia);
                    for (std::size_t r = 0; r < ga.rows(); ++r)
                      for (auto& x : ga.row_span(r)) x += g[r] * inv;
                  });
}

Var mean_cols(Var a) {
  Tape& t = tape_of(a);
  const Array& av = a.value();
  const std::size_t rows = av.rows(), cols = av.cols();
  const double inv = 1.0 / static_cast<double>(rows);
  Array out(1, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c] += av(r, c);
  for (auto& x : out.data()) x *= inv;
  const auto ia = a.id;
  return t.record(std::move(out), "mean_cols", a.requires_grad(),
                  [ia, inv](BackwardContext& ctx) {
                    const Array& g = ctx.out_grad();
                    Array& ga = ctx.grad(ia);
                    for (std::size_t r = 0; r < ga.rows(); ++r)
                      for (std::size_t c = 0; c < ga.cols(); ++c) ga(r, c) += g[c] * inv;
                  });
}

Var dot(Var a, Var b) {
  Tape& t = same_tape(a, b, "dot");
  const Array& av = a.value();
  const Array& bv = b.value();
  if (av.size() != bv.size() || av.rows() != bv.rows()) {
    throw ContractError("dot: shapes " + av.shape_string() + " and " + bv.shape_string() +
                        " differ");
  }
  const double s = nd::dot(av.data(), bv.data());
  const auto ia = a.id, ib = b.id;
  return t.record(Array::scalar(s), "dot", a.requires_grad() || b.requires_grad(),
                  [ia, ib](BackwardContext& ctx) {
                    const double g = ctx.out_grad()[0];
                    if (ctx.needs(ia)) {
                      const Array& bv = ctx.value(ib);
                      Array& ga = ctx.grad(ia);
                      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * bv[i];
                    }
                    if (ctx.needs(ib)) {
                      const Array& av = ctx.value(ia);
                      Array& gb = ctx.grad(ib);
                      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g * av[i];
                    }
                  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  Tape& t = tape_of(parts.front());
  const std::size_t cols = parts.front().value().cols();
  std::size_t rows = 0;
  bool rg = false;
  for (const Var& p : parts) {
    same_tape(parts.front(), p, "concat_rows");
    if (p.value().cols() != cols) {
      throw ContractError("concat_rows: column mismatch " + p.value().shape_string());
    }
    rows += p.value().rows();
    rg = rg || p.requires_grad();
  }
  Array out(rows, cols);
  std::vector<std::uint32_t> ids;
  ids.reserve(parts.size());
  std::size_t off = 0;
  for (const Var& p : parts) {
    const auto& v = p.value().data();
    std::copy(v.begin(), v.end(), out.data().begin() + static_cast<std::ptrdiff_t>(off));
    off += v.size();
    ids.push_back(p.id);
  }
  return t.record(std::move(out), "concat_rows", rg, [ids = std::move(ids)](BackwardContext& ctx) {
    const Array& g = ctx.out_grad();
    std::size_t off = 0;
    for (auto id : ids) {
      const std::size_t n = ctx.value(id).size();
      if (ctx.needs(id)) {
        Array& gp = ctx.grad(id);
        for (std::size_t i = 0; i < n; ++i) gp[i] += g[off + i];
      }
      off += n;
    }
  });
}

Var gather_rows(Var a, std::span<const std::size_t> rows) {
  Tape& t = tape_of(a);
  const Array& av = a.value();
  const std::size_t cols = av.cols();
  if (rows.empty()) throw ContractError("gather_rows: empty row list");
  Array out(rows.size(), cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= av.rows()) {
      throw ContractError("gather_rows: row " + std::to_string(rows[i]) + " out of range for " +
                          av.shape_string());
    }
    auto src = av.row_span(rows[i]);
    std::copy(src.begin(), src.end(), out.row_span(i).begin());
  }
  const auto ia = a.id;
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return t.record(std::move(out), "gather_rows", a.requires_grad(),
                  [ia, idx = std::move(idx)](BackwardContext& ctx) {
                    const Array& g = ctx.out_grad();
                    Array& ga = ctx.grad(ia);
                    const std::size_t cols = g.cols();
                    for (std::size_t i = 0; i < idx.size(); ++i) {
                      double* dst = ga.data().data() + idx[i] * cols;
                      const double* src = g.data().data() + i * cols;
                      for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
                    }
                  });
}

Var reshape(Var a, std::size_t rows, std::size_t cols) {
  Tape& t = tape_of(a);
  const Array& av = a.value();
  if (rows * cols != av.size()) {
    throw ContractError("reshape: cannot view " + av.shape_string() + " as (" +
                        std::to_string(rows) + ", " + std::to_string(cols) + ")");
  }
  Array out({rows, cols}, av.values());
  const auto ia = a.id;
  return t.record(std::move(out), "reshape", a.requires_grad(), [ia](BackwardContext& ctx) {
    const Array& g = ctx.out_grad();
    Array& ga = ctx.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

}  // namespace demure::nd
