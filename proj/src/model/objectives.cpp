#include "demure/model/objectives.hpp"

#include <algorithm>
#include <string>

#include "demure/errors.hpp"

namespace demure::model {

using nd::Array;
using nd::Var;

LossBreakdown breakdown(double l_ssm, double l_ssm_aug, double l_cont, double lambda1,
                        double lambda2) {
  if (lambda1 < 0.0 || lambda2 < 0.0) throw ContractError("loss weights must be non-negative");
  LossBreakdown b;
  b.l_ssm = l_ssm;
  b.l_ssm_aug = l_ssm_aug;
  b.l_cont = l_cont;
  b.lambda1 = lambda1;
  b.lambda2 = lambda2;
  b.total = l_ssm + lambda1 * l_ssm_aug + lambda2 * l_cont;
  return b;
}

Var row_logsumexp(Var z) {
  const Array& v = z.value();
  const std::size_t rows = v.rows();
  const std::size_t cols = v.cols();
  if (rows == 0 || cols == 0) throw ContractError("row_logsumexp: empty input");
  Array shift(rows, 1);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto row = v.row_span(r);
    shift(r, 0) = *std::max_element(row.begin(), row.end());
  }
  nd::Tape& tape = *z.tape;
  const Var c = tape.constant(std::move(shift));
  const Var sums = nd::matmul(nd::exp(nd::sub(z, c)), tape.constant(Array(cols, 1, 1.0)));
  return nd::add(nd::log(sums), c);
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no parts");
  std::vector<Var> t;
  t.reserve(parts.size());
  for (const Var& p : parts) t.push_back(nd::transpose(p));
  return nd::transpose(nd::concat_rows(t));
}

namespace {

// Row-wise inner products of two B x d matrices, B x 1.
Var row_dots(Var a, Var b) {
  if (!a.value().same_shape(b.value())) {
    throw ContractError("row-wise dot: shapes " + a.value().shape_string() + " and " +
                        b.value().shape_string() + " differ");
  }
  return nd::matmul(nd::mul(a, b), a.tape->constant(Array(a.value().cols(), 1, 1.0)));
}

}  // namespace

Var sampled_softmax_loss(Var users, Var positives, Var negatives) {
  if (negatives.value().rows() == 0) throw ContractError("sampled softmax needs at least one negative");
  if (negatives.value().cols() != users.value().cols()) {
    throw ContractError("sampled softmax: negatives have dim " +
                        std::to_string(negatives.value().cols()) + ", users have dim " +
                        std::to_string(users.value().cols()));
  }
  const Var pos = row_dots(users, positives);
  const Var neg = nd::matmul(users, nd::transpose(negatives));
  const Var logits[] = {pos, neg};
  return nd::mean(nd::sub(row_logsumexp(concat_cols(logits)), pos));
}

Var contrastive_loss(Var users, std::span<const Var> positives, std::span<const Var> negatives) {
  if (positives.empty()) throw ContractError("contrastive loss needs J >= 1 views");
  if (positives.size() != negatives.size()) {
    throw ContractError("contrastive loss: " + std::to_string(positives.size()) +
                        " positive views but " + std::to_string(negatives.size()) + " negative");
  }
  std::vector<Var> pos, all;
  for (const Var& p : positives) pos.push_back(row_dots(p, users));
  all = pos;
  for (const Var& n : negatives) all.push_back(row_dots(n, users));
  return nd::mean(nd::sub(row_logsumexp(concat_cols(all)), row_logsumexp(concat_cols(pos))));
}

Var total_loss(Var l_ssm, Var l_ssm_aug, Var l_cont, double lambda1, double lambda2) {
  if (lambda1 < 0.0 || lambda2 < 0.0) throw ContractError("loss weights must be non-negative");
  return nd::add(nd::add(l_ssm, nd::scale(l_ssm_aug, lambda1)), nd::scale(l_cont, lambda2));
}

}  // namespace demure::model
