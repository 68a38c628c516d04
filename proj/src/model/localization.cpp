#include "demure/model/localization.hpp"

#include <algorithm>
#include <numeric>

#include "demure/errors.hpp"

namespace demure::model {

using nd::Array;
using nd::Var;

namespace {

double row_mean(const Array& g, std::size_t r) {
  const auto row = g.row_span(r);
  return std::accumulate(row.begin(), row.end(), 0.0) / static_cast<double>(row.size());
}

void require_tracked(const nd::Tape& tape, Var v, const char* what) {
  if (v.tape != &tape) throw ContractError(std::string("interest scores: ") + what + " is not on this tape");
  tape.check(v);
  if (!v.requires_grad()) {
    throw ContractError(std::string("interest scores: ") + what + " is not gradient-tracked");
  }
}

}  // namespace

InterestScoreMap pool_gradients(const nd::Tape& tape, Var items, std::span<const Var> activations) {
  require_tracked(tape, items, "item embeddings");
  const std::size_t L = items.value().rows();
  for (const Var& a : activations) {
    require_tracked(tape, a, "modality activations");
    if (a.value().rows() != L) throw ContractError("interest scores: activation rows differ from items");
  }
  InterestScoreMap out;
  const Array& gi = tape.gradient_of(items);
  out.item_scores.resize(L);
  for (std::size_t t = 0; t < L; ++t) out.item_scores[t] = row_mean(gi, t);
  out.modality_scores = Array(L, activations.size());
  for (std::size_t m = 0; m < activations.size(); ++m) {
    const Array& ga = tape.gradient_of(activations[m]);
    for (std::size_t t = 0; t < L; ++t) out.modality_scores(t, m) = row_mean(ga, t);
  }
  return out;
}

std::vector<Var> gather_raw(nd::Tape& tape, const data::FeatureStore& store,
                            std::span<const std::size_t> items) {
  std::vector<Var> out;
  for (std::size_t m = 0; m < store.num_modalities(); ++m) {
    const std::size_t dim = store.modalities()[m].dim;
    Array raw(items.size(), dim);
    for (std::size_t r = 0; r < items.size(); ++r) {
      const auto f = store.feature(m, items[r]);
      std::copy(f.begin(), f.end(), raw.row_span(r).begin());
    }
    out.push_back(tape.constant(std::move(raw)));
  }
  return out;
}

std::vector<InterestScoreMap> interest_scores(const EncoderParams& params, Aggregation aggregation,
                                              const data::FeatureStore& store,
                                              std::span<const ScoreRequest> requests) {
  if (requests.empty()) return {};
  std::vector<std::size_t> positions, targets, offsets;
  for (const auto& r : requests) {
    if (r.history.empty()) throw ContractError("interest scores: empty history");
    offsets.push_back(positions.size());
    positions.insert(positions.end(), r.history.begin(), r.history.end());
    targets.push_back(r.target);
  }
  nd::Tape tape;
  const BoundParams p = bind(tape, params, aggregation, false);

  // Every history position gets its own activation rows, so each psi only
  // reaches its own rows and one sweep over the sum yields all gradients.
  std::vector<Var> acts;
  for (const Var& a : project(p, gather_raw(tape, store, positions)))
    acts.push_back(tape.leaf(a.value()));
  const auto hist = encode_modalities(p, acts);
  const Var target_items = encode_modalities(p, project(p, gather_raw(tape, store, targets))).items;

  Var total{};
  for (std::size_t b = 0; b < requests.size(); ++b) {
    std::vector<std::size_t> rows(requests[b].history.size());
    std::iota(rows.begin(), rows.end(), offsets[b]);
    const auto user = encode_user(p, nd::gather_rows(hist.items, rows));
    const std::size_t tr[] = {b};
    const Var psi = score(user.user, nd::gather_rows(target_items, tr));
    total = b == 0 ? psi : nd::add(total, psi);
  }
  tape.backward(total);

  const auto pooled = pool_gradients(tape, hist.items, acts);
  std::vector<InterestScoreMap> out(requests.size());
  for (std::size_t b = 0; b < requests.size(); ++b) {
    const std::size_t L = requests[b].history.size();
    out[b].item_scores.assign(pooled.item_scores.begin() + static_cast<std::ptrdiff_t>(offsets[b]),
                              pooled.item_scores.begin() + static_cast<std::ptrdiff_t>(offsets[b] + L));
    out[b].modality_scores = Array(L, acts.size());
    for (std::size_t t = 0; t < L; ++t)
      for (std::size_t m = 0; m < acts.size(); ++m)
        out[b].modality_scores(t, m) = pooled.modality_scores(offsets[b] + t, m);
  }
  return out;
}

}  // namespace demure::model
