#include "demure/model/augmentation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "demure/errors.hpp"
#include "demure/ndcore/linalg.hpp"

namespace demure::model {

using nd::Array;
using nd::Var;

std::string to_string(Polarity p) { return p == Polarity::kPositive ? "positive" : "negative"; }

namespace {

void check_rate(double g, const char* name) {
  if (!(g >= 0.0 && g <= 1.0)) throw ContractError(std::string(name) + " must lie in [0, 1]");
}

std::size_t floor_count(double x) {
  return static_cast<std::size_t>(std::floor(x + 1e-9));
}

// Orders candidate indices so the first k are the ones to replace.
template <class Key>
void rank(std::vector<std::size_t>& order, Key key, Polarity polarity) {
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return polarity == Polarity::kNegative ? key(a) > key(b) : key(a) < key(b);
  });
}

Array take_rows(const Array& a, std::span<const std::size_t> rows) {
  Array out(rows.size(), a.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto src = a.row_span(rows[r]);
    std::copy(src.begin(), src.end(), out.row_span(r).begin());
  }
  return out;
}

}  // namespace

std::size_t item_budget(std::size_t L, double gamma_i) {
  check_rate(gamma_i, "gamma_i");
  return std::min(L, floor_count(static_cast<double>(L) * gamma_i));
}

std::size_t modality_budget(std::size_t L, std::size_t K_i, std::size_t M, double gamma_m) {
  check_rate(gamma_m, "gamma_m");
  if (K_i > L) throw ContractError("modality_budget: K_i exceeds L");
  const std::size_t slots = (L - K_i) * M;
  return std::min(slots, floor_count(static_cast<double>(slots) * gamma_m));
}

std::vector<std::size_t> select_item_targets(std::span<const double> scores, double gamma_i,
                                             Polarity polarity) {
  const std::size_t k = item_budget(scores.size(), gamma_i);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  rank(order, [&](std::size_t i) { return scores[i]; }, polarity);
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

std::vector<ModalitySlot> select_modality_slots(const Array& modality_scores,
                                                std::span<const std::size_t> positions,
                                                std::size_t k, Polarity polarity) {
  const std::size_t M = modality_scores.cols();
  std::vector<ModalitySlot> slots;
  for (std::size_t t : positions) {
    if (t >= modality_scores.rows()) throw ContractError("select_modality_slots: position out of range");
    for (std::size_t m = 0; m < M; ++m) slots.push_back({t, m});
  }
  std::sort(slots.begin(), slots.end(), [](const ModalitySlot& a, const ModalitySlot& b) {
    return a.position != b.position ? a.position < b.position : a.modality < b.modality;
  });
  if (k > slots.size()) throw ContractError("select_modality_slots: budget exceeds available slots");
  std::vector<std::size_t> order(slots.size());
  std::iota(order.begin(), order.end(), 0);
  rank(order, [&](std::size_t i) { return modality_scores(slots[i].position, slots[i].modality); },
       polarity);
  std::vector<ModalitySlot> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(slots[order[i]]);
  return out;
}

namespace {

void minmax_rows(Array& D) {
  for (std::size_t r = 0; r < D.rows(); ++r) {
    auto row = D.row_span(r);
    const auto [lo, hi] = std::minmax_element(row.begin(), row.end());
    const double mn = *lo, mx = *hi;
    for (auto& v : row) v = mx > mn ? (v - mn) / (mx - mn) : 0.5;
  }
}

// similarity_distribution against the columns `cols` of a transposed pool.
// Dot products accumulate in the same order as matmul_nt, so the values match.
Array similarity_columns(const Array& rows, const Array& pool_t, std::span<const std::size_t> cols) {
  const Array full = nd::matmul(rows, pool_t);
  Array D(rows.rows(), cols.size());
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    const auto src = full.row_span(r);
    auto dst = D.row_span(r);
    for (std::size_t c = 0; c < cols.size(); ++c) dst[c] = src[cols[c]];
  }
  minmax_rows(D);
  return D;
}

}  // namespace

Array similarity_distribution(const Array& rows, const Array& pool) {
  if (pool.rows() == 0 || pool.empty()) throw ContractError("similarity_distribution: empty pool");
  if (rows.cols() != pool.cols()) {
    throw ContractError("similarity_distribution: row dim " + std::to_string(rows.cols()) +
                        " differs from pool dim " + std::to_string(pool.cols()));
  }
  Array D = nd::matmul_nt(rows, pool);
  minmax_rows(D);
  return D;
}

void CandidatePool::prepare() {
  item_embeddings_t = nd::transposed(item_embeddings);
  const std::size_t M = activations.size();
  const std::size_t d = item_embeddings.cols();
  activations_t = Array(d, items.size() * M);
  for (std::size_t m = 0; m < M; ++m)
    for (std::size_t r = 0; r < items.size(); ++r) {
      const auto src = activations[m].row_span(r);
      for (std::size_t k = 0; k < d; ++k) activations_t(k, r * M + m) = src[k];
    }
}

std::vector<std::size_t> sample_replacements(const Array& P, Polarity polarity, Rng& rng) {
  std::vector<std::size_t> out;
  out.reserve(P.rows());
  std::vector<double> w(P.cols());
  for (std::size_t r = 0; r < P.rows(); ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < P.cols(); ++c) {
      w[c] = polarity == Polarity::kNegative ? 1.0 - P(r, c) : P(r, c);
      total += w[c];
    }
    if (!(total > 0.0)) {
      out.push_back(rng.uniform_index(P.cols()));
      continue;
    }
    const double u = rng.uniform() * total;
    double cum = 0.0;
    std::size_t pick = P.cols();
    std::size_t last_positive = 0;
    for (std::size_t c = 0; c < P.cols(); ++c) {
      if (w[c] <= 0.0) continue;
      last_positive = c;
      cum += w[c];
      if (cum > u) {
        pick = c;
        break;
      }
    }
    out.push_back(pick == P.cols() ? last_positive : pick);
  }
  return out;
}

std::vector<std::size_t> allowed_pool_rows(const CandidatePool& pool,
                                           std::span<const std::size_t> exclude) {
  const std::unordered_set<std::size_t> ex(exclude.begin(), exclude.end());
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < pool.items.size(); ++r)
    if (!ex.contains(pool.items[r])) rows.push_back(r);
  return rows;
}

AugmentationPlan plan_augmentation(const HistoryView& history, const InterestScoreMap& scores,
                                   const CandidatePool& pool, std::span<const std::size_t> allowed,
                                   Polarity polarity, const AugmentConfig& config,
                                   std::uint64_t seed) {
  const std::size_t L = history.items.size();
  const std::size_t M = history.activations.size();
  if (scores.item_scores.size() != L || scores.modality_scores.rows() != L ||
      scores.modality_scores.cols() != M) {
    throw ContractError("plan_augmentation: interest scores do not match the history");
  }
  if (config.gamma_i + config.gamma_m > 1.0 + 1e-12) {
    throw ConfigError("gamma_i + gamma_m must not exceed 1");
  }
  AugmentationPlan plan;
  plan.polarity = polarity;
  plan.gamma_i = config.gamma_i;
  plan.gamma_m = config.gamma_m;
  plan.rng_seed = seed;
  Rng rng(seed);

  plan.replaced_item_positions = select_item_targets(scores.item_scores, config.gamma_i, polarity);
  const std::size_t K_i = plan.replaced_item_positions.size();
  std::vector<std::size_t> surviving;
  for (std::size_t t = 0, j = 0; t < L; ++t) {
    if (j < K_i && plan.replaced_item_positions[j] == t) {
      ++j;
    } else {
      surviving.push_back(t);
    }
  }
  const std::size_t K_m = modality_budget(L, K_i, M, config.gamma_m);
  if ((K_i > 0 || K_m > 0) && allowed.empty()) {
    throw DataError("candidate pool has no items outside the user's own history");
  }

  const CandidatePool* prepared = &pool;
  CandidatePool local;
  if ((K_i > 0 || K_m > 0) && pool.item_embeddings_t.empty()) {
    local = pool;
    local.prepare();
    prepared = &local;
  }

  if (K_i > 0) {
    const Array P = similarity_columns(take_rows(history.item_embeddings, plan.replaced_item_positions),
                                       prepared->item_embeddings_t, allowed);
    for (std::size_t idx : sample_replacements(P, polarity, rng))
      plan.item_replacements.push_back(pool.items[allowed[idx]]);
  }

  if (K_m > 0) {
    const auto slots = select_modality_slots(scores.modality_scores, surviving, K_m, polarity);
    // Candidate activations: every modality of every allowed pool item, or
    // only the slot's own modality.
    std::vector<std::pair<std::size_t, std::size_t>> all_cands;  // (pool row, modality)
    for (std::size_t r : allowed)
      for (std::size_t m = 0; m < M; ++m) all_cands.emplace_back(r, m);
    auto cand_columns = [&](const std::vector<std::pair<std::size_t, std::size_t>>& cands) {
      std::vector<std::size_t> cols(cands.size());
      for (std::size_t i = 0; i < cands.size(); ++i) cols[i] = cands[i].first * M + cands[i].second;
      return cols;
    };
    auto sample_group = [&](const std::vector<std::size_t>& slot_ids,
                            const std::vector<std::pair<std::size_t, std::size_t>>& cands,
                            std::vector<SlotReplacement>& dest) {
      Array rows(slot_ids.size(), history.item_embeddings.cols());
      for (std::size_t i = 0; i < slot_ids.size(); ++i) {
        const auto& s = slots[slot_ids[i]];
        const auto src = history.activations[s.modality].row_span(s.position);
        std::copy(src.begin(), src.end(), rows.row_span(i).begin());
      }
      const auto picks = sample_replacements(
          similarity_columns(rows, prepared->activations_t, cand_columns(cands)),
                                             polarity, rng);
      for (std::size_t i = 0; i < slot_ids.size(); ++i) {
        const auto& c = cands[picks[i]];
        dest[slot_ids[i]] = {slots[slot_ids[i]], pool.items[c.first], c.second};
      }
    };
    plan.modality_replacements.resize(slots.size());
    if (!config.same_modality_only) {
      std::vector<std::size_t> ids(slots.size());
      std::iota(ids.begin(), ids.end(), 0);
      sample_group(ids, all_cands, plan.modality_replacements);
    } else {
      for (std::size_t m = 0; m < M; ++m) {
        std::vector<std::size_t> ids;
        for (std::size_t i = 0; i < slots.size(); ++i)
          if (slots[i].modality == m) ids.push_back(i);
        if (ids.empty()) continue;
        std::vector<std::pair<std::size_t, std::size_t>> cands;
        for (std::size_t r : allowed) cands.emplace_back(r, m);
        sample_group(ids, cands, plan.modality_replacements);
      }
    }
  }
  return plan;
}

std::size_t EncodedItems::row(std::size_t gallery_index) const {
  auto it = row_of.find(gallery_index);
  if (it == row_of.end()) {
    throw ContractError("item " + std::to_string(gallery_index) + " was not encoded in this batch");
  }
  return it->second;
}

EncodedItems EncodedItems::encode(const BoundParams& p, const data::FeatureStore& store,
                                  std::vector<std::size_t> gallery) {
  if (gallery.empty()) throw ContractError("EncodedItems: no items");
  EncodedItems out;
  out.gallery = std::move(gallery);
  for (std::size_t r = 0; r < out.gallery.size(); ++r) {
    if (!out.row_of.emplace(out.gallery[r], r).second)
      throw ContractError("EncodedItems: duplicate item " + std::to_string(out.gallery[r]));
  }
  nd::Tape& tape = *p.mod_f.tape;
  out.activations = project(p, gather_raw(tape, store, out.gallery));
  out.items = encode_modalities(p, out.activations).items;
  return out;
}

Var encode_history(const BoundParams& p, const EncodedItems& encoded,
                   std::span<const std::size_t> history) {
  std::vector<std::size_t> rows;
  rows.reserve(history.size());
  for (std::size_t g : history) rows.push_back(encoded.row(g));
  return encode_user(p, nd::gather_rows(encoded.items, rows)).user;
}

std::vector<Var> realize_plans(const BoundParams& p, const EncodedItems& encoded,
                               std::span<const std::span<const std::size_t>> histories,
                               std::span<const AugmentationPlan> plans) {
  if (histories.size() != plans.size()) throw ContractError("realize_plans: histories and plans differ in count");
  const std::size_t N = encoded.gallery.size();
  const std::size_t M = encoded.activations.size();

  // Per plan and position: row in the combined [items; modified items] matrix.
  std::vector<std::vector<std::size_t>> sequence_rows(plans.size());
  std::vector<std::vector<std::size_t>> modified_sources(M);  // rows of [A_1; ...; A_M]
  std::size_t n_modified = 0;
  for (std::size_t b = 0; b < plans.size(); ++b) {
    const auto& hist = histories[b];
    const auto& plan = plans[b];
    if (plan.item_replacements.size() != plan.replaced_item_positions.size())
      throw ContractError("realize_plans: item replacements do not match positions");
    auto& rows = sequence_rows[b];
    rows.resize(hist.size());
    for (std::size_t t = 0; t < hist.size(); ++t) rows[t] = encoded.row(hist[t]);
    for (std::size_t j = 0; j < plan.replaced_item_positions.size(); ++j)
      rows.at(plan.replaced_item_positions[j]) = encoded.row(plan.item_replacements[j]);

    std::vector<std::vector<std::size_t>> sources;  // per modified position
    std::vector<std::size_t> positions;
    for (const auto& rep : plan.modality_replacements) {
      const std::size_t t = rep.slot.position;
      auto it = std::find(positions.begin(), positions.end(), t);
      std::size_t k;
      if (it == positions.end()) {
        positions.push_back(t);
        std::vector<std::size_t> src(M);
        for (std::size_t m = 0; m < M; ++m) src[m] = m * N + encoded.row(hist[t]);
        sources.push_back(std::move(src));
        k = sources.size() - 1;
      } else {
        k = static_cast<std::size_t>(it - positions.begin());
      }
      sources[k].at(rep.slot.modality) = rep.pool_modality * N + encoded.row(rep.pool_item);
    }
    for (std::size_t k = 0; k < positions.size(); ++k) {
      for (std::size_t m = 0; m < M; ++m) modified_sources[m].push_back(sources[k][m]);
      rows[positions[k]] = N + n_modified++;
    }
  }

  Var combined = encoded.items;
  if (n_modified > 0) {
    const Var all_acts = nd::concat_rows(encoded.activations);
    std::vector<Var> acts;
    for (std::size_t m = 0; m < M; ++m) acts.push_back(nd::gather_rows(all_acts, modified_sources[m]));
    const Var parts[] = {encoded.items, encode_modalities(p, acts).items};
    combined = nd::concat_rows(parts);
  }
  std::vector<Var> users;
  users.reserve(plans.size());
  for (const auto& rows : sequence_rows)
    users.push_back(encode_user(p, nd::gather_rows(combined, rows)).user);
  return users;
}

AugmentedUser augment_user(const EncoderParams& params, Aggregation aggregation,
                           const data::FeatureStore& store, std::span<const std::size_t> history,
                           std::size_t target, std::span<const std::size_t> pool_items,
                           Polarity polarity, const AugmentConfig& config, std::uint64_t seed) {
  if (history.empty()) throw ContractError("augment_user: empty history");
  std::vector<std::size_t> gallery(history.begin(), history.end());
  gallery.push_back(target);
  gallery.insert(gallery.end(), pool_items.begin(), pool_items.end());
  std::sort(gallery.begin(), gallery.end());
  gallery.erase(std::unique(gallery.begin(), gallery.end()), gallery.end());

  nd::Tape tape;
  const BoundParams p = bind(tape, params, aggregation, false);
  const auto encoded = EncodedItems::encode(p, store, gallery);

  auto rows_of = [&](std::span<const std::size_t> items) {
    std::vector<std::size_t> r;
    for (std::size_t g : items) r.push_back(encoded.row(g));
    return r;
  };
  const auto hist_rows = rows_of(history);
  const auto pool_rows = rows_of(pool_items);
  HistoryView view{history, take_rows(encoded.items.value(), hist_rows), {}};
  CandidatePool pool;
  pool.items.assign(pool_items.begin(), pool_items.end());
  pool.item_embeddings = take_rows(encoded.items.value(), pool_rows);
  for (const Var& a : encoded.activations) {
    view.activations.push_back(take_rows(a.value(), hist_rows));
    pool.activations.push_back(take_rows(a.value(), pool_rows));
  }
  pool.prepare();

  const ScoreRequest req[] = {{history, target}};
  const auto scores = interest_scores(params, aggregation, store, req)[0];
  std::vector<std::size_t> exclude(history.begin(), history.end());
  exclude.push_back(target);
  const auto allowed = allowed_pool_rows(pool, exclude);

  AugmentedUser out;
  out.plan = plan_augmentation(view, scores, pool, allowed, polarity, config, seed);
  const std::span<const std::size_t> hists[] = {history};
  const AugmentationPlan plans[] = {out.plan};
  out.user_embedding = realize_plans(p, encoded, hists, plans)[0].value();
  return out;
}

}  // namespace demure::model
