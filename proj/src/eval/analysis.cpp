#include "demure/eval/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <sstream>

#include "demure/errors.hpp"
#include "demure/eval/evaluation.hpp"
#include "demure/model/augmentation.hpp"
#include "demure/model/localization.hpp"

namespace demure::eval {

using nd::Array;

namespace {

// Last `max_len` items before `end` of the timeline.
std::span<const std::size_t> window(const data::UserTimeline& tl, std::size_t end, std::size_t max_len) {
  const std::size_t start = end > max_len ? end - max_len : 0;
  return std::span(tl.items).subspan(start, end - start);
}

const data::UserTimeline& timeline_of(const data::Dataset& data, data::UserId u) {
  const auto* tl = data.timeline(u);
  if (tl == nullptr) throw LookupError("user " + std::to_string(u) + " has no interactions");
  return *tl;
}

Array gather(const Array& a, std::span<const std::size_t> rows) {
  Array out(rows.size(), a.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto src = a.row_span(rows[r]);
    std::copy(src.begin(), src.end(), out.row_span(r).begin());
  }
  return out;
}

double population_variance(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return s / static_cast<double>(v.size());
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::vector<UserAttention> attention_weights(const model::EncoderParams& params,
                                             model::Aggregation aggregation,
                                             const data::Dataset& data,
                                             std::span<const data::UserId> users,
                                             std::size_t max_history) {
  const auto gallery = encode_gallery(params, aggregation, data.store);
  std::vector<UserAttention> out;
  for (data::UserId u : users) {
    const auto& tl = timeline_of(data, u);
    const auto hist = window(tl, tl.items.size(), max_history);
    if (hist.empty()) continue;
    UserAttention a;
    a.user = u;
    const auto enc = model::encode_user(params, gather(gallery.items, hist), aggregation);
    a.item_weights.assign(enc.item_weights.data().begin(), enc.item_weights.data().end());
    a.modality_weights = gather(gallery.modality_weights, hist);
    out.push_back(std::move(a));
  }
  return out;
}

AttentionVariance attention_variance(std::span<const std::vector<UserAttention>> runs) {
  if (runs.size() < 2) throw ConfigError("attention variance needs at least two runs");
  const std::size_t U = runs[0].size();
  for (const auto& r : runs)
    if (r.size() != U) throw ContractError("attention_variance: runs cover different users");
  AttentionVariance out;
  out.runs = runs.size();
  out.users = U;
  if (U == 0) throw DataError("attention variance needs at least one user");

  std::vector<double> across(runs.size());
  double item_sum = 0.0, mod_sum = 0.0;
  for (std::size_t u = 0; u < U; ++u) {
    const auto& ref = runs[0][u];
    for (const auto& r : runs) {
      if (r[u].user != ref.user || r[u].item_weights.size() != ref.item_weights.size() ||
          r[u].modality_weights.shape() != ref.modality_weights.shape()) {
        throw ContractError("attention_variance: user " + std::to_string(ref.user) +
                            " differs between runs");
      }
    }
    double s = 0.0;
    for (std::size_t t = 0; t < ref.item_weights.size(); ++t) {
      for (std::size_t r = 0; r < runs.size(); ++r) across[r] = runs[r][u].item_weights[t];
      s += population_variance(across);
    }
    item_sum += s / static_cast<double>(ref.item_weights.size());
    s = 0.0;
    const std::size_t slots = ref.modality_weights.size();
    for (std::size_t k = 0; k < slots; ++k) {
      for (std::size_t r = 0; r < runs.size(); ++r) across[r] = runs[r][u].modality_weights.data()[k];
      s += population_variance(across);
    }
    mod_sum += s / static_cast<double>(slots);
  }
  out.item_across_runs = item_sum / static_cast<double>(U);
  out.modality_across_runs = mod_sum / static_cast<double>(U);

  for (const auto& r : runs) {
    double iw = 0.0, mw = 0.0;
    for (const auto& a : r) {
      iw += population_variance(a.item_weights);
      mw += population_variance(a.modality_weights.data());
    }
    out.item_within_user.push_back(iw / static_cast<double>(U));
    out.modality_within_user.push_back(mw / static_cast<double>(U));
  }
  return out;
}

std::string AttentionVariance::to_csv() const {
  std::ostringstream os;
  os << "level,statistic,value\n";
  os << "item,across_run_variance," << fmt(item_across_runs) << '\n';
  os << "modality,across_run_variance," << fmt(modality_across_runs) << '\n';
  for (std::size_t r = 0; r < item_within_user.size(); ++r) {
    os << "item,within_user_variance_run" << r << ',' << fmt(item_within_user[r]) << '\n';
    os << "modality,within_user_variance_run" << r << ',' << fmt(modality_within_user[r]) << '\n';
  }
  os << "meta,runs," << runs << '\n';
  os << "meta,users," << users << '\n';
  return os.str();
}

std::uint64_t config_hash_ignoring_seed(const train::TrainConfig& config) {
  auto c = config;
  c.seed = 0;
  return train::config_hash(c);
}

std::vector<double> scaled_interest(std::span<const double> alpha) {
  std::vector<double> out(alpha.size(), 2.5);
  if (alpha.empty()) return out;
  const auto [lo, hi] = std::minmax_element(alpha.begin(), alpha.end());
  if (!(*hi > *lo)) return out;
  for (std::size_t i = 0; i < alpha.size(); ++i) out[i] = 5.0 * (alpha[i] - *lo) / (*hi - *lo);
  return out;
}

std::vector<InterestRatingCell> interest_rating_diff(const model::EncoderParams& params,
                                                     model::Aggregation aggregation,
                                                     const data::Dataset& data,
                                                     std::size_t n_users, std::size_t n_items,
                                                     std::uint64_t seed) {
  if (!data.log.has_ratings()) throw DataError("interest-rating analysis needs a rating column");
  if (n_items == 0 || n_users == 0) throw ConfigError("interest-rating grid must be non-empty");
  std::vector<const data::UserTimeline*> eligible;
  for (const auto& tl : data.timelines)
    if (tl.items.size() > n_items) eligible.push_back(&tl);
  if (eligible.size() < n_users) {
    throw DataError("only " + std::to_string(eligible.size()) + " users have more than " +
                    std::to_string(n_items) + " interactions");
  }
  Rng rng(seed);
  for (std::size_t i = 0; i < n_users; ++i)
    std::swap(eligible[i], eligible[i + rng.uniform_index(eligible.size() - i)]);
  eligible.resize(n_users);

  std::vector<model::ScoreRequest> requests;
  for (const auto* tl : eligible) {
    const std::size_t end = tl->items.size() - 1;
    requests.push_back({std::span(tl->items).subspan(end - n_items, n_items), tl->items[end]});
  }
  const auto scores = model::interest_scores(params, aggregation, data.store, requests);
  std::vector<InterestRatingCell> cells;
  for (std::size_t u = 0; u < eligible.size(); ++u) {
    const auto* tl = eligible[u];
    const std::size_t start = tl->items.size() - 1 - n_items;
    const auto scaled = scaled_interest(scores[u].item_scores);
    for (std::size_t t = 0; t < n_items; ++t) {
      const float rating = tl->ratings[start + t];
      if (std::isnan(rating)) {
        throw DataError("user " + std::to_string(tl->user) + " has an interaction without rating");
      }
      cells.push_back({tl->user, t, data.store.item_id(tl->items[start + t]), rating, scaled[t],
                       std::abs(scaled[t] - rating)});
    }
  }
  return cells;
}

std::string interest_rating_csv(std::span<const InterestRatingCell> cells) {
  std::ostringstream os;
  os << "user_id,position,item_id,rating,scaled_alpha,diff\n";
  for (const auto& c : cells) {
    os << c.user << ',' << c.position << ',' << c.item << ',' << fmt(c.rating) << ','
       << fmt(c.scaled_alpha) << ',' << fmt(c.diff) << '\n';
  }
  return os.str();
}

std::string embeddings_csv(const model::EncoderParams& params, model::Aggregation aggregation,
                           const data::Dataset& data, std::span<const data::UserId> users,
                           std::size_t max_history) {
  const auto gallery = encode_gallery(params, aggregation, data.store);
  const std::size_t d = gallery.items.cols();
  std::ostringstream os;
  os << "kind,id";
  for (std::size_t k = 0; k < d; ++k) os << ",v" << k;
  os << '\n';
  auto row = [&](const char* kind, std::uint64_t id, std::span<const double> v) {
    os << kind << ',' << id;
    for (double x : v) os << ',' << fmt(x);
    os << '\n';
  };
  for (std::size_t i = 0; i < gallery.items.rows(); ++i) row("item", data.store.item_id(i), gallery.items.row_span(i));
  for (data::UserId u : users) {
    const auto& tl = timeline_of(data, u);
    const auto hist = window(tl, tl.items.size(), max_history);
    if (hist.empty()) continue;
    const auto enc = model::encode_user(params, gather(gallery.items, hist), aggregation);
    row("user", u, enc.user_embedding.data());
  }
  return os.str();
}

std::string plans_jsonl(const model::EncoderParams& params, const train::TrainConfig& config,
                        const data::Dataset& data, std::span<const data::UserId> users,
                        std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t n = data.store.num_items();
  const auto pool = data::sample_candidates(n, {}, std::min(config.n_pool, n), rng);
  std::ostringstream os;
  for (data::UserId u : users) {
    const auto& tl = timeline_of(data, u);
    if (tl.items.size() < 2) continue;
    const auto hist = window(tl, tl.items.size() - 1, config.max_history);
    for (auto pol : {model::Polarity::kPositive, model::Polarity::kNegative}) {
      const auto plan_seed = rng.next_u64();
      const auto aug = model::augment_user(params, config.aggregation, data.store, hist,
                                           tl.items.back(), pool, pol, config.augment_config(),
                                           plan_seed);
      const auto& p = aug.plan;
      nlohmann::json j;
      j["user_id"] = u;
      j["polarity"] = model::to_string(p.polarity);
      j["gamma_i"] = p.gamma_i;
      j["gamma_m"] = p.gamma_m;
      j["rng_seed"] = p.rng_seed;
      std::vector<data::ItemId> history_ids;
      for (std::size_t g : hist) history_ids.push_back(data.store.item_id(g));
      j["history"] = history_ids;
      j["replaced_positions"] = p.replaced_item_positions;
      std::vector<data::ItemId> repl;
      for (std::size_t g : p.item_replacements) repl.push_back(data.store.item_id(g));
      j["item_replacements"] = repl;
      auto slots = nlohmann::json::array();
      for (const auto& s : p.modality_replacements) {
        slots.push_back({{"position", s.slot.position},
                         {"modality", s.slot.modality},
                         {"source_item", data.store.item_id(s.pool_item)},
                         {"source_modality", s.pool_modality}});
      }
      j["modality_replacements"] = slots;
      os << j.dump() << '\n';
    }
  }
  return os.str();
}

}  // namespace demure::eval
