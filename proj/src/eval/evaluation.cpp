#include "demure/eval/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <thread>
#include <unordered_set>

#include "demure/errors.hpp"
#include "demure/model/augmentation.hpp"
#include "demure/ndcore/linalg.hpp"
#include "demure/ndcore/tape.hpp"

namespace demure::eval {

using nd::Array;

GalleryEncoding encode_gallery(const model::EncoderParams& params, model::Aggregation aggregation,
                               const data::FeatureStore& store) {
  std::vector<std::size_t> all(store.num_items());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  nd::Tape tape;
  const auto p = model::bind(tape, params, aggregation, false);
  std::vector<nd::Var> raw;
  for (std::size_t m = 0; m < store.num_modalities(); ++m) raw.push_back(tape.constant(store.features(m)));
  const auto enc = model::encode_modalities(p, model::project(p, raw));
  return {enc.items.value(), enc.modality_weights.value()};
}

TopK retrieve_topk(std::span<const double> user, const Array& items, std::size_t k,
                   std::span<const std::size_t> exclude) {
  if (user.size() != items.cols()) {
    throw ContractError("retrieve_topk: user dim " + std::to_string(user.size()) +
                        " differs from item dim " + std::to_string(items.cols()));
  }
  std::vector<bool> skip(items.rows(), false);
  for (std::size_t e : exclude)
    if (e < skip.size()) skip[e] = true;
  std::vector<std::pair<double, std::size_t>> cand;
  cand.reserve(items.rows());
  for (std::size_t i = 0; i < items.rows(); ++i)
    if (!skip[i]) cand.emplace_back(nd::dot(user, items.row_span(i)), i);
  TopK out;
  if (k > cand.size()) {
    out.clamped = true;
    k = cand.size();
  }
  auto better = [](const auto& a, const auto& b) {
    return a.first > b.first || (a.first == b.first && a.second < b.second);
  };
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end(), better);
  out.items.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.items.push_back(cand[i].second);
  return out;
}

double recall_at_k(std::span<const std::size_t> topk, std::span<const std::size_t> targets) {
  if (targets.empty()) throw ContractError("recall_at_k: empty target set");
  const std::unordered_set<std::size_t> t(targets.begin(), targets.end());
  std::size_t hits = 0;
  for (std::size_t i : topk) hits += t.contains(i);
  return static_cast<double>(hits) / static_cast<double>(t.size());
}

double ndcg_at_k(std::span<const std::size_t> topk, std::span<const std::size_t> targets, std::size_t k) {
  if (targets.empty()) throw ContractError("ndcg_at_k: empty target set");
  if (k == 0) k = topk.size();
  const std::unordered_set<std::size_t> t(targets.begin(), targets.end());
  double dcg = 0.0;
  for (std::size_t r = 0; r < std::min(k, topk.size()); ++r)
    if (t.contains(topk[r])) dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  double idcg = 0.0;
  for (std::size_t r = 0; r < std::min(t.size(), k); ++r) idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  return idcg > 0.0 ? dcg / idcg : 0.0;
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json metrics = nlohmann::json::object();
  for (std::size_t i = 0; i < ks.size(); ++i) {
    metrics["recall@" + std::to_string(ks[i])] = recall[i];
    metrics["ndcg@" + std::to_string(ks[i])] = ndcg[i];
  }
  return {{"ks", ks},
          {"metrics", metrics},
          {"n_users", n_users},
          {"seed", seed},
          {"config_hash", config_hash},
          {"warnings", warnings}};
}

MetricsReport evaluate(const model::EncoderParams& params, model::Aggregation aggregation,
                       const data::FeatureStore& store, std::span<const data::EvalExample> examples,
                       const EvalOptions& options) {
  if (options.ks.empty()) throw ConfigError("evaluation needs at least one K");
  if (examples.empty()) throw DataError("no evaluable users (each needs at least five interactions)");
  const auto gallery = encode_gallery(params, aggregation, store);
  const std::size_t kmax = *std::max_element(options.ks.begin(), options.ks.end());
  const std::size_t nk = options.ks.size();

  struct PerUser {
    data::UserId user = 0;
    std::vector<double> recall, ndcg;
    bool clamped = false;
  };
  std::vector<PerUser> per(examples.size());
  auto work = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t e = lo; e < hi; ++e) {
      const auto& ex = examples[e];
      if (ex.targets.empty()) throw ContractError("evaluate: user without targets");
      Array hist(ex.history.items.size(), gallery.items.cols());
      for (std::size_t t = 0; t < ex.history.items.size(); ++t) {
        const auto src = gallery.items.row_span(ex.history.items[t]);
        std::copy(src.begin(), src.end(), hist.row_span(t).begin());
      }
      const auto u = model::encode_user(params, hist, aggregation).user_embedding;
      const auto& excl = ex.consumed.empty() ? ex.history.items : ex.consumed;
      const auto top = retrieve_topk(u.data(), gallery.items, kmax,
                                     options.exclude_history ? std::span<const std::size_t>(excl)
                                                             : std::span<const std::size_t>{});
      PerUser& r = per[e];
      r.user = ex.history.user;
      r.clamped = top.clamped;
      for (std::size_t k : options.ks) {
        const auto head = std::span(top.items).first(std::min(k, top.items.size()));
        r.recall.push_back(recall_at_k(head, ex.targets));
        r.ndcg.push_back(ndcg_at_k(head, ex.targets, k));
      }
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(options.threads, examples.size()));
  if (threads == 1) {
    work(0, examples.size());
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    const std::size_t chunk = (examples.size() + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
      const std::size_t lo = t * chunk, hi = std::min(examples.size(), lo + chunk);
      pool.emplace_back([&, t, lo, hi] {
        try {
          work(lo, hi);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  std::sort(per.begin(), per.end(), [](const PerUser& a, const PerUser& b) { return a.user < b.user; });
  MetricsReport rep;
  rep.ks = options.ks;
  rep.recall.assign(nk, 0.0);
  rep.ndcg.assign(nk, 0.0);
  bool clamped = false;
  for (const auto& r : per) {
    for (std::size_t i = 0; i < nk; ++i) {
      rep.recall[i] += r.recall[i];
      rep.ndcg[i] += r.ndcg[i];
    }
    clamped = clamped || r.clamped;
  }
  const double n = static_cast<double>(per.size());
  for (std::size_t i = 0; i < nk; ++i) {
    rep.recall[i] /= n;
    rep.ndcg[i] /= n;
  }
  rep.n_users = per.size();
  if (clamped) {
    rep.warnings.push_back("K = " + std::to_string(kmax) +
                           " exceeds the candidate count for some users; their lists were clamped");
  }
  return rep;
}

MetricsReport evaluate_split(const model::EncoderParams& params, const train::TrainConfig& config,
                             const data::Dataset& data, data::SplitPart part,
                             const EvalOptions& options) {
  const auto split = data::split_users(data.user_ids(), config.split_seed);
  data::IngestReport report;
  const auto examples =
      data::make_eval_examples(data.timelines, data::users_of(split, part), config.max_history, report);
  auto rep = evaluate(params, config.aggregation, data.store, examples, options);
  rep.seed = config.seed;
  rep.config_hash = train::config_hash(config);
  return rep;
}

}  // namespace demure::eval
