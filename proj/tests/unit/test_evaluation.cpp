#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <numeric>
#include <sstream>

#include "demure/errors.hpp"
#include "demure/eval/analysis.hpp"
#include "demure/eval/evaluation.hpp"
#include "demure/model/localization.hpp"
#include "demure/synth/synthbench.hpp"
#include "test_util.hpp"

using namespace demure;
using namespace demure::eval;
using nd::Array;
using Ids = std::vector<std::size_t>;

namespace {

Array column(std::vector<double> v) {
  Array a(v.size(), 1);
  for (std::size_t i = 0; i < v.size(); ++i) a(i, 0) = v[i];
  return a;
}

synth::SynthDataset small_synth(std::uint64_t seed) {
  synth::SynthConfig c;
  c.n_users = 60;
  c.n_items = 150;
  c.raw_dims = {6, 6, 6};
  c.n_clusters = 4;
  c.interactions_per_user = 10;
  c.seed = seed;
  return synth::generate(c);
}

model::EncoderParams params_for(const data::FeatureStore& store, std::uint64_t seed,
                                model::Aggregation agg = model::Aggregation::kAttention) {
  Rng rng(seed);
  model::EncoderConfig cfg;
  for (const auto& m : store.modalities()) cfg.raw_dims.push_back(m.dim);
  cfg.d = 6;
  cfg.d_hidden = 12;
  cfg.aggregation = agg;
  return model::EncoderParams::init(cfg, rng);
}

}  // namespace

TEST_CASE("top-k follows score order with ties to the lower index") {
  const double u[] = {1.0};
  CHECK(retrieve_topk(u, column({0.9, 0.1, 0.5}), 2).items == Ids{0, 2});
  CHECK(retrieve_topk(u, column({0.3, 0.3, 0.3, 0.3}), 4).items == Ids{0, 1, 2, 3});
  CHECK(retrieve_topk(u, column({0.1, 0.7, 0.7, 0.2}), 3).items == Ids{1, 2, 3});
  const Ids excl{1};
  CHECK(retrieve_topk(u, column({0.1, 0.7, 0.7, 0.2}), 2, excl).items == Ids{2, 3});
  const auto clamped = retrieve_topk(u, column({0.1, 0.2}), 5, excl);
  CHECK(clamped.clamped);
  CHECK(clamped.items == Ids{0});
  const double wrong[] = {1.0, 2.0};
  CHECK_THROWS_AS(retrieve_topk(wrong, column({0.1}), 1), ContractError);
}

TEST_CASE("top-k agrees with a full stable sort on 1000 random galleries") {
  Rng rng(7);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(60), d = 1 + rng.uniform_index(3);
    // small integers make exact ties frequent
    Array items(n, d);
    for (auto& x : items.data()) x = static_cast<double>(rng.uniform_index(4)) - 1.0;
    std::vector<double> u(d);
    for (auto& x : u) x = static_cast<double>(rng.uniform_index(3));
    Ids excl;
    for (std::size_t i = 0; i < n; ++i)
      if (rng.bernoulli(0.2)) excl.push_back(i);
    const std::size_t k = rng.uniform_index(n + 3);

    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = 0.0;
      for (std::size_t c = 0; c < d; ++c) s[i] += u[c] * items(i, c);
    }
    Ids order;
    for (std::size_t i = 0; i < n; ++i)
      if (std::find(excl.begin(), excl.end(), i) == excl.end()) order.push_back(i);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
    if (order.size() > k) order.resize(k);

    const auto got = retrieve_topk(u, items, k, excl);
    mismatches += got.items != order;
    CHECK(got.clamped == (k > n - excl.size()));
  }
  CHECK(mismatches == 0);
}

TEST_CASE("recall and ndcg examples") {
  CHECK(recall_at_k(Ids{1, 5, 7}, Ids{1, 2}) == 0.5);
  CHECK(recall_at_k(Ids{2, 1, 9}, Ids{1, 2}) == 1.0);
  CHECK(recall_at_k(Ids{3, 4}, Ids{1, 2}) == 0.0);
  CHECK(ndcg_at_k(Ids{4, 0}, Ids{4}) == 1.0);
  CHECK(ndcg_at_k(Ids{0, 4}, Ids{4}) == doctest::Approx(1.0 / std::log2(3.0)).epsilon(1e-15));
  CHECK(std::abs(ndcg_at_k(Ids{0, 4}, Ids{4}) - 0.6309) < 1e-4);
  CHECK(ndcg_at_k(Ids{0, 1}, Ids{4}) == 0.0);
  // three targets, K = 2, both slots hit: ideal DCG is capped at two hits
  CHECK(ndcg_at_k(Ids{7, 8}, Ids{7, 8, 9}) == 1.0);
  // recall still divides by every target
  CHECK(recall_at_k(Ids{7, 8}, Ids{7, 8, 9}) == doctest::Approx(2.0 / 3.0));
  CHECK_THROWS_AS(recall_at_k(Ids{1}, Ids{}), ContractError);
  CHECK_THROWS_AS(ndcg_at_k(Ids{1}, Ids{}), ContractError);
}

TEST_CASE("oracle and adversarial retrievers score 1 and 0") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 40;
    Ids targets;
    for (std::size_t i = 0; i < n; ++i)
      if (rng.bernoulli(0.15)) targets.push_back(i);
    if (targets.empty()) targets.push_back(rng.uniform_index(n));
    Array good(n, 1), bad(n, 1);
    for (std::size_t i = 0; i < n; ++i) {
      const bool t = std::find(targets.begin(), targets.end(), i) != targets.end();
      good(i, 0) = t ? 1e300 : rng.uniform();
      bad(i, 0) = t ? -1e300 : rng.uniform();
    }
    const double u[] = {1.0};
    const std::size_t k = targets.size() + rng.uniform_index(5);
    const auto top = retrieve_topk(u, good, k).items;
    CHECK(recall_at_k(top, targets) == 1.0);
    CHECK(ndcg_at_k(top, targets, k) == 1.0);
    const std::size_t kb = n - targets.size();
    const auto worst = retrieve_topk(u, bad, kb).items;
    CHECK(recall_at_k(worst, targets) == 0.0);
    CHECK(ndcg_at_k(worst, targets, kb) == 0.0);
  }
}

TEST_CASE("random embeddings give the chance recall K/N") {
  // Expected recall@20 with a uniformly random ranking of 1000 items is
  // 20/1000 whatever the target count; checked over 50 seeds x 40 users.
  const std::size_t n = 1000, d = 8, k = 20;
  std::vector<double> per_user;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const Array items = testing::random_array(rng, n, d);
    for (int user = 0; user < 40; ++user) {
      std::vector<double> u(d);
      for (auto& x : u) x = rng.normal();
      const auto targets = data::sample_candidates(n, {}, 1 + rng.uniform_index(8), rng);
      per_user.push_back(recall_at_k(retrieve_topk(u, items, k).items, targets));
    }
  }
  const double mean = std::accumulate(per_user.begin(), per_user.end(), 0.0) / per_user.size();
  double var = 0.0;
  for (double r : per_user) var += (r - mean) * (r - mean);
  const double se = std::sqrt(var / (per_user.size() - 1) / per_user.size());
  INFO("mean " << mean << " se " << se);
  CHECK(std::abs(mean - 0.02) <= 4.0 * se);
}

TEST_CASE("split evaluation is independent of thread count and example order") {
  const auto data = synth::to_dataset(small_synth(1));
  const auto params = params_for(data.store, 2);
  train::TrainConfig cfg;
  cfg.max_history = 5;
  data::IngestReport rep;
  const auto users = data.user_ids();
  auto examples = data::make_eval_examples(data.timelines, users, 5, rep);
  REQUIRE(examples.size() == 60);

  EvalOptions opt;
  opt.ks = {5, 20};
  const auto a = evaluate(params, cfg.aggregation, data.store, examples, opt);
  std::reverse(examples.begin(), examples.end());
  opt.threads = 4;
  const auto b = evaluate(params, cfg.aggregation, data.store, examples, opt);
  CHECK(a.to_json() == b.to_json());
  CHECK(a.n_users == 60);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(a.recall[i] >= 0.0);
    CHECK(a.recall[i] <= 1.0);
    CHECK(a.ndcg[i] >= 0.0);
    CHECK(a.ndcg[i] <= 1.0);
  }
  CHECK(a.recall[1] >= a.recall[0]);

  const auto split = evaluate_split(params, cfg, data, data::SplitPart::kTest, {});
  CHECK(split.n_users == data::split_users(users, cfg.split_seed).test_users.size());
  CHECK(split.config_hash == train::config_hash(cfg));
  const auto j = split.to_json();
  CHECK(j.at("metrics").contains("recall@20"));
  CHECK(j.at("metrics").contains("ndcg@50"));
  CHECK(j.at("ks") == nlohmann::json({20, 50}));

  CHECK_THROWS_AS(evaluate(params, cfg.aggregation, data.store, {}, opt), DataError);
  opt.ks = {500};
  CHECK_FALSE(evaluate(params, cfg.aggregation, data.store, examples, opt).warnings.empty());
}

TEST_CASE("history items never appear in the retrieved list") {
  const auto data = synth::to_dataset(small_synth(3));
  const auto params = params_for(data.store, 4);
  data::IngestReport rep;
  const auto examples = data::make_eval_examples(data.timelines, data.user_ids(), 3, rep);
  const auto gallery = encode_gallery(params, model::Aggregation::kAttention, data.store);
  for (const auto& ex : examples) {
    CHECK(ex.consumed.size() == 8);
    const auto top = retrieve_topk(std::vector<double>(gallery.items.cols(), 1.0), gallery.items, 50,
                                   ex.consumed);
    for (std::size_t g : top.items)
      CHECK(std::find(ex.consumed.begin(), ex.consumed.end(), g) == ex.consumed.end());
  }
}

TEST_CASE("attention variance arithmetic") {
  auto user = [](data::UserId u, std::vector<double> items, std::vector<double> mods) {
    UserAttention a;
    a.user = u;
    a.item_weights = items;
    a.modality_weights = Array(items.size(), mods.size() / items.size());
    std::copy(mods.begin(), mods.end(), a.modality_weights.data().begin());
    return a;
  };
  const std::vector<std::vector<UserAttention>> same{{user(1, {0.2, 0.8}, {0.5, 0.5, 0.1, 0.9})},
                                                     {user(1, {0.2, 0.8}, {0.5, 0.5, 0.1, 0.9})}};
  const auto s = attention_variance(same);
  CHECK(s.item_across_runs == 0.0);
  CHECK(s.modality_across_runs == 0.0);

  const std::vector<std::vector<UserAttention>> two{{user(1, {0.4, 0.6}, {0.5, 0.5, 0.5, 0.5})},
                                                    {user(1, {0.6, 0.4}, {0.5, 0.5, 0.5, 0.5})}};
  const auto t = attention_variance(two);
  CHECK(t.item_across_runs == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(t.modality_across_runs == 0.0);
  CHECK(t.modality_within_user == std::vector<double>{0.0, 0.0});
  CHECK(t.item_within_user[0] == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(t.to_csv().rfind("level,statistic,value\n", 0) == 0);

  CHECK_THROWS_AS(attention_variance(std::vector<std::vector<UserAttention>>{same[0]}), ConfigError);
  const std::vector<std::vector<UserAttention>> diff{{user(1, {0.5, 0.5}, {1, 0, 1, 0})},
                                                     {user(2, {0.5, 0.5}, {1, 0, 1, 0})}};
  CHECK_THROWS_AS(attention_variance(diff), ContractError);
}

TEST_CASE("mean aggregation has no within-user attention variance") {
  const auto data = synth::to_dataset(small_synth(5));
  const std::vector<data::UserId> users{1, 2, 3, 4};
  std::vector<std::vector<UserAttention>> runs;
  for (std::uint64_t seed : {1, 2})
    runs.push_back(attention_weights(params_for(data.store, seed, model::Aggregation::kMean),
                                     model::Aggregation::kMean, data, users, 6));
  const auto v = attention_variance(runs);
  CHECK(v.item_across_runs == 0.0);
  CHECK(v.modality_across_runs == 0.0);
  for (double x : v.item_within_user) CHECK(x < 1e-30);
  for (double x : v.modality_within_user) CHECK(x < 1e-30);

  std::vector<std::vector<UserAttention>> att;
  for (std::uint64_t seed : {1, 2})
    att.push_back(attention_weights(params_for(data.store, seed), model::Aggregation::kAttention, data, users, 6));
  CHECK(attention_variance(att).item_across_runs > 0.0);

  train::TrainConfig a, b;
  a.seed = 1;
  b.seed = 2;
  CHECK(config_hash_ignoring_seed(a) == config_hash_ignoring_seed(b));
  b.lambda1 = 0.0;
  CHECK(config_hash_ignoring_seed(a) != config_hash_ignoring_seed(b));
}

TEST_CASE("interest scaling maps the range to [0, 5]") {
  CHECK(scaled_interest(std::vector<double>{0.3, 0.3, 0.3}) == std::vector<double>{2.5, 2.5, 2.5});
  const auto s = scaled_interest(std::vector<double>{-1.0, 3.0, 1.0});
  CHECK(s == std::vector<double>{0.0, 5.0, 2.5});
}

TEST_CASE("ratings that echo the scaled interest give zero difference") {
  auto ds = small_synth(6);
  auto data = synth::to_dataset(ds);
  const auto params = params_for(data.store, 7);
  const auto cells = interest_rating_diff(params, model::Aggregation::kAttention, data, 5, 6, 11);
  REQUIRE(cells.size() == 30);
  for (const auto& c : cells) {
    CHECK(c.scaled_alpha >= 0.0);
    CHECK(c.scaled_alpha <= 5.0);
    CHECK(c.diff == doctest::Approx(std::abs(c.scaled_alpha - c.rating)));
  }
  // Rewrite ratings to the scaled scores and score again.
  for (const auto& c : cells)
    for (auto& r : ds.log.records)
      if (r.user == c.user && r.item == c.item) r.rating = static_cast<float>(c.scaled_alpha);
  data = synth::to_dataset(ds);
  const auto again = interest_rating_diff(params, model::Aggregation::kAttention, data, 5, 6, 11);
  for (const auto& c : again) CHECK(c.diff < 1e-6);
  CHECK(interest_rating_csv(again).rfind("user_id,position,item_id,rating,scaled_alpha,diff\n", 0) == 0);

  for (auto& r : ds.log.records) r.rating.reset();
  data = synth::to_dataset(ds);
  CHECK_THROWS_AS(interest_rating_diff(params, model::Aggregation::kAttention, data, 5, 6, 11), DataError);
}

TEST_CASE("embedding and plan dumps") {
  const auto data = synth::to_dataset(small_synth(8));
  const auto params = params_for(data.store, 9);
  const std::vector<data::UserId> users{1, 2, 3};
  const auto csv = embeddings_csv(params, model::Aggregation::kAttention, data, users, 5);
  std::istringstream in(csv);
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) ++lines;
  CHECK(lines == 1 + 150 + 3);
  CHECK(csv.rfind("kind,id,v0,v1,v2,v3,v4,v5\n", 0) == 0);

  train::TrainConfig cfg;
  cfg.d = 6;
  cfg.d_hidden = 12;
  cfg.max_history = 5;
  cfg.n_pool = 40;
  const auto jsonl = plans_jsonl(params, cfg, data, users, 3);
  std::istringstream pin(jsonl);
  std::size_t plans = 0;
  while (std::getline(pin, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.at("replaced_positions").size() == 2);  // floor(5 * 0.4)
    CHECK(j.at("modality_replacements").size() == 1);  // floor(3 * 3 * 0.2)
    ++plans;
  }
  CHECK(plans == 6);
  CHECK(plans_jsonl(params, cfg, data, users, 3) == jsonl);
}
