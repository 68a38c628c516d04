#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "demure/errors.hpp"
#include "demure/model/localization.hpp"
#include "demure/ndcore/gradcheck.hpp"
#include "test_util.hpp"

using namespace demure;
using namespace demure::model;
using nd::Array;
using testing::random_array;

namespace {

data::FeatureStore random_store(Rng& rng, std::size_t n_items, std::vector<std::size_t> dims) {
  std::vector<data::ItemId> ids(n_items);
  for (std::size_t i = 0; i < n_items; ++i) ids[i] = 100 + i;
  data::FeatureStore store;
  for (std::size_t m = 0; m < dims.size(); ++m) {
    store.merge(data::FeatureStore::single({"m" + std::to_string(m), dims[m]}, ids,
                                           random_array(rng, n_items, dims[m])));
  }
  return store;
}

EncoderParams random_params(Rng& rng, std::vector<std::size_t> dims, std::size_t d) {
  EncoderConfig cfg{dims, d, 2 * d, Aggregation::kAttention};
  auto p = EncoderParams::init(cfg, rng);
  for (auto& n : p.named())
    for (auto& v : n.array->data()) v = 0.5 * rng.normal();
  return p;
}

// psi for one history as a function of modality m's L x d activation block.
double psi_given(const EncoderParams& p, const data::FeatureStore& store,
                 const std::vector<std::size_t>& hist, std::size_t target, std::size_t m,
                 const Array& block) {
  nd::Tape t;
  const auto bp = bind(t, p, Aggregation::kAttention, false);
  auto acts = project(bp, gather_raw(t, store, hist));
  acts[m] = t.constant(block);
  const auto items = encode_modalities(bp, acts).items;
  const std::size_t tg[] = {target};
  const auto e = encode_modalities(bp, project(bp, gather_raw(t, store, tg))).items;
  return score(encode_user(bp, items).user, e).value()[0];
}

Array activation_block(const EncoderParams& p, const data::FeatureStore& store,
                       const std::vector<std::size_t>& hist, std::size_t m) {
  nd::Tape t;
  const auto bp = bind(t, p, Aggregation::kAttention, false);
  return project(bp, gather_raw(t, store, hist))[m].value();
}

}  // namespace

TEST_CASE("bypass wiring scores the first item by the target's mean coordinate") {
  Rng rng(31);
  nd::Tape t;
  const auto items = t.leaf(random_array(rng, 3, 5));
  const Array target = random_array(rng, 1, 5);
  const std::size_t first[] = {0};
  t.backward(nd::dot(nd::gather_rows(items, first), t.constant(target)));
  const auto s = pool_gradients(t, items, {});
  double mean = 0.0;
  for (double v : target.data()) mean += v;
  mean /= 5.0;
  CHECK(s.item_scores[0] == doctest::Approx(mean).epsilon(1e-15));
  CHECK(s.item_scores[1] == 0.0);
  CHECK(s.item_scores[2] == 0.0);
}

TEST_CASE("untracked or foreign nodes are contract errors") {
  nd::Tape t, other;
  const auto c = t.constant(Array(2, 2, 1.0));
  CHECK_THROWS_AS(pool_gradients(t, c, {}), ContractError);
  const auto leaf = other.leaf(Array(2, 2, 1.0));
  CHECK_THROWS_AS(pool_gradients(t, leaf, {}), ContractError);
}

TEST_CASE("a duplicated item gets equal scores at both positions") {
  Rng rng(32);
  const auto store = random_store(rng, 10, {3, 4});
  const auto p = random_params(rng, {3, 4}, 4);
  const std::vector<std::size_t> hist{2, 5, 2};
  const ScoreRequest req[] = {{hist, 7}};
  const auto s = interest_scores(p, Aggregation::kAttention, store, req)[0];
  CHECK(s.item_scores[0] == doctest::Approx(s.item_scores[2]).epsilon(1e-12));
  for (std::size_t m = 0; m < 2; ++m)
    CHECK(s.modality_scores(0, m) == doctest::Approx(s.modality_scores(2, m)).epsilon(1e-12));
}

TEST_CASE("modality scores match finite differences of psi") {
  Rng rng(33);
  const auto store = random_store(rng, 12, {3, 5});
  for (int trial = 0; trial < 5; ++trial) {
    const auto p = random_params(rng, {3, 5}, 4);
    const std::vector<std::size_t> hist{1, 4, 9};
    const std::size_t target = 6;
    const ScoreRequest req[] = {{hist, target}};
    const auto s = interest_scores(p, Aggregation::kAttention, store, req)[0];
    for (std::size_t m = 0; m < 2; ++m) {
      const Array block = activation_block(p, store, hist, m);
      const auto num = nd::numeric_gradient(
          [&](const Array& x) { return psi_given(p, store, hist, target, m, x); }, block, 1e-5);
      for (std::size_t t = 0; t < hist.size(); ++t) {
        double mean = 0.0;
        for (std::size_t k = 0; k < 4; ++k) mean += num(t, k);
        mean /= 4.0;
        // relative error, with near-zero scores compared on a 1e-6 scale
        CHECK(std::abs(mean - s.modality_scores(t, m)) <=
              1e-4 * std::max(std::abs(s.modality_scores(t, m)), 1e-6));
      }
    }
  }
}

TEST_CASE("batched requests equal one-at-a-time requests") {
  Rng rng(34);
  const auto store = random_store(rng, 15, {2, 3, 4});
  const auto p = random_params(rng, {2, 3, 4}, 5);
  const std::vector<std::size_t> h1{0, 3, 8, 8}, h2{14}, h3{5, 6};
  const ScoreRequest all[] = {{h1, 2}, {h2, 1}, {h3, 0}};
  const auto batched = interest_scores(p, Aggregation::kAttention, store, all);
  for (std::size_t b = 0; b < 3; ++b) {
    const auto single = interest_scores(p, Aggregation::kAttention, store,
                                        std::span<const ScoreRequest>(&all[b], 1))[0];
    CHECK(single.item_scores == batched[b].item_scores);
    CHECK(single.modality_scores == batched[b].modality_scores);
  }
}

TEST_CASE("doubling the output layer doubles every score exactly") {
  Rng rng(35);
  const auto store = random_store(rng, 10, {3, 3});
  const auto p = random_params(rng, {3, 3}, 4);
  auto q = p;
  for (auto& v : q.ffn_w2.data()) v *= 2.0;
  for (auto& v : q.ffn_b2.data()) v *= 2.0;
  const std::vector<std::size_t> hist{0, 1, 2, 3};
  const ScoreRequest req[] = {{hist, 9}};
  const auto a = interest_scores(p, Aggregation::kAttention, store, req)[0];
  const auto b = interest_scores(q, Aggregation::kAttention, store, req)[0];
  for (std::size_t t = 0; t < 4; ++t) {
    CHECK(std::abs(b.item_scores[t] - 2.0 * a.item_scores[t]) <= 1e-12);
    for (std::size_t m = 0; m < 2; ++m)
      CHECK(std::abs(b.modality_scores(t, m) - 2.0 * a.modality_scores(t, m)) <= 1e-12);
  }
}

TEST_CASE("scoring leaves parameters untouched") {
  Rng rng(36);
  const auto store = random_store(rng, 8, {3});
  const auto p = random_params(rng, {3}, 4);
  const auto before = p;
  const std::vector<std::size_t> hist{0, 1};
  const ScoreRequest req[] = {{hist, 5}};
  (void)interest_scores(p, Aggregation::kAttention, store, req);
  CHECK(p == before);
  const ScoreRequest empty[] = {{std::span<const std::size_t>(), 5}};
  CHECK_THROWS_AS(interest_scores(p, Aggregation::kAttention, store, empty), ContractError);
}
