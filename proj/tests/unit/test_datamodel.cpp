#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <set>

#include "demure/data/dataset.hpp"
#include "demure/errors.hpp"
#include "test_util.hpp"

using namespace demure;
using namespace demure::data;

namespace {

FeatureStore random_store(Rng& rng, const std::string& name, std::size_t n, std::size_t dim,
                          std::uint64_t id_base = 100) {
  std::vector<ItemId> ids;
  nd::Array f(n, dim);
  for (std::size_t i = 0; i < n; ++i) ids.push_back(id_base + 7 * (n - i));  // unsorted on purpose
  for (auto& x : f.data()) x = static_cast<double>(static_cast<float>(rng.normal()));
  return FeatureStore::single({name, dim}, ids, f);
}

std::vector<std::uint8_t> bytes_of(const FeatureStore& s) { return serialize_feature_modality(s, 0); }

UserTimeline timeline(UserId u, std::vector<std::size_t> items) {
  UserTimeline t;
  t.user = u;
  t.items = std::move(items);
  return t;
}

}  // namespace

TEST_CASE("DMFT: header echo and Tiktok-shaped merge") {
  Rng rng(1);
  const auto bytes = bytes_of(random_store(rng, "visual", 3, 128));
  const FeatureStore s = parse_feature_bytes(bytes);
  CHECK(s.num_items() == 3);
  CHECK(s.modalities().at(0).dim == 128);

  FeatureStore tiktok;
  for (const char* name : {"V", "A", "T"}) {
    Rng same(2);  // identical id sets for every modality
    tiktok.merge(parse_feature_bytes(bytes_of(random_store(same, name, 5, 128))));
  }
  REQUIRE(tiktok.num_modalities() == 3);
  for (const auto& m : tiktok.modalities()) CHECK(m.dim == 128);
}

TEST_CASE("DMFT: ingestion errors carry byte offsets") {
  Rng rng(3);
  auto good = bytes_of(random_store(rng, "v", 2, 4));

  auto bad_magic = good;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(parse_feature_bytes(bad_magic), IngestError);

  auto truncated = good;
  truncated.resize(truncated.size() - 3);
  try {
    parse_feature_bytes(truncated);
    FAIL("expected IngestError");
  } catch (const IngestError& e) {
    CHECK(e.offset() > 20);
  }

  // header: 4 magic + 4 version + 2 len + 1 name + 4 dim + 8 count = 23
  auto duplicate = good;
  const std::size_t header = 23, record = 8 + 4 * 4;
  std::copy(duplicate.begin() + header, duplicate.begin() + header + 8,
            duplicate.begin() + header + record);
  try {
    parse_feature_bytes(duplicate);
    FAIL("expected IngestError");
  } catch (const IngestError& e) {
    CHECK(e.offset() == header + record);
  }

  auto nan = good;
  const std::size_t value_at = header + 8;
  nan[value_at] = 0x00;
  nan[value_at + 1] = 0x00;
  nan[value_at + 2] = 0xC0;
  nan[value_at + 3] = 0x7F;
  try {
    parse_feature_bytes(nan);
    FAIL("expected IngestError");
  } catch (const IngestError& e) {
    CHECK(e.offset() == value_at);
  }
}

TEST_CASE("DMFT: stores must cover the same items to merge") {
  Rng rng(4);
  FeatureStore a = random_store(rng, "a", 3, 2);
  const FeatureStore b = random_store(rng, "b", 4, 2);
  CHECK_THROWS_AS(a.merge(b), DataError);
}

TEST_CASE("property: ingest -> serialize -> ingest is identity") {
  Rng rng(5);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(30), dim = 1 + rng.uniform_index(16);
    const FeatureStore s = parse_feature_bytes(bytes_of(random_store(rng, "m", n, dim)));
    CHECK(parse_feature_bytes(bytes_of(s)) == s);

    InteractionLog log;
    const bool rated = trial % 2 == 0;
    for (std::size_t i = 0; i < 20; ++i) {
      Interaction r{rng.uniform_index(10), rng.uniform_index(1000),
                    static_cast<std::int64_t>(rng.uniform_index(1u << 30)) - (1 << 29), std::nullopt};
      if (rated) r.rating = static_cast<float>(rng.uniform() * 5.0);
      log.records.push_back(r);
    }
    CHECK(parse_interactions(format_interactions(log)) == log);
  }
}

TEST_CASE("interactions: header and column validation") {
  CHECK_THROWS_AS(parse_interactions("1\t2\t3\n"), DataError);
  CHECK_THROWS_AS(parse_interactions("user_id\titem_id\ttimestamp\n1\t2\n"), DataError);
  CHECK_THROWS_AS(parse_interactions("user_id\titem_id\ttimestamp\n1\tx\t3\n"), DataError);
  const auto log = parse_interactions("user_id\titem_id\ttimestamp\trating\n1\t2\t3\t4.5\n");
  REQUIRE(log.records.size() == 1);
  CHECK(*log.records[0].rating == 4.5f);
}

TEST_CASE("timelines: chronological order and unknown items counted") {
  Rng rng(6);
  const FeatureStore store = random_store(rng, "m", 3, 2, 0);  // ids 7, 14, 21
  InteractionLog log;
  log.records = {{1, 21, 30, {}}, {1, 7, 10, {}}, {1, 99, 20, {}}, {2, 14, 5, {}}};
  IngestReport report;
  const auto tls = build_timelines(log, store, report);
  REQUIRE(tls.size() == 2);
  CHECK(tls[0].items == std::vector<std::size_t>{store.require_index(7), store.require_index(21)});
  CHECK(report.get("records_unknown_item") == 1);
  CHECK(report.to_jsonl("ingest").find("\"records_unknown_item\"") != std::string::npos);
}

TEST_CASE("split_users: 8:1:1 and determinism") {
  std::vector<UserId> ten(10), thousand(1000);
  std::iota(ten.begin(), ten.end(), UserId{1});
  std::iota(thousand.begin(), thousand.end(), UserId{1});

  const auto s10 = split_users(ten, 42);
  CHECK(s10.train_users.size() == 8);
  CHECK(s10.valid_users.size() == 1);
  CHECK(s10.test_users.size() == 1);

  const auto s = split_users(thousand, 7);
  CHECK(s.train_users.size() == 800);
  CHECK(s.valid_users.size() == 100);
  CHECK(s.test_users.size() == 100);
  CHECK(split_users(thousand, 7) == s);
  CHECK_FALSE(split_users(thousand, 8) == s);

  std::set<UserId> all;
  for (auto* part : {&s.train_users, &s.valid_users, &s.test_users}) all.insert(part->begin(), part->end());
  CHECK(all.size() == 1000);

  CHECK_THROWS_AS(split_users({1, 2, 3}, 0), ConfigError);
}

TEST_CASE("make_training_examples: sliding window and truncation") {
  DatasetSplit split;
  split.train_users = {1, 2, 3};
  const std::vector<UserTimeline> tls = {timeline(1, {10, 11, 12}), timeline(2, {5, 6, 7, 8}),
                                         timeline(3, {4}), timeline(4, {1, 2, 3})};
  IngestReport report;
  const auto ex = make_training_examples(tls, split, 20, report);
  REQUIRE(ex.size() == 2 + 3);
  CHECK(ex[0].history.items == std::vector<std::size_t>{10});
  CHECK(ex[0].target == 11);
  CHECK(ex[1].history.items == std::vector<std::size_t>{10, 11});
  CHECK(ex[1].target == 12);
  CHECK(report.get("train_users_too_short") == 1);

  IngestReport r2;
  const auto trunc = make_training_examples(tls, split, 2, r2);
  const auto& last = trunc.back();
  CHECK(last.history.items == std::vector<std::size_t>{6, 7});
  CHECK(last.target == 8);
  for (const auto& e : trunc) CHECK(e.history.items.size() <= 2);
}

TEST_CASE("property: a training target is the item right after its window") {
  Rng rng(8);
  std::vector<UserTimeline> tls;
  DatasetSplit split;
  for (UserId u = 0; u < 30; ++u) {
    std::vector<std::size_t> items(2 + rng.uniform_index(30));
    for (auto& i : items) i = rng.uniform_index(50);
    tls.push_back(timeline(u, items));
    split.train_users.push_back(u);
  }
  IngestReport report;
  const std::size_t max_len = 7;
  for (const auto& ex : make_training_examples(tls, split, max_len, report)) {
    const auto& items = tls[ex.history.user].items;
    const auto& h = ex.history.items;
    // locate the window: it must be a contiguous run immediately followed by the target
    bool found = false;
    for (std::size_t p = 1; p < items.size() && !found; ++p) {
      const std::size_t start = p > max_len ? p - max_len : 0;
      found = items[p] == ex.target && h.size() == p - start &&
              std::equal(h.begin(), h.end(), items.begin() + static_cast<std::ptrdiff_t>(start));
    }
    CHECK(found);
  }
}

TEST_CASE("make_eval_examples: 80/20 split per user") {
  std::vector<std::size_t> ten(10), five(5), four(4);
  std::iota(ten.begin(), ten.end(), std::size_t{0});
  std::iota(five.begin(), five.end(), std::size_t{0});
  std::iota(four.begin(), four.end(), std::size_t{0});
  const std::vector<UserTimeline> tls = {timeline(1, ten), timeline(2, five), timeline(3, four)};
  const std::vector<UserId> users{1, 2, 3};
  IngestReport report;
  const auto ex = make_eval_examples(tls, users, 20, report);
  REQUIRE(ex.size() == 2);
  CHECK(ex[0].history.items.size() == 8);
  CHECK(ex[0].targets.size() == 2);
  CHECK(ex[1].history.items.size() == 4);
  CHECK(ex[1].targets.size() == 1);
  CHECK(report.get("eval_users_too_short") == 1);

  IngestReport r2;
  const auto trunc = make_eval_examples(tls, users, 3, r2);
  CHECK(trunc[0].history.items == std::vector<std::size_t>{5, 6, 7});
}

TEST_CASE("sample_candidates: exhaustion, empty draws and exclusion") {
  const std::unordered_set<std::size_t> exclude{0, 1};
  auto all = sample_candidates(5, exclude, 3, std::uint64_t{9});
  std::sort(all.begin(), all.end());
  CHECK(all == std::vector<std::size_t>{2, 3, 4});
  CHECK(sample_candidates(5, exclude, 0, std::uint64_t{9}).empty());
  CHECK_THROWS_AS(sample_candidates(5, exclude, 4, std::uint64_t{9}), ConfigError);
  CHECK(sample_candidates(100, exclude, 10, std::uint64_t{3}) ==
        sample_candidates(100, exclude, 10, std::uint64_t{3}));

  Rng rng(10);
  std::unordered_set<std::size_t> ex;
  for (std::size_t i = 0; i < 40; ++i) ex.insert(rng.uniform_index(100));
  std::size_t violations = 0;
  for (int draw = 0; draw < 10000; ++draw) {
    for (auto i : sample_candidates(100, ex, 5, rng)) violations += ex.contains(i);
  }
  CHECK(violations == 0);
}

TEST_CASE("dataset directory round trip") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "demure_test_dataset";
  fs::remove_all(dir);
  fs::create_directories(dir);
  Rng rng(11);
  Rng same(12);
  const FeatureStore a = random_store(same, "a", 6, 3);
  Rng same2(12);
  FeatureStore b = random_store(same2, "b", 6, 3);
  write_feature_file(dir / "b.dmft", b, 0);
  write_feature_file(dir / "a.dmft", a, 0);
  InteractionLog log;
  for (int i = 0; i < 12; ++i) log.records.push_back({static_cast<UserId>(i % 3), a.item_id(i % 6), i, {}});
  write_interactions(dir / "interactions.tsv", log);
  write_dataset_manifest(dir, {{dir / "b.dmft", dir / "a.dmft"}, dir / "interactions.tsv"});

  const Dataset ds = load_dataset(dir);
  REQUIRE(ds.store.num_modalities() == 2);
  CHECK(ds.store.modalities()[0].name == "b");
  CHECK(ds.timelines.size() == 3);
  CHECK(ds.timeline(1)->items.size() == 4);
  CHECK(ds.timeline(99) == nullptr);
  fs::remove_all(dir);
}
