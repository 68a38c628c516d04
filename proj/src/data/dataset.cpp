#include "demure/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>

#include "demure/errors.hpp"

namespace demure::data {

DatasetSplit split_users(std::vector<UserId> user_ids, std::uint64_t seed) {
  std::sort(user_ids.begin(), user_ids.end());
  user_ids.erase(std::unique(user_ids.begin(), user_ids.end()), user_ids.end());
  const std::size_t n = user_ids.size();
  if (n < 10) {
    throw ConfigError("split_users: need at least 10 users, got " + std::to_string(n));
  }
  Rng rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) {
    std::swap(user_ids[i], user_ids[rng.uniform_index(i + 1)]);
  }
  const auto n_train = static_cast<std::size_t>(std::lround(0.8 * static_cast<double>(n)));
  const auto n_valid = static_cast<std::size_t>(std::lround(0.1 * static_cast<double>(n)));
  DatasetSplit split;
  auto it = user_ids.begin();
  split.train_users.assign(it, it + static_cast<std::ptrdiff_t>(n_train));
  it += static_cast<std::ptrdiff_t>(n_train);
  split.valid_users.assign(it, it + static_cast<std::ptrdiff_t>(n_valid));
  it += static_cast<std::ptrdiff_t>(n_valid);
  split.test_users.assign(it, user_ids.end());
  return split;
}

const std::vector<UserId>& users_of(const DatasetSplit& split, SplitPart part) {
  switch (part) {
    case SplitPart::kTrain: return split.train_users;
    case SplitPart::kValid: return split.valid_users;
    case SplitPart::kTest: return split.test_users;
  }
  return split.test_users;
}

SplitPart parse_split_part(const std::string& name) {
  if (name == "train") return SplitPart::kTrain;
  if (name == "valid") return SplitPart::kValid;
  if (name == "test") return SplitPart::kTest;
  throw ConfigError("unknown split '" + name + "' (expected train, valid or test)");
}

std::vector<TrainingExample> make_training_examples(std::span<const UserTimeline> timelines,
                                                    const DatasetSplit& split,
                                                    std::size_t max_len, IngestReport& report) {
  if (max_len == 0) throw ConfigError("max_history must be positive");
  const std::unordered_set<UserId> train(split.train_users.begin(), split.train_users.end());
  std::vector<TrainingExample> out;
  for (const auto& tl : timelines) {
    if (!train.contains(tl.user)) continue;
    if (tl.items.size() < 2) {
      report.add("train_users_too_short");
      continue;
    }
    for (std::size_t p = 1; p < tl.items.size(); ++p) {
      const std::size_t start = p > max_len ? p - max_len : 0;
      TrainingExample ex;
      ex.history.user = tl.user;
      ex.history.max_len = max_len;
      ex.history.items.assign(tl.items.begin() + static_cast<std::ptrdiff_t>(start),
                              tl.items.begin() + static_cast<std::ptrdiff_t>(p));
      ex.target = tl.items[p];
      out.push_back(std::move(ex));
    }
  }
  report.add("train_examples", out.size());
  return out;
}

std::vector<EvalExample> make_eval_examples(std::span<const UserTimeline> timelines,
                                            std::span<const UserId> users, std::size_t max_len,
                                            IngestReport& report) {
  if (max_len == 0) throw ConfigError("max_history must be positive");
  const std::unordered_set<UserId> wanted(users.begin(), users.end());
  std::vector<EvalExample> out;
  for (const auto& tl : timelines) {
    if (!wanted.contains(tl.user)) continue;
    const std::size_t n = tl.items.size();
    const std::size_t cut = static_cast<std::size_t>(std::floor(0.8 * static_cast<double>(n)));
    if (n < 5 || cut == 0 || cut >= n) {
      report.add("eval_users_too_short");
      continue;
    }
    EvalExample ex;
    ex.history.user = tl.user;
    ex.history.max_len = max_len;
    const std::size_t start = cut > max_len ? cut - max_len : 0;
    ex.history.items.assign(tl.items.begin() + static_cast<std::ptrdiff_t>(start),
                            tl.items.begin() + static_cast<std::ptrdiff_t>(cut));
    ex.targets.assign(tl.items.begin() + static_cast<std::ptrdiff_t>(cut), tl.items.end());
    ex.consumed.assign(tl.items.begin(), tl.items.begin() + static_cast<std::ptrdiff_t>(cut));
    out.push_back(std::move(ex));
  }
  report.add("eval_users", out.size());
  return out;
}

std::vector<std::size_t> sample_candidates(std::size_t gallery_size,
                                           const std::unordered_set<std::size_t>& exclude,
                                           std::size_t n, Rng& rng) {
  std::vector<std::size_t> pool;
  pool.reserve(gallery_size);
  for (std::size_t i = 0; i < gallery_size; ++i)
    if (!exclude.contains(i)) pool.push_back(i);
  if (n > pool.size()) {
    throw ConfigError("sample_candidates: requested " + std::to_string(n) + " items but only " +
                      std::to_string(pool.size()) + " remain after exclusions");
  }
  for (std::size_t i = 0; i < n; ++i) {
    std::swap(pool[i], pool[i + rng.uniform_index(pool.size() - i)]);
  }
  pool.resize(n);
  return pool;
}

std::vector<std::size_t> sample_candidates(std::size_t gallery_size,
                                           const std::unordered_set<std::size_t>& exclude,
                                           std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  return sample_candidates(gallery_size, exclude, n, rng);
}

std::vector<UserId> Dataset::user_ids() const {
  std::vector<UserId> ids;
  ids.reserve(timelines.size());
  for (const auto& tl : timelines) ids.push_back(tl.user);
  return ids;
}

const UserTimeline* Dataset::timeline(UserId user) const {
  auto it = std::lower_bound(timelines.begin(), timelines.end(), user,
                             [](const UserTimeline& t, UserId u) { return t.user < u; });
  return (it != timelines.end() && it->user == user) ? &*it : nullptr;
}

DatasetFiles resolve_dataset_files(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw DataError("data directory not found: " + dir.string());
  DatasetFiles files;
  const fs::path manifest = dir / "dataset.json";
  if (fs::exists(manifest)) {
    std::ifstream f(manifest);
    nlohmann::json j;
    try {
      f >> j;
      for (const auto& p : j.at("features")) files.features.push_back(dir / p.get<std::string>());
      files.interactions = dir / j.at("interactions").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw DataError(manifest.string() + ": " + e.what());
    }
  } else {
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.path().extension() == ".dmft") files.features.push_back(entry.path());
    }
    std::sort(files.features.begin(), files.features.end());
    files.interactions = dir / "interactions.tsv";
  }
  if (files.features.empty()) throw DataError(dir.string() + ": no feature files");
  return files;
}

void write_dataset_manifest(const std::filesystem::path& dir, const DatasetFiles& files) {
  nlohmann::json j;
  j["features"] = nlohmann::json::array();
  for (const auto& p : files.features) j["features"].push_back(p.filename().string());
  j["interactions"] = files.interactions.filename().string();
  std::ofstream f(dir / "dataset.json", std::ios::trunc);
  f << j.dump(2) << '\n';
}

Dataset load_dataset(const DatasetFiles& files) {
  Dataset ds;
  for (const auto& p : files.features) ds.store.merge(read_feature_file(p));
  ds.log = read_interactions(files.interactions);
  ds.timelines = build_timelines(ds.log, ds.store, ds.report);
  return ds;
}

Dataset load_dataset(const std::filesystem::path& dir) {
  return load_dataset(resolve_dataset_files(dir));
}

}  // namespace demure::data
