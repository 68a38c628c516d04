#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <unordered_set>
#include <vector>

#include "demure/data/features.hpp"
#include "demure/data/interactions.hpp"
#include "demure/rng.hpp"

namespace demure::data {

/// User-level 8:1:1 partition. Users in valid/test never appear in training.
struct DatasetSplit {
  std::vector<UserId> train_users;
  std::vector<UserId> valid_users;
  std::vector<UserId> test_users;

  friend bool operator==(const DatasetSplit&, const DatasetSplit&) = default;
};

enum class SplitPart { kTrain, kValid, kTest };

/// Shuffles the (sorted) user ids with `seed`, then takes round(0.8 U) for
/// training, round(0.1 U) for validation and the remainder for test.
DatasetSplit split_users(std::vector<UserId> user_ids, std::uint64_t seed);
const std::vector<UserId>& users_of(const DatasetSplit& split, SplitPart part);
SplitPart parse_split_part(const std::string& name);

/// A truncated history (gallery indices, chronological) for one user.
struct UserSequence {
  UserId user = 0;
  std::vector<std::size_t> items;
  std::size_t max_len = 0;
};

struct TrainingExample {
  UserSequence history;
  std::size_t target = 0;
};

struct EvalExample {
  UserSequence history;
  std::vector<std::size_t> targets;
  std::vector<std::size_t> consumed;  // every item before the cut, untruncated
};

/// Sliding-window next-item examples for every training user: for each
/// position p >= 1 the history is the last min(p, max_len) items before p.
std::vector<TrainingExample> make_training_examples(std::span<const UserTimeline> timelines,
                                                    const DatasetSplit& split,
                                                    std::size_t max_len, IngestReport& report);

/// First floor(0.8 |S|) interactions as history (last max_len kept), the rest
/// as targets. Users with fewer than five interactions are skipped.
std::vector<EvalExample> make_eval_examples(std::span<const UserTimeline> timelines,
                                            std::span<const UserId> users, std::size_t max_len,
                                            IngestReport& report);

/// n distinct gallery indices drawn uniformly from [0, gallery_size) minus
/// `exclude`.
std::vector<std::size_t> sample_candidates(std::size_t gallery_size,
                                           const std::unordered_set<std::size_t>& exclude,
                                           std::size_t n, Rng& rng);
std::vector<std::size_t> sample_candidates(std::size_t gallery_size,
                                           const std::unordered_set<std::size_t>& exclude,
                                           std::size_t n, std::uint64_t seed);

/// Everything loaded from a data directory.
struct Dataset {
  FeatureStore store;
  InteractionLog log;
  std::vector<UserTimeline> timelines;
  IngestReport report;

  std::vector<UserId> user_ids() const;
  const UserTimeline* timeline(UserId user) const;
};

/// Data directory layout: dataset.json lists the feature files in modality
/// order plus the interaction file. Without dataset.json, all *.dmft files
/// (sorted by name) and interactions.tsv are used.
struct DatasetFiles {
  std::vector<std::filesystem::path> features;
  std::filesystem::path interactions;
};

DatasetFiles resolve_dataset_files(const std::filesystem::path& dir);
void write_dataset_manifest(const std::filesystem::path& dir, const DatasetFiles& files);
Dataset load_dataset(const std::filesystem::path& dir);
Dataset load_dataset(const DatasetFiles& files);

}  // namespace demure::data
