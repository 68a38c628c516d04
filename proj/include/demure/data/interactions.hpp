#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "demure/data/features.hpp"

namespace demure::data {

struct Interaction {
  UserId user = 0;
  ItemId item = 0;
  std::int64_t timestamp = 0;
  std::optional<float> rating;

  friend bool operator==(const Interaction&, const Interaction&) = default;
};

/// Counters of records and users dropped during ingestion or example building.
struct IngestReport {
  std::map<std::string, std::uint64_t> counts;

  void add(const std::string& key, std::uint64_t n = 1) { counts[key] += n; }
  std::uint64_t get(const std::string& key) const;
  // One JSON object per line: {"stage": ..., "counter": ..., "count": ...}.
  std::string to_jsonl(const std::string& stage) const;
};

struct InteractionLog {
  std::vector<Interaction> records;

  bool has_ratings() const;
  friend bool operator==(const InteractionLog&, const InteractionLog&) = default;
};

/// One user's chronologically ordered interactions, as gallery indices.
struct UserTimeline {
  UserId user = 0;
  std::vector<std::size_t> items;
  std::vector<float> ratings;  // NaN where the log has no rating
  std::vector<std::int64_t> timestamps;
};

/// Parses the TSV interaction file: header row, then
/// user_id, item_id, timestamp[, rating] per line.
InteractionLog parse_interactions(const std::string& text, const std::string& source = "<memory>");
InteractionLog read_interactions(const std::filesystem::path& path);
std::string format_interactions(const InteractionLog& log);
void write_interactions(const std::filesystem::path& path, const InteractionLog& log);

/// Groups the log per user (ascending user id), stable-sorted by timestamp.
/// Records whose item is missing from `store` are dropped and counted.
std::vector<UserTimeline> build_timelines(const InteractionLog& log, const FeatureStore& store,
                                          IngestReport& report);

}  // namespace demure::data
