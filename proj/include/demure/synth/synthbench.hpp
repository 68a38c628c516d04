#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "demure/data/dataset.hpp"
#include "demure/model/localization.hpp"

namespace demure::synth {

enum class DriverRule { kRandom, kRoundRobin };

/// Planted-preference benchmark. Keys of the flat JSON form match the field
/// names; `raw_dims` may be a single number applied to every modality.
struct SynthConfig {
  std::size_t n_users = 2000;
  std::size_t n_items = 1000;
  std::size_t n_modalities = 3;
  std::vector<std::size_t> raw_dims{32, 32, 32};
  std::size_t n_clusters = 10;
  std::size_t interactions_per_user = 20;
  double noise_rate = 0.3;
  double feature_noise = 0.1;
  DriverRule driver_rule = DriverRule::kRandom;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static SynthConfig from_json(const nlohmann::json& j);
  void update(const nlohmann::json& j);
};

struct UserTruth {
  std::size_t driver_modality = 0;
  std::size_t preferred_cluster = 0;
};

struct InteractionTruth {
  data::UserId user = 0;
  data::ItemId item = 0;
  std::int64_t timestamp = 0;
  bool noise = false;
};

struct GroundTruth {
  std::map<data::UserId, UserTruth> users;
  std::vector<InteractionTruth> interactions;  // aligned with the log records
  std::vector<std::vector<std::size_t>> item_clusters;  // [gallery index][modality]

  bool is_noise(data::UserId user, data::ItemId item) const;
};

struct SynthDataset {
  data::FeatureStore store;
  data::InteractionLog log;
  GroundTruth truth;
};

/// Pure function of the config: items draw one cluster per modality and a
/// feature vector around that cluster's unit-norm center; each interaction is
/// noise with probability noise_rate (uniform random item), otherwise an item
/// whose driver-modality cluster is the user's preferred one. Items are
/// distinct within a user. Ratings: 5 for preference matches, 1 for noise.
SynthDataset generate(const SynthConfig& config);

/// The dataset as load_dataset would return it after write_synth.
data::Dataset to_dataset(const SynthDataset& ds);

/// Writes m<k>.dmft, interactions.tsv, dataset.json, truth_users.tsv
/// (user_id, driver_modality, preferred_cluster) and truth_interactions.tsv
/// (user_id, item_id, timestamp, noise).
void write_synth(const std::filesystem::path& dir, const SynthDataset& ds);
/// Item clusters are not written, so the result leaves item_clusters empty.
GroundTruth read_ground_truth(const std::filesystem::path& dir);

struct LocalizationSample {
  data::UserId user = 0;
  std::vector<data::ItemId> items;  // history, position order
  model::InterestScoreMap scores;
};

struct LocalizationSummary {
  double accuracy = 0.0;          // share of users whose driver has the top mean score
  double mean_gap = 0.0;          // mean over users of driver score minus mean other score
  double driver_mean_alpha = 0.0;
  double other_mean_alpha = 0.0;
  std::size_t n_users = 0;
};

/// Per user, modality scores are averaged over the non-noise positions; users
/// without any such position are skipped.
LocalizationSummary localization_accuracy(std::span<const LocalizationSample> samples,
                                          const GroundTruth& truth);

/// Interest scores for each given user: the last max_history items before the
/// final interaction form the history and the final interaction the target.
std::vector<LocalizationSample> score_users(const model::EncoderParams& params,
                                            model::Aggregation aggregation,
                                            const data::Dataset& data,
                                            std::span<const data::UserId> users,
                                            std::size_t max_history);

}  // namespace demure::synth
