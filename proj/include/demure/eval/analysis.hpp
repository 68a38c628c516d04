#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "demure/data/dataset.hpp"
#include "demure/model/encoder.hpp"
#include "demure/train/config.hpp"

namespace demure::eval {

/// Aggregation weights the encoder assigns within one user's history.
struct UserAttention {
  data::UserId user = 0;
  std::vector<double> item_weights;  // L
  nd::Array modality_weights;        // L x M, row t = beta_m of item t
};

/// The last max_history items of each user's full timeline.
std::vector<UserAttention> attention_weights(const model::EncoderParams& params,
                                             model::Aggregation aggregation,
                                             const data::Dataset& data,
                                             std::span<const data::UserId> users,
                                             std::size_t max_history);

struct AttentionVariance {
  std::size_t runs = 0;
  std::size_t users = 0;
  double item_across_runs = 0.0;      // mean over users and slots of the variance across runs
  double modality_across_runs = 0.0;
  std::vector<double> item_within_user;  // per run: mean over users of the variance inside the user
  std::vector<double> modality_within_user;

  /// Rows of (level, statistic, value).
  std::string to_csv() const;
};

/// Population variances. `runs[r][u]` must describe the same user and history
/// length for every r.
AttentionVariance attention_variance(std::span<const std::vector<UserAttention>> runs);

/// Hash of `config` with the seed cleared: runs that differ only by seed
/// compare equal.
std::uint64_t config_hash_ignoring_seed(const train::TrainConfig& config);

/// min-max normalized and scaled to [0, 5]; a constant sequence maps to 2.5.
std::vector<double> scaled_interest(std::span<const double> alpha);

struct InterestRatingCell {
  data::UserId user = 0;
  std::size_t position = 0;
  data::ItemId item = 0;
  double rating = 0.0;
  double scaled_alpha = 0.0;
  double diff = 0.0;
};

/// For `n_users` users drawn with `seed` among those with more than
/// `n_items` interactions: interest scores of their last n_items items
/// before the final one (which serves as the target), scaled to [0, 5] and
/// compared with the logged ratings. Throws DataError without ratings.
std::vector<InterestRatingCell> interest_rating_diff(const model::EncoderParams& params,
                                                     model::Aggregation aggregation,
                                                     const data::Dataset& data,
                                                     std::size_t n_users, std::size_t n_items,
                                                     std::uint64_t seed);
std::string interest_rating_csv(std::span<const InterestRatingCell> cells);

/// kind,id,v0..v{d-1}: every gallery item, then each listed user encoded
/// from the last max_history items of the timeline.
std::string embeddings_csv(const model::EncoderParams& params, model::Aggregation aggregation,
                           const data::Dataset& data, std::span<const data::UserId> users,
                           std::size_t max_history);

/// One JSON line per augmentation plan (positive then negative per user),
/// built from each user's last history window with the final item as
/// target against a pool of n_pool items drawn with `seed`.
std::string plans_jsonl(const model::EncoderParams& params, const train::TrainConfig& config,
                        const data::Dataset& data, std::span<const data::UserId> users,
                        std::uint64_t seed);

}  // namespace demure::eval
