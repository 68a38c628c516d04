#pragma once

#include <span>
#include <vector>

#include "demure/data/features.hpp"
#include "demure/model/encoder.hpp"

namespace demure::model {

/// Gradient-based interest scores for one history.
struct InterestScoreMap {
  std::vector<double> item_scores;  // one per position
  nd::Array modality_scores;        // L x M, row t = position t
};

/// Pools the stored gradients of a tape after backward(psi): item score t is
/// the mean of row t of d psi / d items, modality score (t, m) the mean of row t
/// of d psi / d activations[m]. All nodes must be gradient-tracked on `tape`.
InterestScoreMap pool_gradients(const nd::Tape& tape, nd::Var items,
                                std::span<const nd::Var> activations);

struct ScoreRequest {
  std::span<const std::size_t> history;  // gallery indices, chronological
  std::size_t target = 0;
};

/// Interest scores of psi(u, target) for each request, computed on a private
/// tape with `params` held constant. One reverse sweep serves all requests.
std::vector<InterestScoreMap> interest_scores(const EncoderParams& params,
                                              Aggregation aggregation,
                                              const data::FeatureStore& store,
                                              std::span<const ScoreRequest> requests);

/// Raw features of the given gallery items as one constant per modality.
std::vector<nd::Var> gather_raw(nd::Tape& tape, const data::FeatureStore& store,
                                std::span<const std::size_t> items);

}  // namespace demure::model
