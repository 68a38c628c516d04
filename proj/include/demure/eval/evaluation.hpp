#pragma once

#include <cstdint>
#include <json.hpp>
#include <span>
#include <string>
#include <vector>

#include "demure/data/dataset.hpp"
#include "demure/model/encoder.hpp"
#include "demure/train/config.hpp"

namespace demure::eval {

/// Every gallery item encoded with fixed parameters.
struct GalleryEncoding {
  nd::Array items;             // N x d
  nd::Array modality_weights;  // N x M
};

GalleryEncoding encode_gallery(const model::EncoderParams& params, model::Aggregation aggregation,
                               const data::FeatureStore& store);

struct TopK {
  std::vector<std::size_t> items;  // gallery indices, best first
  bool clamped = false;            // fewer candidates than requested
};

/// Top-k gallery rows by inner product with `user`, descending; equal scores
/// go to the lower gallery index (the lower item id). `exclude` rows are
/// skipped.
TopK retrieve_topk(std::span<const double> user, const nd::Array& items, std::size_t k,
                   std::span<const std::size_t> exclude = {});

/// |topk ∩ targets| / |targets|.
double recall_at_k(std::span<const std::size_t> topk, std::span<const std::size_t> targets);
/// Binary-relevance DCG over topk divided by the ideal DCG of
/// min(|targets|, k) hits, where k defaults to topk.size().
double ndcg_at_k(std::span<const std::size_t> topk, std::span<const std::size_t> targets,
                 std::size_t k = 0);

struct EvalOptions {
  std::vector<std::size_t> ks{20, 50};
  bool exclude_history = true;
  std::size_t threads = 1;
};

struct MetricsReport {
  std::vector<std::size_t> ks;
  std::vector<double> recall;  // aligned with ks
  std::vector<double> ndcg;
  std::size_t n_users = 0;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  std::vector<std::string> warnings;

  nlohmann::json to_json() const;
};

/// Per-user metrics averaged over `examples`. Results are reduced in
/// ascending user id order, so thread count and example order do not change
/// the numbers.
MetricsReport evaluate(const model::EncoderParams& params, model::Aggregation aggregation,
                       const data::FeatureStore& store, std::span<const data::EvalExample> examples,
                       const EvalOptions& options);

/// Evaluates one part of the user split implied by `config`.
MetricsReport evaluate_split(const model::EncoderParams& params, const train::TrainConfig& config,
                             const data::Dataset& data, data::SplitPart part,
                             const EvalOptions& options);

}  // namespace demure::eval
