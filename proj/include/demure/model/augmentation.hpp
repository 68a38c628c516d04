#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "demure/model/encoder.hpp"
#include "demure/model/localization.hpp"
#include "demure/rng.hpp"

namespace demure::model {

// Negative views replace the highest-scoring slots with dissimilar
// substitutes; positive views replace the lowest-scoring ones with similar
// substitutes.
enum class Polarity { kPositive, kNegative };

std::string to_string(Polarity p);

struct ModalitySlot {
  std::size_t position = 0;
  std::size_t modality = 0;

  friend bool operator==(const ModalitySlot&, const ModalitySlot&) = default;
};

struct SlotReplacement {
  ModalitySlot slot;
  std::size_t pool_item = 0;      // gallery index of the source item
  std::size_t pool_modality = 0;  // which of its activations is copied
};

struct AugmentationPlan {
  Polarity polarity = Polarity::kPositive;
  double gamma_i = 0.0;
  double gamma_m = 0.0;
  std::vector<std::size_t> replaced_item_positions;  // ascending
  std::vector<std::size_t> item_replacements;        // gallery index per replaced position
  std::vector<SlotReplacement> modality_replacements;
  std::uint64_t rng_seed = 0;
};

struct AugmentConfig {
  double gamma_i = 0.4;
  double gamma_m = 0.2;
  bool same_modality_only = false;
};

/// floor(L * gamma_i) and floor((L - K_i) * M * gamma_m). A 1e-9 slack absorbs
/// binary representation error of decimal rates (0.3 * 10 is 2.9999...).
std::size_t item_budget(std::size_t L, double gamma_i);
std::size_t modality_budget(std::size_t L, std::size_t K_i, std::size_t M, double gamma_m);

/// K_i positions: highest scores for negative plans, lowest for positive.
/// Ties go to the lower position. Returned in ascending position order.
std::vector<std::size_t> select_item_targets(std::span<const double> scores, double gamma_i,
                                             Polarity polarity);

/// The k most (negative) or least (positive) interesting (position, modality)
/// slots among `positions`. Ties go to the lower (position, modality).
std::vector<ModalitySlot> select_modality_slots(const nd::Array& modality_scores,
                                                std::span<const std::size_t> positions,
                                                std::size_t k, Polarity polarity);

/// D = rows * pool^T, min-max normalized per row; constant rows become 0.5.
nd::Array similarity_distribution(const nd::Array& rows, const nd::Array& pool);

/// One index per row of P, drawn with weights 1 - P (negative) or P
/// (positive); an all-zero weight row falls back to uniform.
std::vector<std::size_t> sample_replacements(const nd::Array& P, Polarity polarity, Rng& rng);

/// Detached encodings of the candidate pool shared by a batch.
struct CandidatePool {
  std::vector<std::size_t> items;      // gallery indices
  nd::Array item_embeddings;           // |pool| x d
  std::vector<nd::Array> activations;  // per modality |pool| x d

  // Transposed copies filled by prepare(); column r*M + m of activations_t is
  // activations[m] row r. Planning builds them on the fly when absent.
  nd::Array item_embeddings_t;
  nd::Array activations_t;
  void prepare();
};

/// Detached encodings of one history.
struct HistoryView {
  std::span<const std::size_t> items;  // gallery indices
  nd::Array item_embeddings;           // L x d
  std::vector<nd::Array> activations;  // per modality L x d
};

/// Plans one augmented view. `allowed` lists the pool rows this user may draw
/// from (the caller removes the user's own items).
AugmentationPlan plan_augmentation(const HistoryView& history, const InterestScoreMap& scores,
                                   const CandidatePool& pool, std::span<const std::size_t> allowed,
                                   Polarity polarity, const AugmentConfig& config,
                                   std::uint64_t seed);

/// Pool rows whose items are not in `exclude`.
std::vector<std::size_t> allowed_pool_rows(const CandidatePool& pool,
                                           std::span<const std::size_t> exclude);

/// Tape-resident encodings of a set of gallery items.
struct EncodedItems {
  std::vector<std::size_t> gallery;  // row -> gallery index
  std::unordered_map<std::size_t, std::size_t> row_of;
  std::vector<nd::Var> activations;  // per modality N x d
  nd::Var items;                     // N x d

  std::size_t row(std::size_t gallery_index) const;
  static EncodedItems encode(const BoundParams& p, const data::FeatureStore& store,
                             std::vector<std::size_t> gallery);
};

/// User embedding of an unmodified history, gathered from `encoded`.
nd::Var encode_history(const BoundParams& p, const EncodedItems& encoded,
                       std::span<const std::size_t> history);

/// User embeddings (1 x d each) of the augmented histories. Items whose
/// modality slots were replaced are re-encoded in one batch; gradients flow
/// through the re-encoding into the parameters and the copied activations.
std::vector<nd::Var> realize_plans(const BoundParams& p, const EncodedItems& encoded,
                                   std::span<const std::span<const std::size_t>> histories,
                                   std::span<const AugmentationPlan> plans);

struct AugmentedUser {
  AugmentationPlan plan;
  nd::Array user_embedding;
};

/// Scores, plans and re-encodes one history against `pool_items` with frozen
/// parameters. `target` is excluded from the pool along with the history.
AugmentedUser augment_user(const EncoderParams& params, Aggregation aggregation,
                           const data::FeatureStore& store, std::span<const std::size_t> history,
                           std::size_t target, std::span<const std::size_t> pool_items,
                           Polarity polarity, const AugmentConfig& config, std::uint64_t seed);

}  // namespace demure::model
