#pragma once

#include <span>
#include <string>
#include <vector>

#include "demure/ndcore/ops.hpp"
#include "demure/rng.hpp"

namespace demure::model {

enum class Aggregation { kAttention, kMean };

Aggregation parse_aggregation(const std::string& name);
std::string to_string(Aggregation a);

struct EncoderConfig {
  std::vector<std::size_t> raw_dims;  // one entry per modality
  std::size_t d = 64;                 // shared modality / item / user dimension
  std::size_t d_hidden = 128;         // FFN hidden width
  Aggregation aggregation = Aggregation::kAttention;

  std::size_t num_modalities() const { return raw_dims.size(); }
};

/// Weights of one single-head attention block; all d x d.
struct AttentionWeights {
  nd::Array w_f, w_g, w_h;
};

/// All trainable weights of the two-level user encoder.
struct EncoderParams {
  std::vector<nd::Array> input_proj;  // raw_dim_m x d
  AttentionWeights modality;
  AttentionWeights item;
  nd::Array ffn_w1;  // d x d_hidden
  nd::Array ffn_b1;  // 1 x d_hidden
  nd::Array ffn_w2;  // d_hidden x d
  nd::Array ffn_b2;  // 1 x d

  /// Glorot-uniform weights, zero biases.
  static EncoderParams init(const EncoderConfig& config, Rng& rng);

  struct Named {
    std::string name;
    nd::Array* array;
  };
  struct ConstNamed {
    std::string name;
    const nd::Array* array;
  };
  // Stable order; used by the optimizer and checkpoints.
  std::vector<Named> named();
  std::vector<ConstNamed> named() const;

  std::size_t d() const { return modality.w_f.rows(); }
  void validate(const EncoderConfig& config) const;

  friend bool operator==(const EncoderParams& a, const EncoderParams& b);
};

/// Parameters recorded on one tape, either as trainable leaves or constants.
struct BoundParams {
  std::vector<nd::Var> input_proj;
  nd::Var mod_f, mod_g, mod_h;
  nd::Var item_f, item_g, item_h;
  nd::Var ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  Aggregation aggregation = Aggregation::kAttention;

  std::vector<nd::Var> all() const;
};

BoundParams bind(nd::Tape& tape, const EncoderParams& params, Aggregation aggregation,
                 bool trainable);

/// Modality-wise encoder applied to N items at once. Per-modality inputs are
/// N x d activation matrices (row n belongs to item n).
struct ModalityEncodingVars {
  std::vector<nd::Var> activations;  // per modality: N x d
  std::vector<nd::Var> attention;    // per modality m: N x M, row n = beta_{m,.} of item n
  nd::Var modality_weights;          // N x M, beta_m per item
  std::vector<nd::Var> enhanced;     // per modality: N x d
  nd::Var items;                     // N x d aggregated item embeddings
};

// Input projection of raw per-modality features (N x raw_dim_m each).
std::vector<nd::Var> project(const BoundParams& p, std::span<const nd::Var> raw);

ModalityEncodingVars encode_modalities(const BoundParams& p, std::span<const nd::Var> activations);

/// Item-wise encoder and FFN for one sequence of L item embeddings (L x d).
struct UserEncodingVars {
  nd::Var attention;     // L x L
  nd::Var item_weights;  // 1 x L
  nd::Var pooled;        // 1 x d
  nd::Var user;          // 1 x d
};

UserEncodingVars encode_user(const BoundParams& p, nd::Var items);

/// Matching score psi(u, i): inner product of user and item embeddings.
nd::Var score(nd::Var user, nd::Var item);

// ---------------------------------------------------------------------------
// Value-level views used by tests, evaluation and analysis.

struct ItemEncoding {
  nd::Array modality_activations;  // M x d
  nd::Array attention;             // M x M
  nd::Array enhanced;              // M x d
  nd::Array modality_weights;      // 1 x M
  nd::Array item_embedding;        // 1 x d
};

struct UserEncoding {
  nd::Array attention;     // L x L
  nd::Array item_weights;  // 1 x L
  nd::Array pooled;        // 1 x d
  nd::Array user_embedding;
};

/// Encodes one item from its raw features (one 1 x raw_dim_m row per modality).
ItemEncoding encode_item(const EncoderParams& params, std::span<const nd::Array> raw,
                         Aggregation aggregation = Aggregation::kAttention);

/// Encodes one user from L item embeddings (L x d).
UserEncoding encode_user(const EncoderParams& params, const nd::Array& items,
                         Aggregation aggregation = Aggregation::kAttention);

double score(const nd::Array& user, const nd::Array& item);

}  // namespace demure::model
