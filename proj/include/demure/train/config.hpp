#pragma once

#include <cstdint>
#include <json.hpp>
#include <string>

#include "demure/model/augmentation.hpp"
#include "demure/model/encoder.hpp"

namespace demure::train {

/// Training hyper-parameters. Serialized as a flat JSON object whose keys are
/// the field names below; unknown keys are rejected.
struct TrainConfig {
  std::size_t d = 64;
  std::size_t d_hidden = 0;  // 0 means 2 * d
  std::size_t batch_size = 1024;
  double learning_rate = 0.001;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.99;
  double adam_eps = 1e-8;
  double l2_rate = 1e-7;
  std::size_t epochs = 20;
  std::size_t max_history = 20;
  double gamma_i = 0.4;
  double gamma_m = 0.2;
  double lambda1 = 1.0;
  double lambda2 = 0.1;
  std::size_t J = 1;
  std::size_t n_negatives = 256;
  std::size_t n_pool = 512;
  std::uint64_t seed = 0;
  std::uint64_t split_seed = 0;
  std::size_t warmup_steps = 0;
  bool same_modality_only = false;
  model::Aggregation aggregation = model::Aggregation::kAttention;

  std::size_t hidden() const { return d_hidden == 0 ? 2 * d : d_hidden; }
  // Base Model: both auxiliary weights zero, no augmentation is run.
  bool augments() const { return lambda1 > 0.0 || lambda2 > 0.0; }
  model::AugmentConfig augment_config() const { return {gamma_i, gamma_m, same_modality_only}; }

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
  // Applies the keys present in `j` on top of this config.
  void update(const nlohmann::json& j);
};

/// FNV-1a (64-bit) over the canonical JSON text (sorted keys).
std::uint64_t config_hash(const nlohmann::json& canonical);
std::uint64_t config_hash(const TrainConfig& config);

/// Parses "key=value" with JSON value syntax, falling back to a bare string.
nlohmann::json parse_assignment(const std::string& assignment);

}  // namespace demure::train
