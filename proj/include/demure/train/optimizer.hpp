#pragma once

#include <cstdint>
#include <vector>

#include "demure/model/encoder.hpp"

namespace demure::train {

struct AdamSettings {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
  double l2_rate = 0.0;
};

/// First and second moments aligned with EncoderParams::named().
struct OptimizerState {
  std::vector<nd::Array> m;
  std::vector<nd::Array> v;
  std::uint64_t step = 0;

  static OptimizerState zeros_like(const model::EncoderParams& params);
  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

/// One bias-corrected Adam update. The L2 term 2 * l2_rate * theta is added to
/// each gradient before the moments are updated. Throws NumericError naming
/// the parameter if a gradient is not finite.
void adam_step(model::EncoderParams& params, const std::vector<nd::Array>& grads,
               OptimizerState& state, const AdamSettings& settings);

}  // namespace demure::train
