#pragma once

#include <span>

#include "demure/ndcore/ops.hpp"

namespace demure::model {

struct LossBreakdown {
  double l_ssm = 0.0;
  double l_ssm_aug = 0.0;
  double l_cont = 0.0;
  double total = 0.0;
  double lambda1 = 0.0;
  double lambda2 = 0.0;
};

/// total = l_ssm + lambda1 * l_ssm_aug + lambda2 * l_cont
LossBreakdown breakdown(double l_ssm, double l_ssm_aug, double l_cont, double lambda1,
                        double lambda2);

/// Per-row log(sum(exp(row))), shifted by the row max. Returns rows x 1.
nd::Var row_logsumexp(nd::Var z);

/// Column-wise concatenation of equally tall blocks.
nd::Var concat_cols(std::span<const nd::Var> parts);

/// Sampled softmax loss averaged over B users: row b of `users` against row b
/// of `positives` and every row of the shared `negatives` (n x d, n >= 1).
nd::Var sampled_softmax_loss(nd::Var users, nd::Var positives, nd::Var negatives);

/// Contrastive loss averaged over B users. `positives` and `negatives` hold J
/// views each (B x d); similarity is the dot product with the original user.
nd::Var contrastive_loss(nd::Var users, std::span<const nd::Var> positives,
                         std::span<const nd::Var> negatives);

/// Recorded counterpart of breakdown().
nd::Var total_loss(nd::Var l_ssm, nd::Var l_ssm_aug, nd::Var l_cont, double lambda1,
                   double lambda2);

}  // namespace demure::model
