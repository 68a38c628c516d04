#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "demure/data/dataset.hpp"
#include "demure/model/objectives.hpp"
#include "demure/train/checkpoint.hpp"

namespace demure::train {

struct StepRecord {
  TrainProgress at;  // position of the batch that was just trained
  model::LossBreakdown loss;
};

/// One JSON line with the step position and every LossBreakdown field.
std::string to_jsonl(const StepRecord& record);

model::EncoderConfig encoder_config(const TrainConfig& config, const data::FeatureStore& store);

/// Runs the training schedule: per epoch a seeded permutation of the
/// sliding-window examples, cut into batches of batch_size.
class Trainer {
 public:
  Trainer(const data::Dataset& data, TrainConfig config);

  const TrainConfig& config() const { return config_; }
  const data::DatasetSplit& split() const { return split_; }
  const std::vector<data::TrainingExample>& examples() const { return examples_; }
  std::size_t steps_per_epoch() const;
  bool finished() const { return progress_.epoch >= config_.epochs; }
  const TrainProgress& progress() const { return progress_; }
  const model::EncoderParams& params() const { return params_; }
  const OptimizerState& optimizer() const { return opt_; }

  /// Trains the next scheduled batch.
  StepRecord step();
  /// Runs until finished(); `on_step` sees every record.
  void run(const std::function<void(const StepRecord&)>& on_step = {});

  /// One optimizer step on `batch`: matching loss, interest scores with the
  /// current parameters, augmented views, combined loss, Adam update.
  model::LossBreakdown train_step(std::span<const data::TrainingExample> batch);
  /// Gradients of the most recent train_step, aligned with params().named().
  const std::vector<nd::Array>& last_gradients() const { return last_grads_; }

  Checkpoint checkpoint() const;
  void restore(const Checkpoint& ckpt);

 private:
  std::vector<std::size_t> epoch_order(std::uint64_t epoch) const;

  const data::Dataset& data_;
  TrainConfig config_;
  data::DatasetSplit split_;
  std::vector<data::TrainingExample> examples_;
  model::EncoderParams params_;
  OptimizerState opt_;
  Rng rng_;
  TrainProgress progress_;
  std::vector<nd::Array> last_grads_;
  std::uint64_t cached_epoch_ = ~0ull;
  std::vector<std::size_t> cached_order_;
};

}  // namespace demure::train
