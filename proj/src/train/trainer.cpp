#include "demure/train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <unordered_set>

#include "demure/errors.hpp"
#include "demure/model/augmentation.hpp"
#include "demure/model/localization.hpp"

namespace demure::train {

using nd::Array;
using nd::Var;

namespace {

// Independent streams derived from the run seed.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kSampleStream = 2;
constexpr std::uint64_t kEpochStream = 3;

Array take_rows(const Array& a, std::span<const std::size_t> rows) {
  Array out(rows.size(), a.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto src = a.row_span(rows[r]);
    std::copy(src.begin(), src.end(), out.row_span(r).begin());
  }
  return out;
}

std::vector<std::size_t> rows_in(const model::EncodedItems& enc, std::span<const std::size_t> items) {
  std::vector<std::size_t> rows;
  rows.reserve(items.size());
  for (std::size_t g : items) rows.push_back(enc.row(g));
  return rows;
}

}  // namespace

std::string to_jsonl(const StepRecord& r) {
  return nlohmann::json{{"epoch", r.at.epoch},
                        {"step_in_epoch", r.at.step_in_epoch},
                        {"step", r.at.global_step},
                        {"l_ssm", r.loss.l_ssm},
                        {"l_ssm_aug", r.loss.l_ssm_aug},
                        {"l_cont", r.loss.l_cont},
                        {"total", r.loss.total},
                        {"lambda1", r.loss.lambda1},
                        {"lambda2", r.loss.lambda2}}
             .dump() +
         "\n";
}

model::EncoderConfig encoder_config(const TrainConfig& config, const data::FeatureStore& store) {
  model::EncoderConfig e;
  for (const auto& m : store.modalities()) e.raw_dims.push_back(m.dim);
  e.d = config.d;
  e.d_hidden = config.hidden();
  e.aggregation = config.aggregation;
  return e;
}

Trainer::Trainer(const data::Dataset& data, TrainConfig config)
    : data_(data), config_(std::move(config)), rng_(mix_seed(config_.seed, kSampleStream)) {
  config_.validate();
  if (data_.store.num_items() < 2) throw DataError("training needs at least two items");
  split_ = data::split_users(data_.user_ids(), config_.split_seed);
  data::IngestReport report;
  examples_ = data::make_training_examples(data_.timelines, split_, config_.max_history, report);
  if (examples_.empty()) throw DataError("no training examples (every training user has fewer than 2 interactions)");
  Rng init(mix_seed(config_.seed, kInitStream));
  params_ = model::EncoderParams::init(encoder_config(config_, data_.store), init);
  opt_ = OptimizerState::zeros_like(params_);
}

std::size_t Trainer::steps_per_epoch() const {
  return (examples_.size() + config_.batch_size - 1) / config_.batch_size;
}

std::vector<std::size_t> Trainer::epoch_order(std::uint64_t epoch) const {
  std::vector<std::size_t> order(examples_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(mix_seed(mix_seed(config_.seed, kEpochStream), epoch));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
  return order;
}

StepRecord Trainer::step() {
  if (finished()) throw ContractError("training already finished");
  if (cached_epoch_ != progress_.epoch) {
    cached_order_ = epoch_order(progress_.epoch);
    cached_epoch_ = progress_.epoch;
  }
  const std::size_t begin = progress_.step_in_epoch * config_.batch_size;
  const std::size_t end = std::min(begin + config_.batch_size, examples_.size());
  std::vector<data::TrainingExample> batch;
  batch.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) batch.push_back(examples_[cached_order_[i]]);

  StepRecord rec;
  rec.at = progress_;
  rec.loss = train_step(batch);
  progress_.global_step += 1;
  progress_.step_in_epoch += 1;
  if (progress_.step_in_epoch >= steps_per_epoch()) {
    progress_.step_in_epoch = 0;
    progress_.epoch += 1;
  }
  return rec;
}

void Trainer::run(const std::function<void(const StepRecord&)>& on_step) {
  while (!finished()) {
    const auto rec = step();
    if (on_step) on_step(rec);
  }
}

model::LossBreakdown Trainer::train_step(std::span<const data::TrainingExample> batch) {
  if (batch.empty()) throw ContractError("train_step: empty batch");
  const std::size_t gallery = data_.store.num_items();
  const std::size_t B = batch.size();
  const bool augment = config_.augments() && opt_.step >= config_.warmup_steps;

  std::unordered_set<std::size_t> targets;
  for (const auto& ex : batch) targets.insert(ex.target);
  const std::size_t n_neg = std::min(config_.n_negatives, gallery - targets.size());
  if (n_neg == 0) throw DataError("no negatives available: every item is a batch target");
  const auto negatives = data::sample_candidates(gallery, targets, n_neg, rng_);
  std::vector<std::size_t> pool_items;
  if (augment) pool_items = data::sample_candidates(gallery, {}, std::min(config_.n_pool, gallery), rng_);

  std::vector<std::size_t> items(negatives.begin(), negatives.end());
  items.insert(items.end(), pool_items.begin(), pool_items.end());
  for (const auto& ex : batch) {
    items.insert(items.end(), ex.history.items.begin(), ex.history.items.end());
    items.push_back(ex.target);
  }
  std::sort(items.begin(), items.end());
  items.erase(std::unique(items.begin(), items.end()), items.end());

  nd::Tape tape;
  const auto p = model::bind(tape, params_, config_.aggregation, true);
  const auto enc = model::EncodedItems::encode(p, data_.store, items);

  std::vector<Var> users;
  std::vector<std::size_t> target_rows;
  for (const auto& ex : batch) {
    users.push_back(model::encode_history(p, enc, ex.history.items));
    target_rows.push_back(enc.row(ex.target));
  }
  const Var U = nd::concat_rows(users);
  const Var pos = nd::gather_rows(enc.items, target_rows);
  const Var neg = nd::gather_rows(enc.items, rows_in(enc, negatives));
  const Var l_ssm = model::sampled_softmax_loss(U, pos, neg);

  Var total = l_ssm;
  double l_aug_value = 0.0, l_cont_value = 0.0;
  if (augment) {
    std::vector<model::ScoreRequest> requests;
    for (const auto& ex : batch) requests.push_back({ex.history.items, ex.target});
    const auto scores = model::interest_scores(params_, config_.aggregation, data_.store, requests);

    const Array item_values = enc.items.value();
    model::CandidatePool pool;
    pool.items = pool_items;
    const auto pool_rows = rows_in(enc, pool_items);
    pool.item_embeddings = take_rows(item_values, pool_rows);
    for (const Var& a : enc.activations) pool.activations.push_back(take_rows(a.value(), pool_rows));
    pool.prepare();

    const std::size_t J = config_.J;
    std::vector<model::AugmentationPlan> plans;  // [b][j][positive, negative]
    std::vector<std::span<const std::size_t>> histories;
    plans.reserve(B * J * 2);
    for (std::size_t b = 0; b < B; ++b) {
      const auto& hist = batch[b].history.items;
      const auto hrows = rows_in(enc, hist);
      model::HistoryView view{hist, take_rows(item_values, hrows), {}};
      for (const Var& a : enc.activations) view.activations.push_back(take_rows(a.value(), hrows));
      std::vector<std::size_t> own(hist.begin(), hist.end());
      own.push_back(batch[b].target);
      const auto allowed = model::allowed_pool_rows(pool, own);
      for (std::size_t j = 0; j < J; ++j) {
        for (auto pol : {model::Polarity::kPositive, model::Polarity::kNegative}) {
          plans.push_back(model::plan_augmentation(view, scores[b], pool, allowed, pol,
                                                   config_.augment_config(), rng_.next_u64()));
          histories.push_back(hist);
        }
      }
    }
    const auto views = model::realize_plans(p, enc, histories, plans);
    std::vector<Var> positives, negatives_u;
    for (std::size_t j = 0; j < J; ++j) {
      std::vector<Var> pj, nj;
      for (std::size_t b = 0; b < B; ++b) {
        pj.push_back(views[(b * J + j) * 2]);
        nj.push_back(views[(b * J + j) * 2 + 1]);
      }
      positives.push_back(nd::concat_rows(pj));
      negatives_u.push_back(nd::concat_rows(nj));
    }
    Var l_aug = model::sampled_softmax_loss(positives[0], pos, neg);
    for (std::size_t j = 1; j < J; ++j) l_aug = nd::add(l_aug, model::sampled_softmax_loss(positives[j], pos, neg));
    if (J > 1) l_aug = nd::scale(l_aug, 1.0 / static_cast<double>(J));
    const Var l_cont = model::contrastive_loss(U, positives, negatives_u);
    total = model::total_loss(l_ssm, l_aug, l_cont, config_.lambda1, config_.lambda2);
    l_aug_value = l_aug.value()[0];
    l_cont_value = l_cont.value()[0];
  }

  const auto loss = model::breakdown(l_ssm.value()[0], l_aug_value, l_cont_value,
                                     augment ? config_.lambda1 : 0.0,
                                     augment ? config_.lambda2 : 0.0);
  if (!std::isfinite(loss.total)) throw NumericError("training loss is not finite");
  tape.backward(total);
  last_grads_.clear();
  for (const Var& v : p.all()) last_grads_.push_back(tape.gradient_of(v));
  adam_step(params_, last_grads_, opt_,
            {config_.learning_rate, config_.adam_beta1, config_.adam_beta2, config_.adam_eps,
             config_.l2_rate});
  return loss;
}

Checkpoint Trainer::checkpoint() const {
  return {config_, params_, opt_, rng_.state(), progress_};
}

void Trainer::restore(const Checkpoint& ckpt) {
  if (config_hash(ckpt.config) != config_hash(config_)) {
    throw ConfigError("checkpoint config differs from the trainer config");
  }
  ckpt.params.validate(encoder_config(config_, data_.store));
  params_ = ckpt.params;
  opt_ = ckpt.optimizer;
  rng_.set_state(ckpt.rng_state);
  progress_ = ckpt.progress;
  cached_epoch_ = ~0ull;
}

}  // namespace demure::train
