#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "demure/errors.hpp"
#include "demure/synth/synthbench.hpp"
#include "demure/train/trainer.hpp"

using namespace demure;
using namespace demure::train;
using nd::Array;

namespace {

model::EncoderParams tiny_params(std::uint64_t seed) {
  Rng rng(seed);
  return model::EncoderParams::init({{3, 2}, 2, 4, model::Aggregation::kAttention}, rng);
}

std::vector<Array> fill_grads(const model::EncoderParams& p, Rng& rng) {
  std::vector<Array> g;
  for (const auto& n : p.named()) {
    Array a(n.array->rows(), n.array->cols());
    for (auto& x : a.data()) x = rng.normal() + (rng.bernoulli(0.5) ? 0.5 : -0.5);
    g.push_back(std::move(a));
  }
  return g;
}

synth::SynthDataset small_synth(std::uint64_t seed) {
  synth::SynthConfig c;
  c.n_users = 50;
  c.n_items = 120;
  c.n_modalities = 3;
  c.raw_dims = {6, 6, 6};
  c.n_clusters = 4;
  c.interactions_per_user = 10;
  c.seed = seed;
  return synth::generate(c);
}

TrainConfig small_config(std::uint64_t seed) {
  TrainConfig c;
  c.d = 8;
  c.batch_size = 48;
  c.learning_rate = 0.01;
  c.epochs = 2;
  c.max_history = 6;
  c.n_negatives = 24;
  c.n_pool = 32;
  c.seed = seed;
  return c;
}

std::vector<double> run_losses(const data::Dataset& data, const TrainConfig& cfg) {
  Trainer t(data, cfg);
  std::vector<double> out;
  t.run([&](const StepRecord& r) { out.push_back(r.loss.total); });
  return out;
}

bool same_params(const model::EncoderParams& a, const model::EncoderParams& b) {
  return a == b;
}

}  // namespace

TEST_CASE("adam first step moves each coordinate by lr against the gradient sign") {
  auto p = tiny_params(1);
  const auto before = p;
  Rng rng(2);
  const auto g = fill_grads(p, rng);
  auto st = OptimizerState::zeros_like(p);
  AdamSettings s;
  s.learning_rate = 0.01;
  adam_step(p, g, st, s);
  CHECK(st.step == 1);
  const auto nb = before.named();
  const auto na = p.named();
  for (std::size_t k = 0; k < na.size(); ++k)
    for (std::size_t i = 0; i < g[k].size(); ++i) {
      const double delta = na[k].array->data()[i] - nb[k].array->data()[i];
      const double expect = g[k].data()[i] > 0 ? -0.01 : 0.01;
      // m_hat / (sqrt(v_hat) + eps) = g / (|g| + eps)
      const double g_abs = std::abs(g[k].data()[i]);
      CHECK(std::abs(delta - expect) <= 0.01 * 1e-8 / g_abs * 1.01 + 1e-15);
    }
}

TEST_CASE("adam with zero gradient and no weight decay leaves parameters unchanged") {
  auto p = tiny_params(3);
  const auto before = p;
  std::vector<Array> g;
  for (const auto& n : p.named()) g.emplace_back(n.array->rows(), n.array->cols());
  auto st = OptimizerState::zeros_like(p);
  for (int i = 0; i < 3; ++i) adam_step(p, g, st, {});
  CHECK(same_params(p, before));
}

TEST_CASE("adam matches a hand-stepped scalar oracle on a quadratic") {
  // f(x) = 0.5 * a * x^2 per coordinate, gradient a * x, with weight decay.
  const double a = 3.0, lr = 0.05, b1 = 0.9, b2 = 0.99, eps = 1e-8, l2 = 0.01;
  auto p = tiny_params(4);
  auto st = OptimizerState::zeros_like(p);
  std::vector<double> x, m, v;
  for (const auto& n : p.named())
    for (double val : n.array->data()) x.push_back(val);
  m.assign(x.size(), 0.0);
  v.assign(x.size(), 0.0);
  for (int t = 1; t <= 2; ++t) {
    std::vector<Array> g;
    for (const auto& n : p.named()) {
      Array ga(n.array->rows(), n.array->cols());
      for (std::size_t i = 0; i < ga.size(); ++i) ga.data()[i] = a * n.array->data()[i];
      g.push_back(std::move(ga));
    }
    adam_step(p, g, st, {lr, b1, b2, eps, l2});
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double grad = a * x[i] + 2.0 * l2 * x[i];
      m[i] = b1 * m[i] + (1 - b1) * grad;
      v[i] = b2 * v[i] + (1 - b2) * grad * grad;
      const double mh = m[i] / (1 - std::pow(b1, t));
      const double vh = v[i] / (1 - std::pow(b2, t));
      x[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
  std::size_t i = 0;
  for (const auto& n : p.named())
    for (double val : n.array->data()) CHECK(std::abs(val - x[i++]) <= 1e-12);
}

TEST_CASE("adam rejects a non-finite gradient and names the parameter") {
  auto p = tiny_params(5);
  Rng rng(6);
  auto g = fill_grads(p, rng);
  g[2].data()[0] = std::nan("");
  auto st = OptimizerState::zeros_like(p);
  try {
    adam_step(p, g, st, {});
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find(p.named()[2].name) != std::string::npos);
  }
}

TEST_CASE("train config round-trips through JSON and rejects unknown keys") {
  TrainConfig c = small_config(9);
  c.gamma_i = 0.3;
  c.aggregation = model::Aggregation::kMean;
  const auto back = TrainConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(config_hash(back) == config_hash(c));
  c.J = 2;
  CHECK(config_hash(back) != config_hash(c));

  TrainConfig u;
  CHECK_THROWS_AS(u.update({{"no_such_key", 1}}), ConfigError);
  u.update(parse_assignment("lambda1=0.5"));
  CHECK(u.lambda1 == 0.5);
  TrainConfig bad;
  bad.gamma_i = 0.7;
  bad.gamma_m = 0.4;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.J = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("checkpoint save, load, save is byte-identical and corruption is detected") {
  const auto synth = small_synth(1);
  const auto data = synth::to_dataset(synth);
  Trainer t(data, small_config(1));
  for (int i = 0; i < 3; ++i) t.step();
  const auto ckpt = t.checkpoint();

  const auto dir = std::filesystem::temp_directory_path() / "demure_ckpt_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "a.dmck";
  save_checkpoint(path, ckpt);
  const auto loaded = load_checkpoint(path, &t.config());
  CHECK_FALSE(loaded.config_mismatch);
  CHECK(loaded.checkpoint.params == ckpt.params);
  CHECK(loaded.checkpoint.optimizer == ckpt.optimizer);
  CHECK(loaded.checkpoint.rng_state == ckpt.rng_state);
  CHECK(loaded.checkpoint.progress == ckpt.progress);
  CHECK(serialize_checkpoint(loaded.checkpoint) == serialize_checkpoint(ckpt));

  auto other = t.config();
  other.lambda2 = 0.7;
  const auto warned = load_checkpoint(path, &other);
  CHECK(warned.config_mismatch);
  CHECK_FALSE(warned.warning.empty());

  auto bytes = serialize_checkpoint(ckpt);
  SUBCASE("truncated") {
    bytes.resize(bytes.size() - 7);
    CHECK_THROWS_AS(parse_checkpoint(bytes), DataError);
  }
  SUBCASE("flipped byte") {
    bytes[bytes.size() / 2] ^= 0x10;
    CHECK_THROWS_AS(parse_checkpoint(bytes), DataError);
  }
  SUBCASE("bad magic") {
    bytes[0] = 'X';
    CHECK_THROWS_AS(parse_checkpoint(bytes), DataError);
  }
  SUBCASE("truncated file on disk") {
    std::ofstream(dir / "b.dmck", std::ios::binary)
        .write(reinterpret_cast<const char*>(bytes.data()), 40);
    CHECK_THROWS_AS(load_checkpoint(dir / "b.dmck"), DataError);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("resuming from a checkpoint reproduces the uninterrupted run") {
  const auto synth = small_synth(2);
  const auto data = synth::to_dataset(synth);
  const auto cfg = small_config(2);

  Trainer full(data, cfg);
  std::vector<double> full_losses;
  full.run([&](const StepRecord& r) { full_losses.push_back(r.loss.total); });

  Trainer first(data, cfg);
  std::vector<double> resumed;
  const std::size_t cut = first.steps_per_epoch() + 1;  // crosses an epoch boundary afterwards
  for (std::size_t i = 0; i < cut; ++i) resumed.push_back(first.step().loss.total);
  const auto bytes = serialize_checkpoint(first.checkpoint());

  Trainer second(data, cfg);
  second.restore(parse_checkpoint(bytes, &cfg).checkpoint);
  second.run([&](const StepRecord& r) { resumed.push_back(r.loss.total); });

  CHECK(resumed == full_losses);
  CHECK(second.params() == full.params());
  CHECK(second.optimizer() == full.optimizer());

  auto other = cfg;
  other.seed = 99;
  Trainer mismatched(data, other);
  CHECK_THROWS_AS(mismatched.restore(first.checkpoint()), ConfigError);
}

TEST_CASE("two runs with the same seed give identical loss curves") {
  const auto data = synth::to_dataset(small_synth(3));
  const auto cfg = small_config(3);
  const auto a = run_losses(data, cfg);
  const auto b = run_losses(data, cfg);
  CHECK(a == b);
  auto other = cfg;
  other.seed = 4;
  CHECK(run_losses(data, other) != a);
}

TEST_CASE("with both loss weights zero the trajectory ignores the augmentation knobs") {
  const auto data = synth::to_dataset(small_synth(4));
  auto base = small_config(4);
  base.lambda1 = 0.0;
  base.lambda2 = 0.0;
  auto varied = base;
  varied.gamma_i = 0.1;
  varied.gamma_m = 0.6;
  varied.J = 3;
  varied.same_modality_only = true;
  Trainer a(data, base), b(data, varied);
  a.run();
  b.run();
  CHECK(a.params() == b.params());
  CHECK(a.optimizer() == b.optimizer());
}

TEST_CASE("a full step sends a nonzero gradient to every parameter") {
  const auto data = synth::to_dataset(small_synth(5));
  Trainer t(data, small_config(5));
  const auto rec = t.step();
  CHECK(rec.loss.l_ssm_aug > 0.0);
  CHECK(rec.loss.l_cont > 0.0);
  const auto names = t.params().named();
  REQUIRE(t.last_gradients().size() == names.size());
  for (std::size_t k = 0; k < names.size(); ++k) {
    double mx = 0.0;
    for (double g : t.last_gradients()[k].data()) mx = std::max(mx, std::abs(g));
    INFO(names[k].name);
    CHECK(mx > 0.0);
  }
}

TEST_CASE("warmup delays augmentation") {
  const auto data = synth::to_dataset(small_synth(6));
  auto cfg = small_config(6);
  cfg.warmup_steps = 2;
  Trainer t(data, cfg);
  CHECK(t.step().loss.l_ssm_aug == 0.0);
  CHECK(t.step().loss.lambda1 == 0.0);
  const auto third = t.step().loss;
  CHECK(third.l_ssm_aug > 0.0);
  CHECK(third.lambda1 == cfg.lambda1);
}

TEST_CASE("fifty steps lower the total loss on a 50-user synthetic set") {
  for (std::uint64_t seed : {11, 12, 13}) {
    const auto data = synth::to_dataset(small_synth(seed));
    auto cfg = small_config(seed);
    cfg.epochs = 100;
    Trainer t(data, cfg);
    const double first = t.step().loss.total;
    double last = first;
    for (int i = 1; i < 50; ++i) last = t.step().loss.total;
    INFO("seed " << seed << " first " << first << " last " << last);
    CHECK(last < first);
  }
}

TEST_CASE("step records serialize every loss field") {
  StepRecord r;
  r.at = {1, 2, 7};
  r.loss = model::breakdown(1.0, 2.0, 3.0, 0.5, 0.25);
  const auto j = nlohmann::json::parse(to_jsonl(r));
  CHECK(j.at("step") == 7);
  CHECK(j.at("epoch") == 1);
  CHECK(j.at("l_ssm") == 1.0);
  CHECK(j.at("l_ssm_aug") == 2.0);
  CHECK(j.at("l_cont") == 3.0);
  CHECK(j.at("total") == doctest::Approx(1.0 + 0.5 * 2.0 + 0.25 * 3.0));
}
