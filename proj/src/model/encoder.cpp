#include "demure/model/encoder.hpp"

#include <cmath>

#include "demure/errors.hpp"
#include "demure/ndcore/linalg.hpp"

namespace demure::model {

using nd::Array;
using nd::Var;

Aggregation parse_aggregation(const std::string& name) {
  if (name == "attention") return Aggregation::kAttention;
  if (name == "mean") return Aggregation::kMean;
  throw ConfigError("unknown aggregation '" + name + "' (expected attention or mean)");
}

std::string to_string(Aggregation a) { return a == Aggregation::kMean ? "mean" : "attention"; }

namespace {

Array glorot(std::size_t rows, std::size_t cols, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Array out(rows, cols);
  for (auto& v : out.data()) v = (2.0 * rng.uniform() - 1.0) * a;
  return out;
}

AttentionWeights init_attention(std::size_t d, Rng& rng) {
  AttentionWeights w;
  w.w_f = glorot(d, d, rng);
  w.w_g = glorot(d, d, rng);
  w.w_h = glorot(d, d, rng);
  return w;
}

void expect_shape(const Array& a, std::size_t rows, std::size_t cols, const std::string& name) {
  if (a.rank() != 2 || a.rows() != rows || a.cols() != cols) {
    throw ContractError(name + ": expected shape " + std::to_string(rows) + "x" +
                        std::to_string(cols) + ", got " + a.shape_string());
  }
}

Var constant_like(nd::Tape& tape, std::size_t rows, std::size_t cols, double v) {
  return tape.constant(Array(rows, cols, v));
}

// One-hot column selector (n x 1).
Var selector(nd::Tape& tape, std::size_t n, std::size_t k) {
  Array e(n, 1, 0.0);
  e(k, 0) = 1.0;
  return tape.constant(std::move(e));
}

}  // namespace

EncoderParams EncoderParams::init(const EncoderConfig& config, Rng& rng) {
  if (config.raw_dims.empty()) throw ConfigError("encoder needs at least one modality");
  if (config.d == 0 || config.d_hidden == 0) throw ConfigError("encoder dimensions must be positive");
  EncoderParams p;
  for (auto raw : config.raw_dims) {
    if (raw == 0) throw ConfigError("modality raw dimension must be positive");
    p.input_proj.push_back(glorot(raw, config.d, rng));
  }
  p.modality = init_attention(config.d, rng);
  p.item = init_attention(config.d, rng);
  p.ffn_w1 = glorot(config.d, config.d_hidden, rng);
  p.ffn_b1 = Array(1, config.d_hidden, 0.0);
  p.ffn_w2 = glorot(config.d_hidden, config.d, rng);
  p.ffn_b2 = Array(1, config.d, 0.0);
  return p;
}

std::vector<EncoderParams::Named> EncoderParams::named() {
  std::vector<Named> out;
  for (std::size_t m = 0; m < input_proj.size(); ++m)
    out.push_back({"input_proj." + std::to_string(m), &input_proj[m]});
  out.push_back({"mod_attn.w_f", &modality.w_f});
  out.push_back({"mod_attn.w_g", &modality.w_g});
  out.push_back({"mod_attn.w_h", &modality.w_h});
  out.push_back({"item_attn.w_f", &item.w_f});
  out.push_back({"item_attn.w_g", &item.w_g});
  out.push_back({"item_attn.w_h", &item.w_h});
  out.push_back({"ffn.w1", &ffn_w1});
  out.push_back({"ffn.b1", &ffn_b1});
  out.push_back({"ffn.w2", &ffn_w2});
  out.push_back({"ffn.b2", &ffn_b2});
  return out;
}

std::vector<EncoderParams::ConstNamed> EncoderParams::named() const {
  std::vector<ConstNamed> out;
  for (auto& n : const_cast<EncoderParams*>(this)->named()) out.push_back({n.name, n.array});
  return out;
}

void EncoderParams::validate(const EncoderConfig& config) const {
  const std::size_t d = config.d;
  if (input_proj.size() != config.raw_dims.size()) {
    throw ContractError("encoder has " + std::to_string(input_proj.size()) +
                        " input projections, config has " +
                        std::to_string(config.raw_dims.size()) + " modalities");
  }
  for (std::size_t m = 0; m < input_proj.size(); ++m)
    expect_shape(input_proj[m], config.raw_dims[m], d, "input_proj." + std::to_string(m));
  for (const auto* w : {&modality, &item}) {
    expect_shape(w->w_f, d, d, "attention w_f");
    expect_shape(w->w_g, d, d, "attention w_g");
    expect_shape(w->w_h, d, d, "attention w_h");
  }
  expect_shape(ffn_w1, d, config.d_hidden, "ffn.w1");
  expect_shape(ffn_b1, 1, config.d_hidden, "ffn.b1");
  expect_shape(ffn_w2, config.d_hidden, d, "ffn.w2");
  expect_shape(ffn_b2, 1, d, "ffn.b2");
  for (const auto& n : named()) {
    if (!n.array->all_finite()) throw NumericError("parameter " + n.name + " is not finite");
  }
}

bool operator==(const EncoderParams& a, const EncoderParams& b) {
  const auto na = a.named();
  const auto nb = b.named();
  if (na.size() != nb.size()) return false;
  for (std::size_t i = 0; i < na.size(); ++i)
    if (!(*na[i].array == *nb[i].array)) return false;
  return true;
}

std::vector<Var> BoundParams::all() const {
  std::vector<Var> out(input_proj);
  for (Var v : {mod_f, mod_g, mod_h, item_f, item_g, item_h, ffn_w1, ffn_b1, ffn_w2, ffn_b2})
    out.push_back(v);
  return out;
}

BoundParams bind(nd::Tape& tape, const EncoderParams& params, Aggregation aggregation,
                 bool trainable) {
  auto put = [&](const Array& a, const std::string& name) {
    return trainable ? tape.leaf(a, name) : tape.constant(a, name);
  };
  BoundParams b;
  b.aggregation = aggregation;
  for (std::size_t m = 0; m < params.input_proj.size(); ++m)
    b.input_proj.push_back(put(params.input_proj[m], "input_proj." + std::to_string(m)));
  b.mod_f = put(params.modality.w_f, "mod_attn.w_f");
  b.mod_g = put(params.modality.w_g, "mod_attn.w_g");
  b.mod_h = put(params.modality.w_h, "mod_attn.w_h");
  b.item_f = put(params.item.w_f, "item_attn.w_f");
  b.item_g = put(params.item.w_g, "item_attn.w_g");
  b.item_h = put(params.item.w_h, "item_attn.w_h");
  b.ffn_w1 = put(params.ffn_w1, "ffn.w1");
  b.ffn_b1 = put(params.ffn_b1, "ffn.b1");
  b.ffn_w2 = put(params.ffn_w2, "ffn.w2");
  b.ffn_b2 = put(params.ffn_b2, "ffn.b2");
  return b;
}

std::vector<Var> project(const BoundParams& p, std::span<const Var> raw) {
  if (raw.size() != p.input_proj.size()) {
    throw ContractError("project: got " + std::to_string(raw.size()) + " modalities, expected " +
                        std::to_string(p.input_proj.size()));
  }
  std::vector<Var> out;
  out.reserve(raw.size());
  for (std::size_t m = 0; m < raw.size(); ++m) {
    if (raw[m].value().cols() != p.input_proj[m].value().rows()) {
      throw ContractError("project: modality " + std::to_string(m) + " has raw dim " +
                          std::to_string(raw[m].value().cols()) + ", expected " +
                          std::to_string(p.input_proj[m].value().rows()));
    }
    out.push_back(nd::matmul(raw[m], p.input_proj[m]));
  }
  return out;
}

// The per-item M x M score matrices are held as M^2 columns over the N items,
// so the node count does not grow with N.
ModalityEncodingVars encode_modalities(const BoundParams& p, std::span<const Var> activations) {
  const std::size_t M = activations.size();
  if (M == 0) throw ContractError("encode_modalities: no modalities");
  const std::size_t N = activations[0].value().rows();
  const std::size_t d = p.mod_f.value().rows();
  for (const Var& a : activations) {
    if (a.value().rows() != N || a.value().cols() != d) {
      throw ContractError("encode_modalities: activation shape " + a.value().shape_string() +
                          ", expected " + std::to_string(N) + "x" + std::to_string(d));
    }
  }
  nd::Tape& tape = *activations[0].tape;

  ModalityEncodingVars out;
  out.activations.assign(activations.begin(), activations.end());
  std::vector<Var> F, G, H;
  for (const Var& a : activations) {
    F.push_back(nd::matmul(a, p.mod_f));
    G.push_back(nd::matmul(a, p.mod_g));
    H.push_back(nd::matmul(a, p.mod_h));
  }
  const Var ones_d = constant_like(tape, d, 1, 1.0);
  std::vector<Var> score_rows;  // row m*M+n holds s_{m,n} for every item
  score_rows.reserve(M * M);
  for (std::size_t m = 0; m < M; ++m)
    for (std::size_t n = 0; n < M; ++n)
      score_rows.push_back(nd::transpose(nd::matmul(nd::mul(F[m], G[n]), ones_d)));
  const Var scores = nd::concat_rows(score_rows);  // M^2 x N

  std::vector<Var> columns;
  for (std::size_t n = 0; n < M; ++n) columns.push_back(selector(tape, M, n));

  for (std::size_t m = 0; m < M; ++m) {
    std::vector<std::size_t> rows(M);
    for (std::size_t n = 0; n < M; ++n) rows[n] = m * M + n;
    const Var beta = nd::row_softmax(nd::transpose(nd::gather_rows(scores, rows)));  // N x M
    out.attention.push_back(beta);
    Var enhanced = nd::mul(H[0], nd::matmul(beta, columns[0]));
    for (std::size_t n = 1; n < M; ++n)
      enhanced = nd::add(enhanced, nd::mul(H[n], nd::matmul(beta, columns[n])));
    out.enhanced.push_back(enhanced);
  }

  if (p.aggregation == Aggregation::kMean) {
    out.modality_weights = constant_like(tape, N, M, 1.0 / static_cast<double>(M));
  } else {
    // Softmax over all M^2 entries (one max shift per item), then summed per m.
    Array group(M * M, M, 0.0);
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t n = 0; n < M; ++n) group(m * M + n, m) = 1.0;
    const Var shares = nd::row_softmax(nd::transpose(scores));
    out.modality_weights = nd::matmul(shares, tape.constant(std::move(group)));
  }

  Var items = nd::mul(out.enhanced[0], nd::matmul(out.modality_weights, columns[0]));
  for (std::size_t m = 1; m < M; ++m)
    items = nd::add(items, nd::mul(out.enhanced[m], nd::matmul(out.modality_weights, columns[m])));
  out.items = items;
  return out;
}

UserEncodingVars encode_user(const BoundParams& p, Var items) {
  const std::size_t L = items.value().rows();
  const std::size_t d = p.item_f.value().rows();
  if (L == 0) throw ContractError("encode_user: empty sequence");
  if (items.value().cols() != d) {
    throw ContractError("encode_user: item embeddings have dim " +
                        std::to_string(items.value().cols()) + ", expected " + std::to_string(d));
  }
  nd::Tape& tape = *items.tape;
  const Var F = nd::matmul(items, p.item_f);
  const Var G = nd::matmul(items, p.item_g);
  const Var H = nd::matmul(items, p.item_h);
  const Var S = nd::matmul(F, nd::transpose(G));

  UserEncodingVars out;
  out.attention = nd::row_softmax(S);
  const Var enhanced = nd::matmul(out.attention, H);
  if (p.aggregation == Aggregation::kMean) {
    out.item_weights = constant_like(tape, 1, L, 1.0 / static_cast<double>(L));
  } else {
    const Var shares = nd::reshape(nd::row_softmax(nd::reshape(S, 1, L * L)), L, L);
    out.item_weights = nd::transpose(nd::matmul(shares, constant_like(tape, L, 1, 1.0)));
  }
  out.pooled = nd::matmul(out.item_weights, enhanced);
  const Var hidden = nd::relu(nd::add(nd::matmul(out.pooled, p.ffn_w1), p.ffn_b1));
  out.user = nd::add(nd::matmul(hidden, p.ffn_w2), p.ffn_b2);
  return out;
}

Var score(Var user, Var item) {
  if (user.value().size() != item.value().size()) {
    throw ContractError("score: user dim " + std::to_string(user.value().size()) +
                        " does not match item dim " + std::to_string(item.value().size()));
  }
  return nd::dot(user, item);
}

ItemEncoding encode_item(const EncoderParams& params, std::span<const Array> raw,
                         Aggregation aggregation) {
  if (raw.size() != params.input_proj.size()) {
    throw ContractError("encode_item: got " + std::to_string(raw.size()) +
                        " modalities, expected " + std::to_string(params.input_proj.size()));
  }
  nd::Tape tape;
  const BoundParams p = bind(tape, params, aggregation, false);
  std::vector<Var> inputs;
  for (std::size_t m = 0; m < raw.size(); ++m) {
    if (raw[m].size() != params.input_proj[m].rows()) {
      throw ContractError("encode_item: modality " + std::to_string(m) + " has raw dim " +
                          std::to_string(raw[m].size()) + ", expected " +
                          std::to_string(params.input_proj[m].rows()));
    }
    inputs.push_back(tape.constant(Array({1, raw[m].size()}, raw[m].values())));
  }
  const auto enc = encode_modalities(p, project(p, inputs));
  const std::size_t M = raw.size();
  const std::size_t d = params.d();
  ItemEncoding out;
  out.modality_activations = Array(M, d);
  out.enhanced = Array(M, d);
  out.attention = Array(M, M);
  for (std::size_t m = 0; m < M; ++m) {
    for (std::size_t k = 0; k < d; ++k) {
      out.modality_activations(m, k) = enc.activations[m].value()(0, k);
      out.enhanced(m, k) = enc.enhanced[m].value()(0, k);
    }
    for (std::size_t n = 0; n < M; ++n) out.attention(m, n) = enc.attention[m].value()(0, n);
  }
  out.modality_weights = enc.modality_weights.value();
  out.item_embedding = enc.items.value();
  return out;
}

UserEncoding encode_user(const EncoderParams& params, const Array& items, Aggregation aggregation) {
  nd::Tape tape;
  const BoundParams p = bind(tape, params, aggregation, false);
  const auto enc = encode_user(p, tape.constant(items));
  return {enc.attention.value(), enc.item_weights.value(), enc.pooled.value(), enc.user.value()};
}

double score(const Array& user, const Array& item) {
  if (user.size() != item.size()) {
    throw ContractError("score: user dim " + std::to_string(user.size()) +
                        " does not match item dim " + std::to_string(item.size()));
  }
  return nd::dot(user.data(), item.data());
}

}  // namespace demure::model
