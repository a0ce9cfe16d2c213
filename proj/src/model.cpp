#include "coco/model.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "coco/editing.hpp"
#include "coco/errors.hpp"
#include "coco/hash.hpp"
#include "coco/rng.hpp"

namespace coco {

namespace {

constexpr double kLayerNormEps = 1e-5;

Matrix layer_norm(const Matrix& x, const Matrix& gamma, const Matrix& beta) {
  Matrix out(x.rows, x.cols);
  const double n = static_cast<double>(x.cols);
  for (std::size_t r = 0; r < x.rows; ++r) {
    auto in = x.row(r);
    double mean = 0.0;
    for (double v : in) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : in) var += (v - mean) * (v - mean);
    var /= n;
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    auto dst = out.row(r);
    for (std::size_t c = 0; c < x.cols; ++c) {
      dst[c] = (in[c] - mean) * inv * gamma.data[c] + beta.data[c];
    }
  }
  return out;
}

double gelu(double x) {
  constexpr double kC = 0.7978845608028654;  // √(2/π)
  return 0.5 * x * (1.0 + std::tanh(kC * (x + 0.044715 * x * x * x)));
}

void add_row_bias(Matrix& m, const Matrix& bias) {
  for (std::size_t r = 0; r < m.rows; ++r) {
    auto row = m.row(r);
    for (std::size_t c = 0; c < m.cols; ++c) row[c] += bias.data[c];
  }
}

void add_in_place(Matrix& acc, const Matrix& other) {
  for (std::size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += other.data[i];
}

void expect_shape(const Matrix& m, std::size_t rows, std::size_t cols, const std::string& name) {
  if (m.rows != rows || m.cols != cols || m.data.size() != rows * cols) {
    throw ShapeError(name + ": expected " + std::to_string(rows) + "x" + std::to_string(cols) +
                     ", got " + std::to_string(m.rows) + "x" + std::to_string(m.cols));
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (n_layers < 1 || n_heads < 1 || d_model < 1 || d_head < 1 || d_ff < 1 || vocab_size < 1 ||
      max_seq < 1) {
    throw ConfigError("model config: all counts must be >= 1");
  }
  if (d_model != n_heads * d_head) {
    throw ConfigError("model config: d_model (" + std::to_string(d_model) +
                      ") must equal n_heads × d_head (" + std::to_string(n_heads) + " × " +
                      std::to_string(d_head) + ")");
  }
}

ModelConfig ModelConfig::make(std::size_t layers, std::size_t heads, std::size_t d_model,
                              std::size_t vocab, std::size_t max_seq, std::uint64_t seed) {
  if (heads == 0 || d_model % heads != 0) {
    throw ConfigError("d_model must be divisible by the number of heads");
  }
  ModelConfig c;
  c.n_layers = layers;
  c.n_heads = heads;
  c.d_model = d_model;
  c.d_head = d_model / heads;
  c.d_ff = 4 * d_model;
  c.vocab_size = vocab;
  c.max_seq = max_seq;
  c.seed = seed;
  c.validate();
  return c;
}

const char* to_string(MatrixKind kind) {
  switch (kind) {
    case MatrixKind::Q: return "Q";
    case MatrixKind::K: return "K";
    case MatrixKind::V: return "V";
  }
  return "?";
}

MatrixKind parse_matrix_kind(const std::string& s) {
  if (s == "Q") return MatrixKind::Q;
  if (s == "K") return MatrixKind::K;
  if (s == "V") return MatrixKind::V;
  throw FormatError("unknown matrix kind '" + s + "' (expected Q, K or V)");
}

std::string NeuronId::str() const {
  return "L" + std::to_string(layer) + "." + to_string(kind) + "." + std::to_string(col);
}

const Matrix& LayerWeights::projection(MatrixKind kind) const {
  switch (kind) {
    case MatrixKind::Q: return wq;
    case MatrixKind::K: return wk;
    case MatrixKind::V: return wv;
  }
  throw AddressError("bad matrix kind");
}

Matrix& LayerWeights::projection(MatrixKind kind) {
  return const_cast<Matrix&>(std::as_const(*this).projection(kind));
}

WeightStore WeightStore::zeros(const ModelConfig& config) {
  config.validate();
  const std::size_t d = config.d_model;
  WeightStore w;
  w.config = config;
  w.tok_embed = Matrix(config.vocab_size, d);
  w.pos_embed = Matrix(config.max_seq, d);
  w.layers.resize(config.n_layers);
  for (auto& l : w.layers) {
    l.ln1_gamma = Matrix(1, d, 1.0);
    l.ln1_beta = Matrix(1, d);
    l.wq = Matrix(d, d);
    l.wk = Matrix(d, d);
    l.wv = Matrix(d, d);
    l.wo = Matrix(d, d);
    l.ln2_gamma = Matrix(1, d, 1.0);
    l.ln2_beta = Matrix(1, d);
    l.w1 = Matrix(d, config.d_ff);
    l.b1 = Matrix(1, config.d_ff);
    l.w2 = Matrix(config.d_ff, d);
    l.b2 = Matrix(1, d);
  }
  w.lnf_gamma = Matrix(1, d, 1.0);
  w.lnf_beta = Matrix(1, d);
  w.unembed = Matrix(d, config.vocab_size);
  return w;
}

std::vector<std::pair<std::string, const Matrix*>> WeightStore::named_tensors() const {
  std::vector<std::pair<std::string, const Matrix*>> out;
  out.emplace_back("tok_embed", &tok_embed);
  out.emplace_back("pos_embed", &pos_embed);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string p = "layers." + std::to_string(i) + ".";
    const auto& l = layers[i];
    out.emplace_back(p + "ln1.gamma", &l.ln1_gamma);
    out.emplace_back(p + "ln1.beta", &l.ln1_beta);
    out.emplace_back(p + "attn.wq", &l.wq);
    out.emplace_back(p + "attn.wk", &l.wk);
    out.emplace_back(p + "attn.wv", &l.wv);
    out.emplace_back(p + "attn.wo", &l.wo);
    out.emplace_back(p + "ln2.gamma", &l.ln2_gamma);
    out.emplace_back(p + "ln2.beta", &l.ln2_beta);
    out.emplace_back(p + "ffn.w1", &l.w1);
    out.emplace_back(p + "ffn.b1", &l.b1);
    out.emplace_back(p + "ffn.w2", &l.w2);
    out.emplace_back(p + "ffn.b2", &l.b2);
  }
  out.emplace_back("lnf.gamma", &lnf_gamma);
  out.emplace_back("lnf.beta", &lnf_beta);
  out.emplace_back("unembed", &unembed);
  return out;
}

std::vector<std::pair<std::string, Matrix*>> WeightStore::named_tensors() {
  std::vector<std::pair<std::string, Matrix*>> out;
  for (auto& [name, m] : std::as_const(*this).named_tensors()) {
    out.emplace_back(name, const_cast<Matrix*>(m));
  }
  return out;
}

void WeightStore::validate_shapes() const {
  config.validate();
  const std::size_t d = config.d_model;
  if (layers.size() != config.n_layers) {
    throw ShapeError("weight store has " + std::to_string(layers.size()) + " layers, config says " +
                     std::to_string(config.n_layers));
  }
  expect_shape(tok_embed, config.vocab_size, d, "tok_embed");
  expect_shape(pos_embed, config.max_seq, d, "pos_embed");
  for (const auto& l : layers) {
    expect_shape(l.ln1_gamma, 1, d, "ln1.gamma");
    expect_shape(l.ln1_beta, 1, d, "ln1.beta");
    expect_shape(l.wq, d, d, "attn.wq");
    expect_shape(l.wk, d, d, "attn.wk");
    expect_shape(l.wv, d, d, "attn.wv");
    expect_shape(l.wo, d, d, "attn.wo");
    expect_shape(l.ln2_gamma, 1, d, "ln2.gamma");
    expect_shape(l.ln2_beta, 1, d, "ln2.beta");
    expect_shape(l.w1, d, config.d_ff, "ffn.w1");
    expect_shape(l.b1, 1, config.d_ff, "ffn.b1");
    expect_shape(l.w2, config.d_ff, d, "ffn.w2");
    expect_shape(l.b2, 1, d, "ffn.b2");
  }
  expect_shape(lnf_gamma, 1, d, "lnf.gamma");
  expect_shape(lnf_beta, 1, d, "lnf.beta");
  expect_shape(unembed, d, config.vocab_size, "unembed");
}

std::vector<NeuronId> WeightStore::all_neurons() const {
  std::vector<NeuronId> out;
  out.reserve(neuron_count());
  for (std::uint32_t l = 0; l < config.n_layers; ++l) {
    for (auto kind : {MatrixKind::Q, MatrixKind::K, MatrixKind::V}) {
      for (std::uint32_t c = 0; c < config.d_model; ++c) out.push_back({l, kind, c});
    }
  }
  return out;
}

void WeightStore::check_neuron(const NeuronId& n) const {
  if (n.layer >= config.n_layers || n.col >= config.d_model ||
      static_cast<int>(n.kind) > static_cast<int>(MatrixKind::V)) {
    throw AddressError("neuron " + n.str() + " is outside the model (" +
                       std::to_string(config.n_layers) + " layers, d_model " +
                       std::to_string(config.d_model) + ")");
  }
}

std::string fingerprint(const WeightStore& weights) {
  Fnv1a h;
  const auto& c = weights.config;
  for (std::size_t v : {c.n_layers, c.n_heads, c.d_model, c.d_head, c.d_ff, c.vocab_size, c.max_seq}) {
    h.update_u64(v);
  }
  for (const auto& [name, m] : weights.named_tensors()) {
    h.update(name);
    h.update_u64(m->rows);
    h.update_u64(m->cols);
    h.update(std::span<const double>(m->data));
  }
  return h.hex();
}

LayerOutput forward_layer(const LayerWeights& lw, const ModelConfig& config, const Matrix& h_in) {
  const std::size_t d = config.d_model;
  const std::size_t dh = config.d_head;
  if (h_in.cols != d || h_in.rows == 0) {
    throw ShapeError("forward_layer: expected seq×" + std::to_string(d) + " input, got " +
                     std::to_string(h_in.rows) + "x" + std::to_string(h_in.cols));
  }
  const std::size_t seq = h_in.rows;

  const Matrix a = layer_norm(h_in, lw.ln1_gamma, lw.ln1_beta);
  const Matrix q = matmul(a, lw.wq);
  const Matrix k = matmul(a, lw.wk);
  const Matrix v = matmul(a, lw.wv);

  LayerOutput out;
  out.attention.reserve(config.n_heads);
  Matrix concat(seq, d);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t head = 0; head < config.n_heads; ++head) {
    const std::size_t off = head * dh;
    Matrix scores(seq, seq);
    for (std::size_t i = 0; i < seq; ++i) {
      for (std::size_t j = 0; j < seq; ++j) {
        if (j > i) {
          scores(i, j) = -std::numeric_limits<double>::infinity();
          continue;
        }
        double acc = 0.0;
        for (std::size_t p = 0; p < dh; ++p) acc += q(i, off + p) * k(j, off + p);
        scores(i, j) = acc * scale;
      }
    }
    Matrix attn = softmax_rows(scores);
    for (std::size_t i = 0; i < seq; ++i) {
      for (std::size_t p = 0; p < dh; ++p) {
        double acc = 0.0;
        for (std::size_t j = 0; j <= i; ++j) acc += attn(i, j) * v(j, off + p);
        concat(i, off + p) = acc;
      }
    }
    out.attention.push_back(std::move(attn));
  }

  Matrix x = h_in;
  add_in_place(x, matmul(concat, lw.wo));

  const Matrix b = layer_norm(x, lw.ln2_gamma, lw.ln2_beta);
  Matrix hidden = matmul(b, lw.w1);
  add_row_bias(hidden, lw.b1);
  for (double& value : hidden.data) value = gelu(value);
  Matrix ffn = matmul(hidden, lw.w2);
  add_row_bias(ffn, lw.b2);
  add_in_place(x, ffn);

  out.h_out = std::move(x);
  return out;
}

LayerOutput forward_layer(const WeightStore& weights, std::size_t layer, const Matrix& h_in) {
  if (layer >= weights.layers.size()) {
    throw AddressError("layer " + std::to_string(layer) + " out of range");
  }
  return forward_layer(weights.layers[layer], weights.config, h_in);
}

void check_tokens(const ModelConfig& config, const TokenSeq& tokens) {
  if (tokens.empty()) throw InputError("empty token sequence");
  if (tokens.size() > config.max_seq) {
    throw InputError("sequence length " + std::to_string(tokens.size()) + " exceeds max_seq " +
                     std::to_string(config.max_seq));
  }
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] >= config.vocab_size) {
      throw InputError("token " + std::to_string(tokens[i]) + " at position " + std::to_string(i) +
                       " is outside the vocabulary (" + std::to_string(config.vocab_size) + ")");
    }
  }
}

Matrix embed(const WeightStore& weights, const TokenSeq& tokens) {
  check_tokens(weights.config, tokens);
  const std::size_t d = weights.config.d_model;
  Matrix h(tokens.size(), d);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    auto te = weights.tok_embed.row(tokens[i]);
    auto pe = weights.pos_embed.row(i);
    auto dst = h.row(i);
    for (std::size_t c = 0; c < d; ++c) dst[c] = te[c] + pe[c];
  }
  return h;
}

std::vector<double> final_logits(const WeightStore& weights, std::span<const double> h_last) {
  Matrix row(1, h_last.size(), std::vector<double>(h_last.begin(), h_last.end()));
  const Matrix normed = layer_norm(row, weights.lnf_gamma, weights.lnf_beta);
  return matmul(normed, weights.unembed).data;
}

ForwardTrace forward(const WeightStore& weights, const TokenSeq& tokens, CaptureFlags capture) {
  Matrix h = embed(weights, tokens);
  ForwardTrace trace;
  if (capture.hidden) trace.hidden.push_back(h);
  for (std::size_t l = 0; l < weights.layers.size(); ++l) {
    LayerOutput out = forward_layer(weights.layers[l], weights.config, h);
    h = std::move(out.h_out);
    if (capture.hidden) trace.hidden.push_back(h);
    if (capture.attention) trace.attention.push_back(std::move(out.attention));
  }
  if (capture.all_logits) {
    const Matrix normed = layer_norm(h, weights.lnf_gamma, weights.lnf_beta);
    Matrix logits = matmul(normed, weights.unembed);
    auto last = logits.row(logits.rows - 1);
    trace.logits.assign(last.begin(), last.end());
    trace.all_logits = std::move(logits);
  } else {
    trace.logits = final_logits(weights, h.row(h.rows - 1));
  }
  return trace;
}

WeightStore apply_edit(const WeightStore& weights, const EditPlan& plan) {
  WeightStore out = weights;
  for (const auto& group : plan.groups) {
    if (!(group.delta >= -1.0) || !std::isfinite(group.delta)) {
      throw PlanError("group '" + group.label + "': delta must be finite and >= -1");
    }
    const double factor = 1.0 + group.delta;
    for (const auto& n : group.neurons) {
      weights.check_neuron(n);
      Matrix& m = out.layers[n.layer].projection(n.kind);
      for (std::size_t r = 0; r < m.rows; ++r) m(r, n.col) *= factor;
    }
  }
  return out;
}

WeightStore gen_synthetic(const ModelConfig& config, std::uint64_t seed) {
  WeightStore w = WeightStore::zeros(config);
  w.config.seed = seed;
  SplitMix64 rng(seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(config.d_model));
  for (auto& [name, m] : w.named_tensors()) {
    // Layernorm parameters and FFN biases keep their identity/zero init.
    if (name.find("ln") != std::string::npos || name.ends_with(".b1") || name.ends_with(".b2")) {
      continue;
    }
    for (double& v : m->data) v = rng.gaussian() * scale;
  }
  return w;
}

}  // namespace coco
