#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "coco/tensor.hpp"

namespace coco {

// Decoder-only, pre-layernorm GPT-style transformer:
//
//   h0 = tok_embed[t] + pos_embed[i]
//   x  = h + Attn(LN1(h))          Attn = Concat_i(softmax(Q_i K_iᵀ / √d_head) V_i) · W_O
//   h' = x + FFN(LN2(x))           FFN  = GELU(x W1 + b1) W2 + b2
//   logits = LN_f(h_L) · unembed
//
// Projections carry no bias. Neurons live in W_Q, W_K and W_V only.
struct ModelConfig {
  std::size_t n_layers = 1;
  std::size_t n_heads = 1;
  std::size_t d_model = 8;
  std::size_t d_head = 8;
  std::size_t d_ff = 32;
  std::size_t vocab_size = 16;
  std::size_t max_seq = 16;
  std::uint64_t seed = 0;

  // Throws ConfigError unless d_model = n_heads × d_head and all counts ≥ 1.
  void validate() const;
  // Fills d_head = d_model / n_heads and d_ff = 4·d_model.
  static ModelConfig make(std::size_t layers, std::size_t heads, std::size_t d_model,
                          std::size_t vocab, std::size_t max_seq, std::uint64_t seed = 0);

  bool operator==(const ModelConfig&) const = default;
};

enum class MatrixKind : std::uint8_t { Q = 0, K = 1, V = 2 };

const char* to_string(MatrixKind kind);
// Throws FormatError for anything other than "Q", "K" or "V".
MatrixKind parse_matrix_kind(const std::string& s);

// Column `col` of W_kind in layer `layer`. The owning head is col / d_head.
struct NeuronId {
  std::uint32_t layer = 0;
  MatrixKind kind = MatrixKind::Q;
  std::uint32_t col = 0;

  auto operator<=>(const NeuronId&) const = default;
  bool operator==(const NeuronId&) const = default;

  std::string str() const;
};

struct LayerWeights {
  Matrix ln1_gamma, ln1_beta;  // 1×d
  Matrix wq, wk, wv, wo;       // d×d
  Matrix ln2_gamma, ln2_beta;  // 1×d
  Matrix w1, b1;               // d×d_ff, 1×d_ff
  Matrix w2, b2;               // d_ff×d, 1×d

  const Matrix& projection(MatrixKind kind) const;
  Matrix& projection(MatrixKind kind);

  bool operator==(const LayerWeights&) const = default;
};

struct WeightStore {
  ModelConfig config;
  Matrix tok_embed;  // vocab×d
  Matrix pos_embed;  // max_seq×d
  std::vector<LayerWeights> layers;
  Matrix lnf_gamma, lnf_beta;  // 1×d
  Matrix unembed;              // d×vocab

  // Zero-initialised store with the right shapes (layernorm gains are 1).
  static WeightStore zeros(const ModelConfig& config);

  // Ordered (name, tensor) view used by persistence and hashing.
  std::vector<std::pair<std::string, const Matrix*>> named_tensors() const;
  std::vector<std::pair<std::string, Matrix*>> named_tensors();

  // Throws ShapeError if any tensor disagrees with config.
  void validate_shapes() const;

  // Total number of MHA neurons: 3 · n_layers · d_model.
  std::size_t neuron_count() const { return 3 * config.n_layers * config.d_model; }
  std::vector<NeuronId> all_neurons() const;
  void check_neuron(const NeuronId& n) const;

  bool operator==(const WeightStore&) const = default;
};

// Content hash over config and all tensor bytes.
std::string fingerprint(const WeightStore& weights);

using TokenSeq = std::vector<std::uint32_t>;

struct CaptureFlags {
  bool hidden = false;      // h^0 … h^L for every token
  bool attention = false;   // post-softmax A for every layer and head
  bool all_logits = false;  // logits for every position, not just the last
};

struct ForwardTrace {
  std::vector<Matrix> hidden;                  // L+1 entries, each seq×d, when captured
  std::vector<std::vector<Matrix>> attention;  // [layer][head] seq×seq, when captured
  std::vector<double> logits;                  // final position
  std::optional<Matrix> all_logits;            // seq×vocab, when captured
};

struct LayerOutput {
  Matrix h_out;                // seq×d
  std::vector<Matrix> attention;  // per head, seq×seq
};

// One transformer block. `forward` calls exactly this routine for every layer,
// so results are bit-identical to the corresponding slice of a full pass.
LayerOutput forward_layer(const LayerWeights& layer, const ModelConfig& config, const Matrix& h_in);
LayerOutput forward_layer(const WeightStore& weights, std::size_t layer, const Matrix& h_in);

// Throws InputError for empty sequences, sequences longer than max_seq, or ids
// outside the vocabulary.
void check_tokens(const ModelConfig& config, const TokenSeq& tokens);

Matrix embed(const WeightStore& weights, const TokenSeq& tokens);
std::vector<double> final_logits(const WeightStore& weights, std::span<const double> h_last);

ForwardTrace forward(const WeightStore& weights, const TokenSeq& tokens, CaptureFlags capture = {});

struct EditPlan;

// Column `col` of each addressed matrix is multiplied by (1 + delta). The
// input store is left untouched.
WeightStore apply_edit(const WeightStore& weights, const EditPlan& plan);

// Deterministic synthetic weights: N(0, 1/d) entries from SplitMix64 + Box–Muller,
// layernorm gains 1 and biases 0.
WeightStore gen_synthetic(const ModelConfig& config, std::uint64_t seed);

// Directory with manifest.json and tensors.bin (little-endian f64, row-major,
// concatenated in manifest order).
void save_model(const WeightStore& weights, const std::filesystem::path& dir);
WeightStore load_model(const std::filesystem::path& dir);

}  // namespace coco
