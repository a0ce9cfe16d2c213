#include <doctest.h>

#include <bit>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "coco/editing.hpp"
#include "coco/errors.hpp"
#include "coco/model.hpp"
#include "../support/oracles.hpp"
#include "../support/paths.hpp"

using namespace coco;

namespace {

WeightStore seed42() { return gen_synthetic(ModelConfig::make(4, 4, 32, 64, 16), 42); }

void zero_attention_and_ffn(WeightStore& w, std::size_t layer) {
  auto& l = w.layers[layer];
  for (Matrix* m : {&l.wq, &l.wk, &l.wv, &l.wo, &l.w1, &l.b1, &l.w2, &l.b2}) {
    std::fill(m->data.begin(), m->data.end(), 0.0);
  }
}

}  // namespace

TEST_CASE("config validation") {
  CHECK_THROWS_AS(ModelConfig::make(1, 3, 32, 8, 8), ConfigError);
  ModelConfig c = ModelConfig::make(2, 2, 8, 8, 8);
  c.d_head = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("forward: single token attention is [[1]]") {
  const WeightStore w = seed42();
  const auto trace = forward(w, {7}, {.hidden = true, .attention = true});
  REQUIRE(trace.attention.size() == 4);
  for (const auto& layer : trace.attention) {
    for (const auto& a : layer) {
      CHECK(a.rows == 1);
      CHECK(a(0, 0) == 1.0);
    }
  }
}

TEST_CASE("forward: capture off keeps logits only") {
  const auto trace = forward(seed42(), {1, 2, 3});
  CHECK(trace.hidden.empty());
  CHECK(trace.attention.empty());
  CHECK(!trace.all_logits);
  CHECK(trace.logits.size() == 64);
}

TEST_CASE("forward: input errors") {
  const WeightStore w = seed42();
  CHECK_THROWS_AS(forward(w, {}), InputError);
  CHECK_THROWS_AS(forward(w, {64}), InputError);
  CHECK_THROWS_AS(forward(w, TokenSeq(17, 1)), InputError);
}

TEST_CASE("forward: attention rows are causal probability vectors") {
  const WeightStore w = seed42();
  const auto trace = forward(w, {3, 1, 4, 1, 5, 9, 2, 6}, {.attention = true});
  for (const auto& layer : trace.attention) {
    for (const auto& a : layer) {
      for (std::size_t i = 0; i < a.rows; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < a.cols; ++j) {
          CHECK(a(i, j) >= 0.0);
          if (j > i) CHECK(a(i, j) == 0.0);
          sum += a(i, j);
        }
        CHECK(std::abs(sum - 1.0) <= 1e-9);
      }
    }
  }
}

TEST_CASE("forward_layer composition equals forward bitwise") {
  const WeightStore w = seed42();
  const TokenSeq tokens{9, 8, 7, 6, 5};
  const auto trace = forward(w, tokens, {.hidden = true, .attention = true, .all_logits = true});
  Matrix h = embed(w, tokens);
  CHECK(h == trace.hidden[0]);
  for (std::size_t l = 0; l < w.config.n_layers; ++l) {
    LayerOutput out = forward_layer(w, l, h);
    CHECK(out.h_out == trace.hidden[l + 1]);
    CHECK(out.attention == trace.attention[l]);
    h = out.h_out;
  }
  CHECK(final_logits(w, h.row(h.rows - 1)) == trace.logits);
  CHECK_THROWS_AS(forward_layer(w, 0, Matrix(3, 31)), ShapeError);
}

TEST_CASE("residual identity: zero attention and FFN weights pass h through") {
  WeightStore w = seed42();
  zero_attention_and_ffn(w, 2);
  SplitMix64 rng(4);
  const Matrix h_in = oracle::random_matrix(5, 32, rng);
  CHECK(forward_layer(w, 2, h_in).h_out == h_in);

  for (std::size_t l = 0; l < w.config.n_layers; ++l) zero_attention_and_ffn(w, l);
  const TokenSeq tokens{1, 2, 3, 4};
  const auto trace = forward(w, tokens, {.hidden = true});
  CHECK(trace.hidden.back() == embed(w, tokens));
}

TEST_CASE("forward_layer: hand-computed single head") {
  ModelConfig c = ModelConfig::make(1, 1, 2, 4, 4);
  c.d_ff = 1;
  WeightStore w = WeightStore::zeros(c);
  auto& l = w.layers[0];
  l.wq = Matrix::identity(2);
  l.wk = Matrix::identity(2);
  l.wv = Matrix(2, 2, {1, 0, 0, 2});
  l.wo = Matrix::identity(2);
  const Matrix h_in(2, 2, {1, 0, 0, 1});
  const LayerOutput out = forward_layer(w, 0, h_in);

  // Layernorm of [1, 0] and [0, 1] gives ±cn with cn = 0.5 / √(0.25 + 1e-5).
  const double cn = 0.5 / std::sqrt(0.25 + 1e-5);
  const double s_same = 2 * cn * cn / std::sqrt(2.0);
  const double p_prev = std::exp(-s_same) / (std::exp(-s_same) + std::exp(s_same));
  const double p_self = 1.0 - p_prev;
  // v0 = [cn, −2cn], v1 = [−cn, 2cn]
  const double row1_c0 = p_prev * cn + p_self * -cn;
  const double row1_c1 = p_prev * -2 * cn + p_self * 2 * cn;

  CHECK(out.attention[0](0, 0) == 1.0);
  CHECK(std::abs(out.attention[0](1, 0) - p_prev) < 1e-12);
  CHECK(std::abs(out.attention[0](1, 1) - p_self) < 1e-12);
  CHECK(std::abs(out.h_out(0, 0) - (1 + cn)) < 1e-12);
  CHECK(std::abs(out.h_out(0, 1) - (0 - 2 * cn)) < 1e-12);
  CHECK(std::abs(out.h_out(1, 0) - (0 + row1_c0)) < 1e-12);
  CHECK(std::abs(out.h_out(1, 1) - (1 + row1_c1)) < 1e-12);
}

TEST_CASE("apply_edit: identity, arithmetic, deactivation") {
  ModelConfig c = ModelConfig::make(1, 1, 2, 4, 4);
  WeightStore w = WeightStore::zeros(c);
  w.layers[0].wv = Matrix(2, 2, {1, 5, 2, 6});
  const NeuronId col0{0, MatrixKind::V, 0};

  CHECK(apply_edit(w, plan_ne({col0}, 0.0)) == w);
  const WeightStore scaled = apply_edit(w, plan_ne({col0}, 0.5));
  CHECK(scaled.layers[0].wv == Matrix(2, 2, {1.5, 5, 3.0, 6}));
  CHECK(w.layers[0].wv == Matrix(2, 2, {1, 5, 2, 6}));
  const WeightStore zeroed = apply_edit(w, plan_deactivate({col0}));
  CHECK(zeroed.layers[0].wv == Matrix(2, 2, {0, 5, 0, 6}));

  CHECK_THROWS_AS(apply_edit(w, plan_deactivate({{0, MatrixKind::Q, 2}})), AddressError);
  CHECK_THROWS_AS(apply_edit(w, plan_deactivate({{1, MatrixKind::Q, 0}})), AddressError);
}

TEST_CASE("apply_edit: deactivation then forward equals manual zeroing") {
  const WeightStore w = seed42();
  const NeuronId n{2, MatrixKind::K, 17};
  WeightStore manual = w;
  for (std::size_t r = 0; r < 32; ++r) manual.layers[2].wk(r, 17) = 0.0;
  const TokenSeq tokens{5, 4, 3, 2, 1};
  const auto a = forward(apply_edit(w, plan_deactivate({n})), tokens, {.hidden = true});
  const auto b = forward(manual, tokens, {.hidden = true});
  CHECK(a.logits == b.logits);
  CHECK(a.hidden == b.hidden);
}

TEST_CASE("apply_edit: disjoint plans commute (property)") {
  const WeightStore w = seed42();
  SplitMix64 rng(11);
  const auto all = w.all_neurons();
  for (int trial = 0; trial < 25; ++trial) {
    std::vector<NeuronId> p, q;
    for (const auto& n : all) {
      const double u = rng.uniform();
      if (u < 0.05) p.push_back(n);
      else if (u < 0.10) q.push_back(n);
    }
    const EditPlan plan_p = plan_ne(p, rng.uniform() * 2);
    const EditPlan plan_q = plan_ne(q, rng.uniform() * 2);
    CHECK(apply_edit(apply_edit(w, plan_p), plan_q) == apply_edit(apply_edit(w, plan_q), plan_p));
  }
}

TEST_CASE("gen_synthetic: deterministic in seed") {
  const auto c = ModelConfig::make(2, 2, 8, 16, 8);
  CHECK(gen_synthetic(c, 3) == gen_synthetic(c, 3));
  CHECK(fingerprint(gen_synthetic(c, 3)) == fingerprint(gen_synthetic(c, 3)));
  CHECK(!(gen_synthetic(c, 3) == gen_synthetic(c, 4)));
  CHECK(fingerprint(gen_synthetic(c, 3)) != fingerprint(gen_synthetic(c, 4)));
}

TEST_CASE("save/load round trip is bitwise") {
  const auto dir = test_paths::scratch("model_roundtrip");
  WeightStore w = seed42();
  w.layers[0].wq(0, 0) = -0.0;
  w.layers[0].wq(0, 1) = 1e-310;  // subnormal
  save_model(w, dir);
  const WeightStore back = load_model(dir);
  CHECK(back.config == w.config);
  for (const auto& [name, m] : w.named_tensors()) {
    const Matrix* other = nullptr;
    for (const auto& [n2, m2] : back.named_tensors()) {
      if (n2 == name) other = m2;
    }
    REQUIRE(other);
    for (std::size_t i = 0; i < m->data.size(); ++i) {
      CHECK(std::bit_cast<std::uint64_t>(m->data[i]) == std::bit_cast<std::uint64_t>(other->data[i]));
    }
  }
}

TEST_CASE("load_model: malformed files report format errors") {
  const auto dir = test_paths::scratch("model_bad");
  save_model(gen_synthetic(ModelConfig::make(1, 1, 4, 4, 4), 1), dir);

  SUBCASE("truncated tensors.bin") {
    std::filesystem::resize_file(dir / "tensors.bin", 100);
    try {
      load_model(dir);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(e.offset() == 100);
    }
  }
  SUBCASE("broken manifest json") {
    std::ofstream(dir / "manifest.json") << "{\"format\": ";
    try {
      load_model(dir);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(e.offset() >= 0);
    }
  }
  SUBCASE("missing directory") { CHECK_THROWS_AS(load_model(dir / "nope"), FormatError); }
}

TEST_CASE("golden: seed-42 logits for a fixed 4-token input") {
  const auto golden = test_paths::source_dir() / "tests/golden/seed42_logits.txt";
  const auto logits = forward(seed42(), {1, 5, 9, 13}).logits;
  if (std::getenv("COCO_REGEN_GOLDEN")) {
    std::ofstream out(golden);
    for (double v : logits) out << std::hex << std::bit_cast<std::uint64_t>(v) << "\n";
  }
  std::ifstream in(golden);
  REQUIRE_MESSAGE(in.good(), "missing golden file ", golden.string());
  std::vector<std::uint64_t> bits;
  std::string line;
  while (std::getline(in, line)) bits.push_back(std::stoull(line, nullptr, 16));
  REQUIRE(bits.size() == logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) CHECK(std::bit_cast<std::uint64_t>(logits[i]) == bits[i]);
}
