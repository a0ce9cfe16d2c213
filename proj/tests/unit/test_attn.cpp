#include <doctest.h>

#include <cmath>
#include <fstream>

#include "coco/attn_analysis.hpp"
#include "coco/editing.hpp"
#include "coco/errors.hpp"
#include "../support/oracles.hpp"
#include "../support/paths.hpp"

using namespace coco;

namespace {

std::vector<TokenSeq> scenarios() { return {{1, 2, 3}, {4, 5, 6}, {7, 8, 9, 10, 11}, {3}}; }

}  // namespace

TEST_CASE("attention_shift: identity edit reports no shift") {
  const WeightStore w = gen_synthetic(ModelConfig::make(2, 2, 16, 16, 8), 5);
  const auto r = attention_shift(w, w, scenarios());
  CHECK(r.no_shift);
  CHECK(r.n_scenarios == 4);
  CHECK(r.heads.size() == 4);
  for (const auto& h : r.heads) CHECK(h.mean_l1 == 0.0);
  CHECK(r.top.size() == 3);
}

TEST_CASE("attention_shift: errors") {
  const WeightStore w = gen_synthetic(ModelConfig::make(2, 2, 16, 16, 8), 5);
  const WeightStore other = gen_synthetic(ModelConfig::make(1, 2, 16, 16, 8), 5);
  CHECK_THROWS_AS(attention_shift(w, other, scenarios()), InputError);
  CHECK_THROWS_AS(attention_shift(w, w, {}), InputError);
}

TEST_CASE("attention_shift: V edits leave scores unchanged") {
  const WeightStore w1 = gen_synthetic(ModelConfig::make(1, 2, 16, 16, 8), 5);
  const auto r1 = attention_shift(w1, apply_edit(w1, plan_ne({{0, MatrixKind::V, 3}, {0, MatrixKind::V, 12}}, 1.5)),
                                  scenarios());
  CHECK(r1.no_shift);

  // In a deeper model the edited layer and everything before it keep their scores.
  const WeightStore w = gen_synthetic(ModelConfig::make(3, 2, 16, 16, 8), 5);
  const auto r = attention_shift(w, apply_edit(w, plan_deactivate({{1, MatrixKind::V, 7}})), scenarios());
  for (const auto& h : r.heads) {
    if (h.layer <= 1) CHECK(h.mean_l1 == 0.0);
    else CHECK(h.mean_l1 > 0.0);
  }
}

TEST_CASE("attention_shift: Q edit moves only the owning head, matching a two-pass oracle") {
  const WeightStore w = gen_synthetic(ModelConfig::make(2, 4, 16, 16, 8), 9);
  const NeuronId n{1, MatrixKind::Q, 9};  // d_head 4 → head 2
  const WeightStore e = apply_edit(w, plan_ne({n}, 2.0));
  const auto seqs = scenarios();
  const auto r = attention_shift(w, e, seqs, 16);
  for (const auto& h : r.heads) {
    if (h.layer == 1 && h.head == 2) CHECK(h.mean_l1 > 0.0);
    else CHECK(h.mean_l1 == 0.0);
  }
  REQUIRE(r.top.size() == 8);
  CHECK(r.top[0].layer == 1);
  CHECK(r.top[0].head == 2);

  // Oracle: two independent forward passes, ΔA averaged per length bucket.
  double l1 = 0.0;
  for (const auto& s : seqs) {
    const auto a = forward(w, s, {.attention = true}).attention[1][2];
    const auto b = forward(e, s, {.attention = true}).attention[1][2];
    for (std::size_t i = 0; i < a.data.size(); ++i) l1 += std::abs(b.data[i] - a.data[i]);
  }
  CHECK(std::abs(r.top[0].mean_l1 - l1 / seqs.size()) <= 1e-12);
  const auto& bucket3 = r.top[0].buckets[1];
  REQUIRE(bucket3.seq_len == 3);
  CHECK(bucket3.n_scenarios == 2);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      double expect = 0.0;
      for (const auto& s : {seqs[0], seqs[1]}) {
        expect += forward(e, s, {.attention = true}).attention[1][2](i, j) -
                  forward(w, s, {.attention = true}).attention[1][2](i, j);
      }
      CHECK(std::abs(bucket3.mean_delta(i, j) - expect / 2.0) <= 1e-12);
    }
  }
}

TEST_CASE("attention_shift: row sums vanish and argument swap negates exactly (property)") {
  const WeightStore w = gen_synthetic(ModelConfig::make(2, 2, 16, 16, 8), 21);
  SplitMix64 rng(4);
  const auto all = w.all_neurons();
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<NeuronId> s;
    for (const auto& n : all)
      if (rng.uniform() < 0.1) s.push_back(n);
    const WeightStore e = apply_edit(w, plan_ne(s, rng.uniform() * 3));
    const auto fwd = attention_shift(w, e, scenarios(), 4);
    const auto rev = attention_shift(e, w, scenarios(), 4);
    for (const auto& top : fwd.top) {
      const TopHead* other = nullptr;
      for (const auto& t : rev.top)
        if (t.layer == top.layer && t.head == top.head) other = &t;
      REQUIRE(other);
      CHECK(other->mean_l1 == top.mean_l1);
      for (std::size_t b = 0; b < top.buckets.size(); ++b) {
        const Matrix& m = top.buckets[b].mean_delta;
        for (std::size_t i = 0; i < m.data.size(); ++i) CHECK(other->buckets[b].mean_delta.data[i] == -m.data[i]);
        for (std::size_t i = 0; i < m.rows; ++i) {
          double sum = 0.0;
          for (std::size_t j = 0; j < m.cols; ++j) sum += m(i, j);
          CHECK(std::abs(sum) <= 1e-9);
        }
      }
    }
  }
}

TEST_CASE("head_tail_of: worked examples") {
  const HeadTail zero = head_tail_of(Matrix(3, 3));
  CHECK(zero.first_col_mean == 0.0);
  CHECK(zero.last_col_mean == 0.0);
  CHECK(!zero.trade_off);

  Matrix d(3, 3);
  for (std::size_t i = 0; i < 3; ++i) d(i, 0) = 0.1;
  d(2, 2) = -0.1;
  const HeadTail ht = head_tail_of(d);
  CHECK(std::abs(ht.first_col_mean - 0.1) <= 1e-15);
  CHECK(std::abs(ht.last_col_mean + 0.1) <= 1e-15);
  CHECK(ht.trade_off);
  // Only rows at or below the diagonal can attend to column 1.
  Matrix c(3, 3);
  c(1, 1) = 0.3;
  c(2, 1) = 0.1;
  CHECK(std::abs(causal_column_mean(c, 1) - 0.2) <= 1e-15);
}

TEST_CASE("neuron_distribution") {
  const ModelConfig c = ModelConfig::make(3, 2, 16, 16, 8);
  SUBCASE("all in the last layer's V") {
    const auto d = neuron_distribution({{2, MatrixKind::V, 0}, {2, MatrixKind::V, 5}}, c);
    CHECK(d.total == 2);
    CHECK(d.counts[2][2] == 2);
    CHECK(d.percent[2][2] == 100.0);
    CHECK(!d.degenerate);
  }
  SUBCASE("empty selection") {
    const auto d = neuron_distribution({}, c);
    CHECK(d.degenerate);
    for (const auto& row : d.percent)
      for (double p : row) CHECK(p == 0.0);
  }
  SUBCASE("uniform random selection stays within 3σ, percentages sum to 100") {
    WeightStore w = WeightStore::zeros(c);
    const auto all = w.all_neurons();
    SplitMix64 rng(17);
    std::vector<NeuronId> sel;
    for (const auto& n : all)
      if (rng.uniform() < 0.5) sel.push_back(n);
    const auto d = neuron_distribution(sel, c);
    const double p = 1.0 / 9.0;
    const double n = static_cast<double>(sel.size());
    double total = 0.0;
    for (std::size_t l = 0; l < 3; ++l) {
      for (std::size_t k = 0; k < 3; ++k) {
        CHECK(std::abs(static_cast<double>(d.counts[l][k]) - n * p) <= 3.0 * std::sqrt(n * p * (1 - p)));
        total += d.percent[l][k];
      }
    }
    CHECK(std::abs(total - 100.0) <= 1e-9);
  }
  CHECK_THROWS_AS(neuron_distribution({{3, MatrixKind::Q, 0}}, c), AddressError);
}

TEST_CASE("write_shift_outputs") {
  const WeightStore w = gen_synthetic(ModelConfig::make(2, 2, 16, 16, 8), 5);
  const auto r = attention_shift(w, apply_edit(w, plan_ne({{0, MatrixKind::K, 1}}, 1.0)), scenarios(), 2);
  const auto dir = test_paths::scratch("attn_out");
  const auto files = write_shift_outputs(r, dir);
  // json + head table + 2 heads × 3 length buckets
  CHECK(files.size() == 8);
  for (const auto& f : files) CHECK(std::filesystem::exists(dir / f));
  std::ifstream in(dir / "attn_shift.json");
  const auto j = nlohmann::json::parse(in);
  CHECK(j.at("heads").size() == 4);
  CHECK(matrix_to_csv(Matrix(1, 2, {0.5, -0.25})) == "0.5,-0.25\n");
}
