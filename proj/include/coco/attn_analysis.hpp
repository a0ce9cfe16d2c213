#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "coco/model.hpp"

namespace coco {

struct HeadShift {
  std::size_t layer = 0;
  std::size_t head = 0;
  double mean_l1 = 0.0;  // ‖Â − A‖₁ averaged over scenarios
};

// Mean ΔA for one head over all scenarios of one prompt length.
struct HeadBucketDetail {
  std::size_t seq_len = 0;
  std::size_t n_scenarios = 0;
  Matrix mean_delta;  // seq_len × seq_len
  double first_col_mean = 0.0;
  double last_col_mean = 0.0;
};

struct TopHead {
  std::size_t layer = 0;
  std::size_t head = 0;
  double mean_l1 = 0.0;
  std::vector<HeadBucketDetail> buckets;  // ascending seq_len
};

struct AttentionShiftReport {
  std::size_t n_scenarios = 0;
  std::vector<HeadShift> heads;  // every head, (layer, head) order
  std::vector<TopHead> top;      // strongest first; ties by (layer, head)
  bool no_shift = false;         // every L1 is exactly zero
};

// Captures post-softmax attention under both stores for every scenario and
// accumulates ΔA = A(edited) − A(base) per head. Scenarios are bucketed by
// length before averaging. Throws InputError when the configs differ or no
// scenarios are given.
AttentionShiftReport attention_shift(const WeightStore& base, const WeightStore& edited,
                                     const std::vector<TokenSeq>& scenarios, std::size_t top_k = 3,
                                     std::size_t jobs = 1);

// Column means of ΔA over the rows that can attend to that column (i ≥ j).
double causal_column_mean(const Matrix& delta, std::size_t col);

struct HeadTail {
  std::size_t layer = 0;
  std::size_t head = 0;
  std::size_t seq_len = 0;
  double first_col_mean = 0.0;
  double last_col_mean = 0.0;
  bool trade_off = false;  // first > 0 and last < 0
};

HeadTail head_tail_of(const Matrix& mean_delta);
std::vector<HeadTail> head_tail_stat(const AttentionShiftReport& report);

struct NeuronDistribution {
  std::size_t n_layers = 0;
  std::size_t total = 0;
  std::vector<std::array<std::size_t, 3>> counts;  // [layer][Q, K, V]
  std::vector<std::array<double, 3>> percent;
  bool degenerate = false;  // empty selection: percentages left at zero
};

NeuronDistribution neuron_distribution(const std::vector<NeuronId>& selected, const ModelConfig& config);

nlohmann::json shift_to_json(const AttentionShiftReport& report);
nlohmann::json distribution_to_json(const NeuronDistribution& dist);
std::string matrix_to_csv(const Matrix& m);
// layer,Q,K,V rows of percentages.
std::string distribution_to_csv(const NeuronDistribution& dist);

// Writes attn_shift.json, head_l1.csv, one ΔA grid CSV per top head and bucket,
// and returns the written file names relative to `dir`.
std::vector<std::string> write_shift_outputs(const AttentionShiftReport& report,
                                             const std::filesystem::path& dir);

}  // namespace coco
