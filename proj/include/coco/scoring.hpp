#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "coco/ablation.hpp"
#include "coco/model.hpp"

namespace coco {

// How the mean absolute response gap enters the InfoNCE-style logit.
//   NegAbs:     s = −abs  (small intra gap and large inter gap give a low score)
//   LiteralAbs: s = +abs  (the distance plugged in unchanged)
enum class Similarity { NegAbs, LiteralAbs };

const char* to_string(Similarity s);
Similarity parse_similarity(const std::string& s);

struct ScoringConfig {
  double tau = 0.1;
  std::size_t k = 1;
  Similarity similarity = Similarity::NegAbs;
  std::uint64_t seed = 0;

  // Throws ConfigError unless tau > 0 and k >= 1.
  void validate() const;
};

struct ScoreEntry {
  NeuronId neuron;
  double score = 0.0;

  bool operator==(const ScoreEntry&) const = default;
};

struct C2ScoreTable {
  std::vector<ScoreEntry> entries;
  ScoringConfig config;
  std::string provenance;  // hash of the response pairs that were scored
};

enum class Selector { Coco, Rand, Norm, Mact, Ne, Le };

const char* to_string(Selector s);
Selector parse_selector(const std::string& s);

struct SelectorConfig {
  Selector selector = Selector::Coco;
  double theta = -std::numeric_limits<double>::infinity();
  std::size_t k = 1;
  double dispersion_cap = std::numeric_limits<double>::infinity();
  std::uint64_t seed = 0;
};

struct Selection {
  std::vector<NeuronId> neurons;
  // Set when MACT found no neuron under the dispersion cap and fell back to
  // ranking every neuron by mean biased response.
  bool fallback = false;
  std::vector<std::string> warnings;
};

struct LeSelection {
  std::vector<NeuronId> coco_group;
  std::vector<NeuronId> mact_group;
  std::vector<NeuronId> overlap_removed;  // dropped from mact_group
};

// Mean of |a − r| over r in ref. Throws ConfigError on an empty set.
double abs_stat(double a, std::span<const double> ref);

// Mean over anchors i of −log(e^{s_intra/τ} / (e^{s_intra/τ} + e^{s_inter/τ})),
// where s_intra compares a_i with the rest of the anchor set and s_inter with
// the whole contrast set. Evaluated as softplus((s_inter − s_intra)/τ).
double contrastive_loss(std::span<const double> anchor_set, std::span<const double> contrast_set,
                        const ScoringConfig& config);

// (L(A⁺, A⁻) + L(A⁻, A⁺)) / 2. Lower means more discriminative.
double c2_score(const ActivationResponsePair& pair, const ScoringConfig& config);

C2ScoreTable score_table(const std::vector<ActivationResponsePair>& pairs, const ScoringConfig& config,
                         std::size_t jobs = 1);

// The k lowest-scoring neurons (score ≤ ε(k)), ties broken by NeuronId order.
std::vector<NeuronId> extract_coco(const C2ScoreTable& table, std::size_t k);

// |mean(a) − mean(b)|.
double disparity(std::span<const double> a, std::span<const double> b);
// Population standard deviation.
double consistency(std::span<const double> a);

// RAND, NORM or MACT. `pairs` may be empty for RAND and NORM.
Selection select_baseline(const WeightStore& weights, const std::vector<ActivationResponsePair>& pairs,
                          const SelectorConfig& config);

// COCO group: extract_coco(table, k) restricted to D(A⁻, A⁺) > θ.
// MACT group: the MACT baseline, minus anything already in the COCO group.
// Throws EmptySelectionError when θ leaves the COCO group empty.
LeSelection select_le(const C2ScoreTable& table, const std::vector<ActivationResponsePair>& pairs,
                      const SelectorConfig& config);

// Every neuron with D(A⁻, A⁺) > θ, at most k, by descending D.
// Throws EmptySelectionError when nothing passes θ.
std::vector<NeuronId> select_ne(const std::vector<ActivationResponsePair>& pairs,
                                const SelectorConfig& config);

nlohmann::json table_to_json(const C2ScoreTable& table);
C2ScoreTable table_from_json(const nlohmann::json& j);

}  // namespace coco
