#pragma once

#include <cstdint>
#include <limits>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "coco/ablation.hpp"
#include "coco/editing.hpp"
#include "coco/model.hpp"
#include "coco/scoring.hpp"

namespace coco {

enum class Polarity { Biased, Unbiased };
enum class Split { Dev, Test };

struct ScenarioItem {
  std::string id;
  std::string category;
  TokenSeq prompt;
  std::vector<TokenSeq> options;
  std::size_t unbiased_index = 0;
  std::optional<Polarity> polarity;
  std::optional<Split> split;

  bool operator==(const ScenarioItem&) const = default;
};

struct ScenarioSet {
  std::vector<ScenarioItem> items;

  bool empty() const { return items.empty(); }
  std::size_t size() const { return items.size(); }
  // Categories in order of first appearance.
  std::vector<std::string> categories() const;
  ScenarioSet filter_category(const std::string& category) const;
  std::string hash() const;
};

// JSON Lines, one item per line:
//   {"id":..., "category":..., "prompt":[ids], "options":[[ids],...],
//    "unbiased_index":n, "polarity":"biased"|"unbiased"?, "split":"dev"|"test"?}
// Throws FormatError (offset = 1-based line number) on malformed lines.
ScenarioSet load_scenarios(const std::filesystem::path& path);
ScenarioSet parse_scenarios(const std::string& text);
void save_scenarios(const ScenarioSet& set, const std::filesystem::path& path);
nlohmann::json item_to_json(const ScenarioItem& item);

// Items with an explicit split keep it; the rest are shuffled per category with
// a seeded stream and 30% (rounded) go to test.
std::pair<ScenarioSet, ScenarioSet> split_dev_test(const ScenarioSet& set, std::uint64_t seed,
                                                   double test_fraction = 0.3);

struct EvalOptions {
  bool length_normalized = false;
  std::size_t jobs = 1;
};

// Summed (or mean, when length_normalized) log-probability of each option's
// tokens under teacher forcing after the prompt.
std::vector<double> option_scores(const WeightStore& weights, const ScenarioItem& item,
                                  const EvalOptions& options = {});
// Argmax of option_scores; ties go to the lowest index.
std::size_t predict(const WeightStore& weights, const ScenarioItem& item, const EvalOptions& options = {});

// 100 × fraction of items whose prediction equals unbiased_index.
// Throws ConfigError on an empty set.
double evaluate_ea(const WeightStore& weights, const ScenarioSet& set, const EvalOptions& options = {});

struct Partition {
  std::vector<ScenarioItem> minus;  // X⁻: biased behaviour
  std::vector<ScenarioItem> plus;   // X⁺: unbiased behaviour
  std::vector<std::string> dropped_ids;

  std::vector<TokenSeq> minus_prompts() const;
  std::vector<TokenSeq> plus_prompts() const;
};

// Items with an explicit polarity keep it; the rest go to X⁻ when the model's
// prediction differs from unbiased_index and to X⁺ otherwise. The larger side
// is subsampled to K = min size with `seed`. Throws PartitionError when either
// side is empty.
Partition partition_scenarios(const WeightStore& weights, const ScenarioSet& set, std::uint64_t seed,
                              const EvalOptions& options = {});

// Grid value < 1 is a fraction of all MHA neurons (at least 1); ≥ 1 is a count.
std::size_t resolve_k(double k_spec, std::size_t neuron_count);

struct PipelineConfig {
  std::vector<double> tau_grid{0.05, 0.1, 0.2, 0.5, 1.0};
  std::vector<double> k_grid{0.005, 0.01, 0.015, 0.02};
  Similarity similarity = Similarity::NegAbs;
  std::uint64_t seed = 0;
  EvalOptions eval;
  std::size_t jobs = 1;
};

struct GridCell {
  double tau = 0.0;
  double k_spec = 0.0;
  std::size_t k = 0;
  double ea_deact = 0.0;
  double margin = 0.0;
  std::vector<NeuronId> neurons;
};

struct CategoryBest {
  std::string category;
  double tau = 0.0;
  double k_spec = 0.0;
  std::size_t k = 0;
  double ea_orig = 0.0;
  double ea_deact = 0.0;
  double margin = 0.0;
  std::vector<NeuronId> neurons;
  std::vector<GridCell> cells;  // every evaluated cell, in grid order
};

struct CrossEntry {
  std::string target;
  std::string source;
  double tau = 0.0;
  std::size_t k = 0;
  double ea_orig = 0.0;
  double ea_deact = 0.0;
  double margin = 0.0;
  std::vector<NeuronId> neurons;
};

struct GridSearchResult {
  std::vector<CategoryBest> intra;
  std::vector<CrossEntry> cross;
  std::vector<std::string> warnings;

  const CategoryBest* find_intra(const std::string& category) const;
  const CrossEntry* find_cross(const std::string& target) const;
};

// Responses for one category's dev data, the input to every grid cell.
struct CategoryResponses {
  std::string category;
  double ea_orig = 0.0;
  Partition partition;
  std::vector<ActivationResponsePair> pairs;
};

CategoryResponses category_responses(const WeightStore& weights, const ScenarioSet& dev_category,
                                     const std::string& category, const PipelineConfig& config);

// Per category: fix the partition from the base model, sweep every neuron once,
// then for each (τ, k) score, extract, deactivate and measure the dev EA drop.
// Keeps the first cell (grid order, τ-major) with the largest margin.
GridSearchResult grid_search_intra(const WeightStore& weights, const ScenarioSet& dev,
                                   const PipelineConfig& config);

// For each target category, deactivates every source category's selected
// neurons and keeps the source with the largest margin on the target's dev
// data (first in category order on ties). Fills `cross` of the returned copy.
GridSearchResult grid_search_cross(const GridSearchResult& intra, const WeightStore& weights,
                                   const ScenarioSet& dev, const PipelineConfig& config);

nlohmann::json grid_to_json(const GridSearchResult& result);

struct ExperimentConfig {
  Selector selector = Selector::Coco;
  double tau = 0.1;
  double k_spec = 1;
  double theta = -std::numeric_limits<double>::infinity();
  double dispersion_cap = std::numeric_limits<double>::infinity();
  std::vector<double> delta_grid{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  Similarity similarity = Similarity::NegAbs;
  std::uint64_t seed = 0;
  EvalOptions eval;
  std::size_t jobs = 1;
  // Category → neurons fixed upstream (e.g. by cross-category grid search).
  // Categories listed here skip selection.
  std::map<std::string, std::vector<NeuronId>> fixed_neurons;
  std::map<std::string, double> category_tau;  // per-category τ overrides
  std::map<std::string, std::size_t> category_k;  // per-category k overrides
};

struct CapabilityResult {
  std::string name;
  double ea_before = 0.0;
  double ea_after = 0.0;
};

struct CategoryReport {
  std::string category;
  EditPlan plan;
  double ea_before = 0.0;  // held-out test
  double ea_after = 0.0;
  double dev_ea_before = 0.0;
  double dev_ea_after = 0.0;
  std::vector<CapabilityResult> capability;
  std::vector<std::string> warnings;
};

struct ExperimentReport {
  std::string run_id;
  std::string model_hash;
  std::string mode;  // "deactivate" | "enhance"
  nlohmann::json config_echo;
  std::vector<CategoryReport> categories;
  std::optional<std::string> attention_shift_ref;
};

using NamedScenarioSet = std::pair<std::string, ScenarioSet>;

// Neurons to edit for one category, grouped the way the plan will be built.
struct CategorySelection {
  std::vector<NeuronId> primary;  // the whole selection, or the COCO group for LE
  std::vector<NeuronId> mact;     // LE only
  std::vector<std::string> warnings;
};

// Runs the configured selector on one category's dev items. Fixed neurons in
// the config short-circuit selection.
CategorySelection select_for_category(const WeightStore& weights, const ExperimentConfig& config,
                                      const std::string& category, const ScenarioSet& dev_category);

// Deactivates each category's selected neurons and reports test EA before and
// after, plus EA on every capability set under the same plan. Throws
// ConfigError when a category has no test items.
ExperimentReport run_deactivation_experiment(const WeightStore& weights, const ExperimentConfig& config,
                                             const ScenarioSet& dev, const ScenarioSet& test,
                                             const std::vector<NamedScenarioSet>& capability_sets);

// Like the deactivation run, but scales the selection by the Δ that maximises
// dev EA over `delta_grid` (LE searches Δ_COCO × Δ_MACT).
ExperimentReport run_enhancement_experiment(const WeightStore& weights, const ExperimentConfig& config,
                                            const ScenarioSet& dev, const ScenarioSet& test,
                                            const std::vector<NamedScenarioSet>& capability_sets);

nlohmann::json report_to_json(const ExperimentReport& report);
// "category,phase,ea" rows; capability rows use "<category>:<set>".
std::string report_to_csv(const ExperimentReport& report);

}  // namespace coco
