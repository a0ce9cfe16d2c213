#include <map>

#include "coco/errors.hpp"
#include "coco/harness.hpp"
#include "coco/rng.hpp"

namespace coco {

using nlohmann::json;

namespace {

json neurons_json(const std::vector<NeuronId>& neurons) {
  json out = json::array();
  for (const auto& n : neurons) out.push_back(neuron_to_json(n));
  return out;
}

// EA after deactivating `neurons`, memoised on the (sorted) neuron set.
class DeactivationEvaluator {
 public:
  DeactivationEvaluator(const WeightStore& weights, const ScenarioSet& set, const EvalOptions& eval)
      : weights_(weights), set_(set), eval_(eval) {}

  double operator()(const std::vector<NeuronId>& neurons) {
    const EditPlan plan = plan_deactivate(neurons);
    const auto key = plan.neurons();
    if (auto it = memo_.find(key); it != memo_.end()) return it->second;
    const double ea = evaluate_ea(apply_edit(weights_, plan), set_, eval_);
    memo_.emplace(key, ea);
    return ea;
  }

 private:
  const WeightStore& weights_;
  const ScenarioSet& set_;
  EvalOptions eval_;
  std::map<std::vector<NeuronId>, double> memo_;
};

}  // namespace

const CategoryBest* GridSearchResult::find_intra(const std::string& category) const {
  for (const auto& c : intra) {
    if (c.category == category) return &c;
  }
  return nullptr;
}

const CrossEntry* GridSearchResult::find_cross(const std::string& target) const {
  for (const auto& c : cross) {
    if (c.target == target) return &c;
  }
  return nullptr;
}

CategoryResponses category_responses(const WeightStore& weights, const ScenarioSet& dev_category,
                                     const std::string& category, const PipelineConfig& config) {
  CategoryResponses out;
  out.category = category;
  EvalOptions eval = config.eval;
  eval.jobs = config.jobs;
  out.ea_orig = evaluate_ea(weights, dev_category, eval);
  out.partition = partition_scenarios(weights, dev_category, sub_seed(config.seed, "partition:" + category),
                                      eval);
  out.pairs = response_sweep(weights, out.partition.minus_prompts(), out.partition.plus_prompts(),
                             weights.all_neurons(), {.jobs = config.jobs});
  return out;
}

GridSearchResult grid_search_intra(const WeightStore& weights, const ScenarioSet& dev,
                                   const PipelineConfig& config) {
  if (config.tau_grid.empty() || config.k_grid.empty()) throw ConfigError("grid search: empty grid");
  EvalOptions eval = config.eval;
  eval.jobs = config.jobs;

  GridSearchResult result;
  for (const auto& category : dev.categories()) {
    const ScenarioSet dev_c = dev.filter_category(category);
    CategoryResponses responses;
    try {
      responses = category_responses(weights, dev_c, category, config);
    } catch (const PartitionError& e) {
      result.warnings.push_back("category '" + category + "' skipped: " + e.what());
      continue;
    }

    DeactivationEvaluator deactivated_ea(weights, dev_c, eval);
    CategoryBest best;
    best.category = category;
    best.ea_orig = responses.ea_orig;
    bool have_best = false;
    for (double tau : config.tau_grid) {
      ScoringConfig sc;
      sc.tau = tau;
      sc.similarity = config.similarity;
      sc.seed = config.seed;
      const C2ScoreTable table = score_table(responses.pairs, sc, config.jobs);
      for (double k_spec : config.k_grid) {
        GridCell cell;
        cell.tau = tau;
        cell.k_spec = k_spec;
        cell.k = resolve_k(k_spec, weights.neuron_count());
        cell.neurons = extract_coco(table, cell.k);
        cell.ea_deact = deactivated_ea(cell.neurons);
        cell.margin = responses.ea_orig - cell.ea_deact;
        if (!have_best || cell.margin > best.margin) {
          have_best = true;
          best.tau = cell.tau;
          best.k_spec = cell.k_spec;
          best.k = cell.k;
          best.ea_deact = cell.ea_deact;
          best.margin = cell.margin;
          best.neurons = cell.neurons;
        }
        best.cells.push_back(std::move(cell));
      }
    }
    result.intra.push_back(std::move(best));
  }
  return result;
}

GridSearchResult grid_search_cross(const GridSearchResult& intra, const WeightStore& weights,
                                   const ScenarioSet& dev, const PipelineConfig& config) {
  EvalOptions eval = config.eval;
  eval.jobs = config.jobs;
  GridSearchResult result = intra;
  result.cross.clear();
  for (const auto& target : intra.intra) {
    const ScenarioSet dev_t = dev.filter_category(target.category);
    if (dev_t.empty()) {
      throw ConfigError("cross-category search: no dev items for '" + target.category + "'");
    }
    DeactivationEvaluator deactivated_ea(weights, dev_t, eval);
    const double ea_orig = evaluate_ea(weights, dev_t, eval);
    CrossEntry best;
    bool have_best = false;
    for (const auto& source : intra.intra) {
      const double ea = deactivated_ea(source.neurons);
      const double margin = ea_orig - ea;
      if (!have_best || margin > best.margin) {
        have_best = true;
        best = CrossEntry{target.category, source.category, source.tau, source.k,
                          ea_orig,         ea,              margin,      source.neurons};
      }
    }
    result.cross.push_back(std::move(best));
  }
  return result;
}

json grid_to_json(const GridSearchResult& result) {
  json intra = json::array();
  for (const auto& c : result.intra) {
    json cells = json::array();
    for (const auto& cell : c.cells) {
      cells.push_back({{"tau", cell.tau},
                       {"k_spec", cell.k_spec},
                       {"k", cell.k},
                       {"ea_deact", cell.ea_deact},
                       {"margin", cell.margin}});
    }
    intra.push_back({{"category", c.category},
                     {"tau", c.tau},
                     {"k_spec", c.k_spec},
                     {"k", c.k},
                     {"ea_orig", c.ea_orig},
                     {"ea_deact", c.ea_deact},
                     {"margin", c.margin},
                     {"neurons", neurons_json(c.neurons)},
                     {"cells", cells}});
  }
  json cross = json::array();
  for (const auto& c : result.cross) {
    cross.push_back({{"target", c.target},
                     {"source", c.source},
                     {"tau", c.tau},
                     {"k", c.k},
                     {"ea_orig", c.ea_orig},
                     {"ea_deact", c.ea_deact},
                     {"margin", c.margin},
                     {"neurons", neurons_json(c.neurons)}});
  }
  return json{{"intra", intra}, {"cross", cross}, {"warnings", result.warnings}};
}

}  // namespace coco
