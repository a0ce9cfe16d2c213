#include <cmath>
#include <sstream>

#include "coco/errors.hpp"
#include "coco/harness.hpp"
#include "coco/hash.hpp"
#include "coco/rng.hpp"

namespace coco {

using nlohmann::json;

namespace {

json number_or_string(double v) {
  if (std::isfinite(v)) return v;
  return v > 0 ? "inf" : "-inf";
}

bool needs_responses(Selector s) {
  return s == Selector::Coco || s == Selector::Mact || s == Selector::Ne || s == Selector::Le;
}

EditPlan best_enhancement(const WeightStore& weights, const ExperimentConfig& config,
                          const CategorySelection& sel, const ScenarioSet& dev_c, const EvalOptions& eval) {
  if (config.delta_grid.empty()) throw ConfigError("enhancement: empty delta grid");
  std::vector<EditPlan> candidates;
  if (config.selector == Selector::Le) {
    for (double dc : config.delta_grid) {
      for (double dm : config.delta_grid) candidates.push_back(plan_le(sel.primary, sel.mact, dc, dm));
    }
  } else {
    for (double d : config.delta_grid) {
      EditPlan p = plan_ne(sel.primary, d);
      if (p.mode != EditMode::Enhance) throw ConfigError("enhancement deltas must be >= 0");
      candidates.push_back(std::move(p));
    }
  }
  if (candidates.size() == 1 || dev_c.empty()) return candidates.front();
  std::size_t best = 0;
  double best_ea = -1.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const double ea = evaluate_ea(apply_edit(weights, candidates[i]), dev_c, eval);
    if (ea > best_ea) {
      best_ea = ea;
      best = i;
    }
  }
  return candidates[best];
}

json config_echo(const ExperimentConfig& c, const std::string& mode) {
  json fixed = json::object();
  for (const auto& [cat, neurons] : c.fixed_neurons) {
    json arr = json::array();
    for (const auto& n : neurons) arr.push_back(neuron_to_json(n));
    fixed[cat] = arr;
  }
  return json{{"mode", mode},
              {"selector", to_string(c.selector)},
              {"tau", c.tau},
              {"k", c.k_spec},
              {"theta", number_or_string(c.theta)},
              {"dispersion_cap", number_or_string(c.dispersion_cap)},
              {"delta", c.delta_grid},
              {"similarity", to_string(c.similarity)},
              {"seed", c.seed},
              {"length_normalized", c.eval.length_normalized},
              {"category_tau", c.category_tau},
              {"category_k", c.category_k},
              {"fixed_neurons", fixed}};
}

ExperimentReport run_experiment(const WeightStore& weights, const ExperimentConfig& config,
                                const ScenarioSet& dev, const ScenarioSet& test,
                                const std::vector<NamedScenarioSet>& capability_sets, bool enhance) {
  EvalOptions eval = config.eval;
  eval.jobs = config.jobs;

  ExperimentReport report;
  report.mode = enhance ? "enhance" : "deactivate";
  report.model_hash = fingerprint(weights);
  report.config_echo = config_echo(config, report.mode);

  Fnv1a run;
  run.update(report.config_echo.dump());
  run.update(report.model_hash);
  run.update(dev.hash());
  run.update(test.hash());
  for (const auto& [name, set] : capability_sets) {
    run.update(name);
    run.update(set.hash());
  }
  report.run_id = run.hex();

  std::vector<double> capability_before;
  for (const auto& [name, set] : capability_sets) capability_before.push_back(evaluate_ea(weights, set, eval));

  std::vector<std::string> categories = dev.categories();
  for (const auto& c : test.categories()) {
    if (std::find(categories.begin(), categories.end(), c) == categories.end()) categories.push_back(c);
  }
  if (categories.empty()) throw ConfigError("experiment: no scenario items");

  for (const auto& category : categories) {
    const ScenarioSet dev_c = dev.filter_category(category);
    const ScenarioSet test_c = test.filter_category(category);
    if (test_c.empty()) throw ConfigError("missing test split for category '" + category + "'");

    CategorySelection sel = select_for_category(weights, config, category, dev_c);
    CategoryReport cr;
    cr.category = category;
    cr.warnings = std::move(sel.warnings);
    if (enhance) {
      cr.plan = best_enhancement(weights, config, sel, dev_c, eval);
    } else {
      std::vector<NeuronId> all = sel.primary;
      all.insert(all.end(), sel.mact.begin(), sel.mact.end());
      cr.plan = plan_deactivate(std::move(all));
    }
    const WeightStore edited = apply_edit(weights, cr.plan);
    cr.ea_before = evaluate_ea(weights, test_c, eval);
    cr.ea_after = evaluate_ea(edited, test_c, eval);
    if (!dev_c.empty()) {
      cr.dev_ea_before = evaluate_ea(weights, dev_c, eval);
      cr.dev_ea_after = evaluate_ea(edited, dev_c, eval);
    }
    for (std::size_t i = 0; i < capability_sets.size(); ++i) {
      cr.capability.push_back({capability_sets[i].first, capability_before[i],
                               evaluate_ea(edited, capability_sets[i].second, eval)});
    }
    report.categories.push_back(std::move(cr));
  }
  return report;
}

}  // namespace

CategorySelection select_for_category(const WeightStore& weights, const ExperimentConfig& config,
                                      const std::string& category, const ScenarioSet& dev_c) {
  CategorySelection out;
  if (auto it = config.fixed_neurons.find(category); it != config.fixed_neurons.end()) {
    out.primary = it->second;
    return out;
  }
  if (dev_c.empty()) throw ConfigError("no dev items for category '" + category + "'");

  const std::size_t k = config.category_k.count(category) ? config.category_k.at(category)
                                                          : resolve_k(config.k_spec, weights.neuron_count());
  const double tau = config.category_tau.count(category) ? config.category_tau.at(category) : config.tau;

  std::vector<ActivationResponsePair> pairs;
  if (needs_responses(config.selector)) {
    EvalOptions eval = config.eval;
    eval.jobs = config.jobs;
    const Partition part =
        partition_scenarios(weights, dev_c, sub_seed(config.seed, "partition:" + category), eval);
    if (!part.dropped_ids.empty()) {
      out.warnings.push_back("partition subsampled to K = " + std::to_string(part.minus.size()) +
                             "; dropped " + std::to_string(part.dropped_ids.size()) + " items");
    }
    pairs = response_sweep(weights, part.minus_prompts(), part.plus_prompts(), weights.all_neurons(),
                           {.jobs = config.jobs});
  }

  SelectorConfig sel;
  sel.selector = config.selector;
  sel.theta = config.theta;
  sel.k = k;
  sel.dispersion_cap = config.dispersion_cap;
  sel.seed = sub_seed(config.seed, "rand:" + category);

  ScoringConfig sc;
  sc.tau = tau;
  sc.k = k;
  sc.similarity = config.similarity;
  sc.seed = config.seed;

  switch (config.selector) {
    case Selector::Coco:
      out.primary = extract_coco(score_table(pairs, sc, config.jobs), k);
      break;
    case Selector::Rand:
    case Selector::Norm:
    case Selector::Mact: {
      Selection s = select_baseline(weights, pairs, sel);
      out.primary = std::move(s.neurons);
      out.warnings.insert(out.warnings.end(), s.warnings.begin(), s.warnings.end());
      break;
    }
    case Selector::Ne:
      out.primary = select_ne(pairs, sel);
      break;
    case Selector::Le: {
      LeSelection le = select_le(score_table(pairs, sc, config.jobs), pairs, sel);
      out.primary = std::move(le.coco_group);
      out.mact = std::move(le.mact_group);
      for (const auto& n : le.overlap_removed) {
        out.warnings.push_back("LE: " + n.str() + " is in both groups; kept in the COCO group only");
      }
      break;
    }
  }
  return out;
}

ExperimentReport run_deactivation_experiment(const WeightStore& weights, const ExperimentConfig& config,
                                             const ScenarioSet& dev, const ScenarioSet& test,
                                             const std::vector<NamedScenarioSet>& capability_sets) {
  return run_experiment(weights, config, dev, test, capability_sets, false);
}

ExperimentReport run_enhancement_experiment(const WeightStore& weights, const ExperimentConfig& config,
                                            const ScenarioSet& dev, const ScenarioSet& test,
                                            const std::vector<NamedScenarioSet>& capability_sets) {
  return run_experiment(weights, config, dev, test, capability_sets, true);
}

json report_to_json(const ExperimentReport& report) {
  json categories = json::array();
  for (const auto& c : report.categories) {
    json caps = json::array();
    for (const auto& cap : c.capability) {
      caps.push_back({{"name", cap.name}, {"ea_before", cap.ea_before}, {"ea_after", cap.ea_after}});
    }
    categories.push_back({{"category", c.category},
                          {"plan_hash", plan_hash(c.plan)},
                          {"plan", plan_to_json(c.plan)},
                          {"ea_before", c.ea_before},
                          {"ea_after", c.ea_after},
                          {"dev_ea_before", c.dev_ea_before},
                          {"dev_ea_after", c.dev_ea_after},
                          {"capability", caps},
                          {"warnings", c.warnings}});
  }
  json j{{"run_id", report.run_id},
         {"model_hash", report.model_hash},
         {"mode", report.mode},
         {"config", report.config_echo},
         {"categories", categories}};
  j["attention_shift"] = report.attention_shift_ref ? json(*report.attention_shift_ref) : json(nullptr);
  return j;
}

std::string report_to_csv(const ExperimentReport& report) {
  std::ostringstream out;
  out.precision(17);
  out << "category,phase,ea\n";
  for (const auto& c : report.categories) {
    out << c.category << ",before," << c.ea_before << "\n";
    out << c.category << ",after," << c.ea_after << "\n";
    for (const auto& cap : c.capability) {
      out << c.category << ":" << cap.name << ",before," << cap.ea_before << "\n";
      out << c.category << ":" << cap.name << ",after," << cap.ea_after << "\n";
    }
  }
  return out.str();
}

}  // namespace coco
