// coco-forge: command-line front end for the neuron scoring and editing pipeline.
//
// Every command reads a JSON config (--config) and lets flags override it; the
// config keys are the long flag names. Outputs go under --out (or
// $COCO_FORGE_OUT) together with run_manifest.json.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "coco/attn_analysis.hpp"
#include "coco/errors.hpp"
#include "coco/fixtures.hpp"
#include "coco/harness.hpp"
#include "coco/hash.hpp"
#include "coco/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace coco;

namespace {

enum class Kind { Str, StrList, Num, NumList, Int, Flag };

struct OptionSpec {
  const char* name;
  Kind kind;
  const char* help;
};

const std::vector<OptionSpec> kOptions = {
    {"model", Kind::Str, "model directory (manifest.json + tensors.bin)"},
    {"scenarios", Kind::StrList, "bias scenario files (JSONL)"},
    {"capability", Kind::StrList, "capability scenario files (JSONL), named by file stem"},
    {"tau", Kind::NumList, "temperature value(s)"},
    {"k", Kind::NumList, "neuron count(s); values below 1 are fractions of all MHA neurons"},
    {"delta", Kind::NumList, "enhancement strength grid"},
    {"selector", Kind::Str, "coco | rand | norm | mact | ne | le"},
    {"seed", Kind::Int, "run seed"},
    {"jobs", Kind::Int, "worker threads (outputs do not depend on it)"},
    {"theta", Kind::Num, "disparity threshold for NE and LE"},
    {"dispersion-cap", Kind::Num, "MACT consistency cap"},
    {"similarity", Kind::Str, "neg-abs | literal-abs"},
    {"length-norm", Kind::Flag, "length-normalise option log-likelihoods"},
    {"test-fraction", Kind::Num, "held-out share per category for items without a split"},
    {"plan", Kind::Str, "edit plan JSON"},
    {"top-k", Kind::Int, "heads to detail in the attention report"},
    {"layers", Kind::Int, "gen-model: layers"},
    {"heads", Kind::Int, "gen-model: heads"},
    {"dmodel", Kind::Int, "gen-model: residual width"},
    {"vocab", Kind::Int, "gen-model: vocabulary size"},
    {"max-seq", Kind::Int, "gen-model: maximum sequence length"},
    {"planted", Kind::Flag, "gen-model: write the planted-neuron fixture and its scenario files"},
};

const OptionSpec& spec_of(const std::string& name) {
  for (const auto& o : kOptions)
    if (name == o.name) return o;
  throw ConfigError("unknown option '" + name + "'");
}

double to_number(const std::string& key, const std::string& s) {
  if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("--" + key + ": '" + s + "' is not a number");
  }
}

// Raw flag values collected by CLI11, merged over the config file afterwards.
struct Command {
  std::string name;
  CLI::App* app = nullptr;
  std::string config_path;
  std::string out;
  std::map<std::string, std::vector<std::string>> raw;
  std::map<std::string, bool> flags;
  std::map<std::string, CLI::Option*> opts;

  void add(const std::string& key) {
    const OptionSpec& s = spec_of(key);
    if (s.kind == Kind::Flag) {
      flags[key] = false;
      opts[key] = app->add_flag("--" + key, flags[key], s.help);
    } else {
      auto* o = app->add_option("--" + key, raw[key], s.help);
      if (s.kind != Kind::StrList && s.kind != Kind::NumList) o->expected(1);
      opts[key] = o;
    }
  }
};

// The effective configuration: file values first, flags on top.
class Settings {
 public:
  Settings(const Command& cmd) {
    if (!cmd.config_path.empty()) {
      std::ifstream in(cmd.config_path);
      if (!in) throw FormatError("cannot open config " + cmd.config_path);
      try {
        cfg_ = json::parse(in);
      } catch (const json::parse_error& e) {
        throw FormatError("config " + cmd.config_path + ": " + e.what(), static_cast<long long>(e.byte));
      }
      if (!cfg_.is_object()) throw ConfigError("config must be a JSON object");
      for (const auto& [key, value] : cfg_.items()) {
        if (!cmd.opts.count(key)) throw ConfigError("config key '" + key + "' does not apply to " + cmd.name);
      }
    }
    for (const auto& [key, values] : cmd.raw) {
      if (cmd.opts.at(key)->count() == 0) continue;
      const Kind kind = spec_of(key).kind;
      if (kind == Kind::Str) cfg_[key] = values.at(0);
      else if (kind == Kind::StrList) cfg_[key] = values;
      else if (kind == Kind::Num || kind == Kind::Int) cfg_[key] = to_number(key, values.at(0));
      else {
        json arr = json::array();
        for (const auto& v : values) arr.push_back(to_number(key, v));
        cfg_[key] = arr;
      }
    }
    for (const auto& [key, on] : cmd.flags) {
      if (cmd.opts.at(key)->count() > 0) cfg_[key] = on;
    }
  }

  bool has(const std::string& key) const { return cfg_.contains(key); }

  std::string str(const std::string& key, const std::string& fallback = {}) const {
    if (!has(key)) return fallback;
    if (!cfg_[key].is_string()) throw ConfigError("'" + key + "' must be a string");
    return cfg_[key].get<std::string>();
  }
  std::string require_str(const std::string& key) const {
    if (!has(key)) throw ConfigError("missing required --" + key);
    return str(key);
  }
  std::vector<std::string> strs(const std::string& key) const {
    if (!has(key)) return {};
    if (cfg_[key].is_string()) return {cfg_[key].get<std::string>()};
    try {
      return cfg_[key].get<std::vector<std::string>>();
    } catch (const json::exception&) {
      throw ConfigError("'" + key + "' must be a string or list of strings");
    }
  }
  double num(const std::string& key, double fallback) const {
    if (!has(key)) return fallback;
    return as_number(key, cfg_[key]);
  }
  std::vector<double> nums(const std::string& key, std::vector<double> fallback) const {
    if (!has(key)) return fallback;
    if (!cfg_[key].is_array()) return {as_number(key, cfg_[key])};
    std::vector<double> out;
    for (const auto& v : cfg_[key]) out.push_back(as_number(key, v));
    if (out.empty()) throw ConfigError("'" + key + "' must not be empty");
    return out;
  }
  std::uint64_t integer(const std::string& key, std::uint64_t fallback) const {
    const double v = num(key, static_cast<double>(fallback));
    if (!(v >= 0) || v != std::floor(v) || v > 9.007199254740992e15) {
      throw ConfigError("'" + key + "' must be a nonnegative integer");
    }
    return static_cast<std::uint64_t>(v);
  }
  bool flag(const std::string& key) const {
    if (!has(key)) return false;
    if (!cfg_[key].is_boolean()) throw ConfigError("'" + key + "' must be true or false");
    return cfg_[key].get<bool>();
  }

  // Echo for the manifest: jobs never changes results, so it is left out.
  json echo() const {
    json e = cfg_;
    e.erase("jobs");
    return e;
  }

 private:
  static double as_number(const std::string& key, const json& v) {
    if (v.is_number()) return v.get<double>();
    if (v.is_string()) return to_number(key, v.get<std::string>());
    throw ConfigError("'" + key + "' must be a number");
  }

  json cfg_ = json::object();
};

std::string file_hash(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  Fnv1a h;
  h.update(buf.str());
  return h.hex();
}

// Tracks inputs and outputs for run_manifest.json.
class Run {
 public:
  Run(std::string command, const Settings& s, fs::path out) : command_(std::move(command)), settings_(s), out_(std::move(out)) {
    fs::create_directories(out_);
  }

  const fs::path& out() const { return out_; }

  void input(const fs::path& p) {
    if (fs::is_directory(p)) {
      for (const char* f : {"manifest.json", "tensors.bin"}) input(p / f);
      return;
    }
    if (!fs::exists(p)) throw FormatError("input not found: " + p.string());
    inputs_.push_back({{"path", p.generic_string()}, {"fnv1a", file_hash(p)}});
  }

  void write_text(const std::string& rel, const std::string& text) {
    const fs::path p = out_ / rel;
    fs::create_directories(p.parent_path());
    std::ofstream o(p, std::ios::binary);
    o << text;
    if (!o) throw FormatError("failed writing " + p.string());
    outputs_.push_back(rel);
  }
  void write_json(const std::string& rel, const json& j) { write_text(rel, j.dump(2) + "\n"); }
  void record(const std::string& rel) { outputs_.push_back(rel); }

  void finish() {
    std::sort(outputs_.begin(), outputs_.end());
    json outs = json::array();
    for (const auto& rel : outputs_) outs.push_back({{"file", rel}, {"fnv1a", file_hash(out_ / rel)}});
    const json manifest{{"tool", "coco-forge"},
                        {"command", command_},
                        {"config", settings_.echo()},
                        {"inputs", inputs_},
                        {"outputs", outs}};
    std::ofstream o(out_ / "run_manifest.json", std::ios::binary);
    o << manifest.dump(2) << "\n";
  }

 private:
  std::string command_;
  const Settings& settings_;
  fs::path out_;
  json inputs_ = json::array();
  std::vector<std::string> outputs_;
};

fs::path out_dir(const Command& cmd) {
  if (!cmd.out.empty()) return cmd.out;
  if (const char* env = std::getenv("COCO_FORGE_OUT"); env && *env) return env;
  return "coco_out";
}

std::string safe_name(const std::string& s) {
  std::string out;
  for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
  return out;
}

WeightStore load_model_input(Run& run, const Settings& s) {
  const fs::path p = s.require_str("model");
  run.input(p);
  return load_model(p);
}

ScenarioSet load_bias(Run& run, const Settings& s) {
  const auto paths = s.strs("scenarios");
  if (paths.empty()) throw ConfigError("missing required --scenarios");
  ScenarioSet all;
  std::set<std::string> ids;
  for (const auto& p : paths) {
    run.input(p);
    for (auto& item : load_scenarios(p).items) {
      if (!ids.insert(item.id).second) throw FormatError("duplicate scenario id '" + item.id + "' across files");
      all.items.push_back(std::move(item));
    }
  }
  return all;
}

std::vector<NamedScenarioSet> load_capability(Run& run, const Settings& s) {
  std::vector<NamedScenarioSet> out;
  for (const auto& p : s.strs("capability")) {
    run.input(p);
    out.emplace_back(fs::path(p).stem().string(), load_scenarios(p));
  }
  return out;
}

EvalOptions eval_options(const Settings& s) {
  return {.length_normalized = s.flag("length-norm"), .jobs = s.integer("jobs", 1)};
}

std::uint64_t seed_of(const Settings& s) { return s.integer("seed", 0); }
std::size_t jobs_of(const Settings& s) {
  const auto j = s.integer("jobs", 1);
  if (j < 1) throw ConfigError("--jobs must be >= 1");
  return j;
}

double single(const Settings& s, const std::string& key, double fallback) {
  const auto v = s.nums(key, {fallback});
  if (v.size() != 1) throw ConfigError("--" + key + " takes one value for this command");
  return v[0];
}

// With `grids` set, --tau and --k may list several values and the first is used.
ExperimentConfig experiment_config(const Settings& s, bool grids = false) {
  ExperimentConfig ec;
  ec.selector = parse_selector(s.str("selector", "coco"));
  ec.tau = grids ? s.nums("tau", {0.1}).front() : single(s, "tau", 0.1);
  ec.k_spec = grids ? s.nums("k", {0.01}).front() : single(s, "k", 0.01);
  ec.theta = s.num("theta", ec.theta);
  ec.dispersion_cap = s.num("dispersion-cap", ec.dispersion_cap);
  ec.delta_grid = s.nums("delta", ec.delta_grid);
  ec.similarity = parse_similarity(s.str("similarity", "neg-abs"));
  ec.seed = seed_of(s);
  ec.eval = eval_options(s);
  ec.jobs = jobs_of(s);
  return ec;
}

PipelineConfig pipeline_config(const Settings& s) {
  PipelineConfig pc;
  pc.tau_grid = s.nums("tau", pc.tau_grid);
  pc.k_grid = s.nums("k", pc.k_grid);
  pc.similarity = parse_similarity(s.str("similarity", "neg-abs"));
  pc.seed = seed_of(s);
  pc.eval = eval_options(s);
  pc.jobs = jobs_of(s);
  return pc;
}

std::pair<ScenarioSet, ScenarioSet> dev_test(const ScenarioSet& set, const Settings& s) {
  return split_dev_test(set, seed_of(s), s.num("test-fraction", 0.3));
}

// ---------------------------------------------------------------------------

void cmd_gen_model(Run& run, const Settings& s) {
  if (s.flag("planted")) {
    const PlantedFixture fx = make_planted_fixture(seed_of(s) ? seed_of(s) : 7);
    save_model(fx.weights, run.out() / "model");
    run.record("model/manifest.json");
    run.record("model/tensors.bin");
    for (const auto& [name, set] : {std::pair<std::string, const ScenarioSet*>{"bias", &fx.bias},
                                    {"transfer", &fx.transfer},
                                    {"capability", &fx.capability_set}}) {
      const std::string rel = "scenarios/" + name + ".jsonl";
      fs::create_directories(run.out() / "scenarios");
      save_scenarios(*set, run.out() / rel);
      run.record(rel);
    }
    run.write_json("planted.json", {{"planted", neuron_to_json(fx.planted)},
                                    {"always_active", neuron_to_json(fx.always_active)},
                                    {"capability", neuron_to_json(fx.capability)}});
    return;
  }
  const ModelConfig c = ModelConfig::make(s.integer("layers", 4), s.integer("heads", 4), s.integer("dmodel", 32),
                                          s.integer("vocab", 64), s.integer("max-seq", 32), seed_of(s));
  save_model(gen_synthetic(c, seed_of(s)), run.out() / "model");
  run.record("model/manifest.json");
  run.record("model/tensors.bin");
}

void cmd_score(Run& run, const Settings& s) {
  const WeightStore w = load_model_input(run, s);
  const auto [dev, test] = dev_test(load_bias(run, s), s);
  PipelineConfig pc = pipeline_config(s);
  ScoringConfig sc;
  sc.tau = single(s, "tau", 0.1);
  sc.k = resolve_k(single(s, "k", 0.01), w.neuron_count());
  sc.similarity = pc.similarity;
  sc.seed = pc.seed;
  json summary = json::array();
  for (const auto& cat : dev.categories()) {
    const CategoryResponses r = category_responses(w, dev.filter_category(cat), cat, pc);
    const C2ScoreTable table = score_table(r.pairs, sc, pc.jobs);
    const std::string rel = "scores/" + safe_name(cat) + ".json";
    run.write_json(rel, table_to_json(table));
    json lowest = json::array();
    for (const auto& n : extract_coco(table, sc.k)) lowest.push_back(neuron_to_json(n));
    summary.push_back({{"category", cat}, {"K", r.partition.minus.size()}, {"table", rel}, {"lowest", lowest}});
  }
  run.write_json("scores/summary.json", summary);
}

void cmd_extract(Run& run, const Settings& s) {
  const WeightStore w = load_model_input(run, s);
  const auto [dev, test] = dev_test(load_bias(run, s), s);
  const ExperimentConfig ec = experiment_config(s);
  json summary = json::array();
  for (const auto& cat : dev.categories()) {
    const CategorySelection sel = select_for_category(w, ec, cat, dev.filter_category(cat));
    std::vector<NeuronId> all = sel.primary;
    all.insert(all.end(), sel.mact.begin(), sel.mact.end());
    const EditPlan plan = ec.selector == Selector::Le && !sel.mact.empty()
                              ? plan_le(sel.primary, sel.mact, -1.0, -1.0)
                              : plan_deactivate(all);
    const std::string rel = "plans/" + safe_name(cat) + ".json";
    run.write_json(rel, plan_to_json(plan));
    summary.push_back({{"category", cat}, {"plan", rel}, {"plan_hash", plan_hash(plan)},
                       {"neurons", plan_to_json(plan)["groups"]}, {"warnings", sel.warnings}});
  }
  run.write_json("selection.json", summary);
}

void write_report(Run& run, const std::string& stem, const ExperimentReport& rep) {
  run.write_json(stem + ".json", report_to_json(rep));
  run.write_text(stem + ".csv", report_to_csv(rep));
  for (const auto& c : rep.categories) {
    run.write_json("plans/" + stem + "_" + safe_name(c.category) + ".json", plan_to_json(c.plan));
  }
}

void cmd_experiment(Run& run, const Settings& s, bool enhance) {
  const WeightStore w = load_model_input(run, s);
  const auto [dev, test] = dev_test(load_bias(run, s), s);
  const auto caps = load_capability(run, s);
  ExperimentConfig ec = experiment_config(s);
  if (s.has("plan")) {
    run.input(s.str("plan"));
    const EditPlan fixed = load_plan(s.str("plan"));
    for (const auto& cat : dev.categories()) ec.fixed_neurons[cat] = fixed.neurons();
    for (const auto& cat : test.categories()) ec.fixed_neurons[cat] = fixed.neurons();
  }
  const ExperimentReport rep = enhance ? run_enhancement_experiment(w, ec, dev, test, caps)
                                       : run_deactivation_experiment(w, ec, dev, test, caps);
  write_report(run, enhance ? "enhance" : "deactivate", rep);
}

void cmd_gridsearch(Run& run, const Settings& s) {
  const WeightStore w = load_model_input(run, s);
  const auto [dev, test] = dev_test(load_bias(run, s), s);
  const PipelineConfig pc = pipeline_config(s);
  const GridSearchResult r = grid_search_cross(grid_search_intra(w, dev, pc), w, dev, pc);
  run.write_json("grid.json", grid_to_json(r));
  for (const auto& c : r.cross) {
    run.write_json("plans/cross_" + safe_name(c.target) + ".json", plan_to_json(plan_deactivate(c.neurons)));
  }
}

std::vector<TokenSeq> prompts(const ScenarioSet& set) {
  std::vector<TokenSeq> out;
  for (const auto& it : set.items) out.push_back(it.prompt);
  return out;
}

void attention_outputs(Run& run, const WeightStore& w, const EditPlan& plan, const ScenarioSet& set,
                       std::size_t top_k, std::size_t jobs) {
  const AttentionShiftReport r = attention_shift(w, apply_edit(w, plan), prompts(set), top_k, jobs);
  for (const auto& f : write_shift_outputs(r, run.out() / "attn")) run.record("attn/" + f);
  json tails = json::array();
  for (const auto& t : head_tail_stat(r)) {
    tails.push_back({{"layer", t.layer}, {"head", t.head}, {"seq_len", t.seq_len},
                     {"first_col_mean", t.first_col_mean}, {"last_col_mean", t.last_col_mean},
                     {"trade_off", t.trade_off}});
  }
  run.write_json("attn/head_tail.json", tails);
  const NeuronDistribution d = neuron_distribution(plan.neurons(), w.config);
  run.write_json("attn/distribution.json", distribution_to_json(d));
  run.write_text("attn/distribution.csv", distribution_to_csv(d));
}

void cmd_attn_shift(Run& run, const Settings& s) {
  const WeightStore w = load_model_input(run, s);
  const ScenarioSet set = load_bias(run, s);
  run.input(s.require_str("plan"));
  const EditPlan plan = load_plan(s.str("plan"));
  attention_outputs(run, w, plan, set, s.integer("top-k", 3), jobs_of(s));
}

// Grid search on dev, cross-category pick, deactivation and enhancement on
// test, then the attention analysis of the union of deactivated neurons.
void cmd_report(Run& run, const Settings& s) {
  const WeightStore w = load_model_input(run, s);
  const auto [dev, test] = dev_test(load_bias(run, s), s);
  const auto caps = load_capability(run, s);
  const PipelineConfig pc = pipeline_config(s);

  const GridSearchResult grid = grid_search_cross(grid_search_intra(w, dev, pc), w, dev, pc);
  run.write_json("grid.json", grid_to_json(grid));

  ExperimentConfig ec = experiment_config(s, true);
  std::vector<std::string> warnings = grid.warnings;
  for (const auto& c : grid.intra) {
    ec.category_tau[c.category] = c.tau;
    ec.category_k[c.category] = c.k;
  }
  ExperimentConfig deact = ec;
  std::vector<std::string> categories = dev.categories();
  for (const auto& c : test.categories())
    if (std::find(categories.begin(), categories.end(), c) == categories.end()) categories.push_back(c);
  for (const auto& cat : categories) {
    if (const CrossEntry* x = grid.find_cross(cat)) {
      deact.fixed_neurons[cat] = x->neurons;
    } else {
      deact.fixed_neurons[cat] = {};
      warnings.push_back("category '" + cat + "' has no grid-search result; left unedited");
    }
  }
  ExperimentReport d = run_deactivation_experiment(w, deact, dev, test, caps);

  std::set<NeuronId> edited;
  for (const auto& c : d.categories)
    for (const auto& n : c.plan.neurons()) edited.insert(n);
  const EditPlan union_plan = plan_deactivate({edited.begin(), edited.end()});
  attention_outputs(run, w, union_plan, test, s.integer("top-k", 3), jobs_of(s));
  d.attention_shift_ref = "attn/attn_shift.json";
  write_report(run, "deactivate", d);

  ExperimentConfig enh = ec;
  for (const auto& cat : categories)
    if (!grid.find_intra(cat)) enh.fixed_neurons[cat] = {};
  const ExperimentReport e = run_enhancement_experiment(w, enh, dev, test, caps);
  write_report(run, "enhance", e);

  run.write_json("report.json", {{"model_hash", fingerprint(w)},
                                 {"grid", grid_to_json(grid)},
                                 {"deactivate", report_to_json(d)},
                                 {"enhance", report_to_json(e)},
                                 {"warnings", warnings}});
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const EmptySelectionError*>(&e) || dynamic_cast<const PartitionError*>(&e)) return 4;
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const PlanError*>(&e)) return 2;
  if (dynamic_cast<const Error*>(&e)) return 3;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"coco-forge: contrastive neuron scoring and editing for small transformers"};
  app.require_subcommand(1);

  using Handler = void (*)(Run&, const Settings&);
  struct Entry {
    const char* name;
    const char* help;
    std::vector<std::string> keys;
    Handler handler;
  };
  const std::vector<std::string> common{"seed", "jobs"};
  const std::vector<std::string> data{"model", "scenarios", "test-fraction", "length-norm"};
  const std::vector<std::string> select{"selector", "tau", "k", "theta", "dispersion-cap", "similarity"};
  auto join = [](std::initializer_list<std::vector<std::string>> parts) {
    std::vector<std::string> out;
    for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
    return out;
  };
  const std::vector<Entry> entries{
      {"gen-model", "write a synthetic (or planted-fixture) model",
       join({common, {"layers", "heads", "dmodel", "vocab", "max-seq", "planted"}}), cmd_gen_model},
      {"score", "C2 score table per category", join({common, data, {"tau", "k", "similarity"}}), cmd_score},
      {"extract", "select neurons per category and write plans", join({common, data, select}), cmd_extract},
      {"deactivate", "deactivation experiment on held-out items",
       join({common, data, select, {"capability", "plan"}}), nullptr},
      {"enhance", "enhancement experiment with a searched delta",
       join({common, data, select, {"capability", "plan", "delta"}}), nullptr},
      {"gridsearch", "intra- and cross-category (tau, k) search",
       join({common, data, {"tau", "k", "similarity"}}), cmd_gridsearch},
      {"attn-shift", "attention shift of an edit plan", join({common, {"model", "scenarios", "plan", "top-k"}}),
       cmd_attn_shift},
      {"report", "full pipeline: grid search, deactivation, enhancement, attention analysis",
       join({common, data, select, {"capability", "delta", "top-k"}}), cmd_report},
  };

  std::vector<Command> commands(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Command& c = commands[i];
    c.name = entries[i].name;
    c.app = app.add_subcommand(entries[i].name, entries[i].help);
    c.app->add_option("--config", c.config_path, "JSON config; flags override its keys");
    c.app->add_option("--out", c.out, "output directory (default $COCO_FORGE_OUT, then ./coco_out)");
    for (const auto& key : entries[i].keys) c.add(key);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (!commands[i].app->parsed()) continue;
    try {
      const Settings settings(commands[i]);
      Run run(entries[i].name, settings, out_dir(commands[i]));
      if (commands[i].name == "deactivate") cmd_experiment(run, settings, false);
      else if (commands[i].name == "enhance") cmd_experiment(run, settings, true);
      else entries[i].handler(run, settings);
      run.finish();
      std::cout << "wrote " << run.out().string() << "/run_manifest.json\n";
      return 0;
    } catch (const std::exception& e) {
      std::cerr << "coco-forge " << entries[i].name << ": " << e.what() << "\n";
      return exit_code_for(e);
    }
  }
  return 2;
}
