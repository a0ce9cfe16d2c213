#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "coco/errors.hpp"
#include "coco/fixtures.hpp"
#include "coco/harness.hpp"
#include "../support/oracles.hpp"
#include "../support/paths.hpp"

using namespace coco;

namespace {

ScenarioItem item(std::string id, std::string cat, TokenSeq prompt, std::vector<TokenSeq> options,
                  std::size_t unbiased) {
  ScenarioItem it;
  it.id = std::move(id);
  it.category = std::move(cat);
  it.prompt = std::move(prompt);
  it.options = std::move(options);
  it.unbiased_index = unbiased;
  return it;
}

const PlantedFixture& fixture() {
  static const PlantedFixture fx = make_planted_fixture();
  return fx;
}

ScenarioSet concat(const ScenarioSet& a, const ScenarioSet& b) {
  ScenarioSet out = a;
  out.items.insert(out.items.end(), b.items.begin(), b.items.end());
  return out;
}

}  // namespace

TEST_CASE("evaluate_ea: planted bias set scores 2/3") {
  const auto& fx = fixture();
  CHECK(std::abs(evaluate_ea(fx.weights, fx.bias) - 200.0 / 3.0) <= 1e-12);
  CHECK(evaluate_ea(fx.weights, fx.capability_set) == 100.0);
  CHECK_THROWS_AS(evaluate_ea(fx.weights, ScenarioSet{}), ConfigError);
}

TEST_CASE("evaluate_ea: a flat model always picks option 0") {
  // All-zero weights give identical logits, so every option ties and index 0 wins.
  const WeightStore w = WeightStore::zeros(ModelConfig::make(1, 1, 4, 8, 8));
  ScenarioSet set;
  for (std::size_t i = 0; i < 10; ++i) {
    set.items.push_back(item("i" + std::to_string(i), "c", {1, 2}, {{3}, {4}, {5, 6}}, i % 3 == 0 ? 0 : 1));
  }
  CHECK(evaluate_ea(w, set) == 40.0);
}

TEST_CASE("evaluate_ea: invariant to item order (property)") {
  const auto& fx = fixture();
  ScenarioSet shuffled = fx.bias;
  SplitMix64 rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    for (std::size_t i = shuffled.items.size() - 1; i > 0; --i)
      std::swap(shuffled.items[i], shuffled.items[rng.below(i + 1)]);
    CHECK(evaluate_ea(fx.weights, shuffled) == evaluate_ea(fx.weights, fx.bias));
  }
}

TEST_CASE("option_scores: multi-token options use teacher forcing") {
  const WeightStore w = gen_synthetic(ModelConfig::make(2, 2, 8, 16, 8), 3);
  const ScenarioItem it = item("x", "c", {1, 2}, {{3}, {4, 5}}, 0);
  const auto scores = option_scores(w, it);
  auto log_softmax = [](const std::vector<double>& z, std::size_t t) {
    const double m = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double v : z) s += std::exp(v - m);
    return z[t] - m - std::log(s);
  };
  const double o0 = log_softmax(forward(w, {1, 2}).logits, 3);
  const double o1 = log_softmax(forward(w, {1, 2}).logits, 4) + log_softmax(forward(w, {1, 2, 4}).logits, 5);
  CHECK(std::abs(scores[0] - o0) <= 1e-12);
  CHECK(std::abs(scores[1] - o1) <= 1e-12);
  const auto norm = option_scores(w, it, {.length_normalized = true});
  CHECK(std::abs(norm[1] - o1 / 2.0) <= 1e-12);
}

TEST_CASE("partition_scenarios") {
  const auto& fx = fixture();
  SUBCASE("planted bias set splits 8 / 16, trimmed to K = 8") {
    const Partition p = partition_scenarios(fx.weights, fx.bias, 1);
    CHECK(p.minus.size() == 8);
    CHECK(p.plus.size() == 8);
    CHECK(p.dropped_ids.size() == 8);
    for (const auto& it : p.minus) CHECK(predict(fx.weights, it) != it.unbiased_index);
    for (const auto& it : p.plus) CHECK(predict(fx.weights, it) == it.unbiased_index);
    CHECK(partition_scenarios(fx.weights, fx.bias, 1).plus == p.plus);
  }
  SUBCASE("explicit polarity labels win over predictions") {
    const Partition p = partition_scenarios(fx.weights, fx.transfer, 1);
    CHECK(p.minus.size() == 6);
    CHECK(p.plus.size() == 6);
    for (const auto& it : p.minus) CHECK(it.polarity == Polarity::Biased);
  }
  SUBCASE("one-sided set raises PartitionError") {
    CHECK_THROWS_AS(partition_scenarios(fx.weights, fx.capability_set, 1), PartitionError);
  }
}

TEST_CASE("scenario JSONL parsing") {
  const std::string good =
      R"({"id":"a","category":"c","prompt":[1,2],"options":[[3],[4]],"unbiased_index":1,"polarity":"biased","split":"test"})"
      "\n\n"
      R"({"id":"b","category":"d","prompt":[1],"options":[[3],[4,5]],"unbiased_index":0})"
      "\n";
  const ScenarioSet s = parse_scenarios(good);
  REQUIRE(s.size() == 2);
  CHECK(s.items[0].polarity == Polarity::Biased);
  CHECK(s.items[0].split == Split::Test);
  CHECK(!s.items[1].polarity);
  CHECK(s.categories() == std::vector<std::string>{"c", "d"});

  auto error_line = [](const std::string& text) {
    try {
      parse_scenarios(text);
    } catch (const FormatError& e) {
      return e.offset();
    }
    return -1LL;
  };
  const std::string line1 = R"({"id":"a","category":"c","prompt":[1],"options":[[3],[4]],"unbiased_index":0})";
  CHECK(error_line(line1 + "\n{broken") == 2);
  CHECK(error_line(R"({"id":"a","category":"c","prompt":[1],"options":[[3]],"unbiased_index":0})") == 1);
  CHECK(error_line(R"({"id":"a","category":"c","prompt":[1],"options":[[3],[4]],"unbiased_index":2})") == 1);
  CHECK(error_line(R"({"id":"a","category":"c","prompt":[],"options":[[3],[4]],"unbiased_index":0})") == 1);
  CHECK(error_line(R"({"id":"a","category":"c","prompt":[1],"options":[[3],[4]],"unbiased_index":0,"split":"val"})") == 1);
  CHECK(error_line(line1 + "\n" + line1) == 2);
  CHECK_THROWS_AS(load_scenarios(test_paths::scratch("jsonl") / "none.jsonl"), FormatError);
}

TEST_CASE("scenario save/load round trip") {
  const auto& fx = fixture();
  const ScenarioSet all = concat(fx.bias, fx.transfer);
  const auto path = test_paths::scratch("scenarios") / "all.jsonl";
  save_scenarios(all, path);
  const ScenarioSet back = load_scenarios(path);
  CHECK(back.items == all.items);
  CHECK(back.hash() == all.hash());
}

TEST_CASE("split_dev_test") {
  const auto& fx = fixture();
  ScenarioSet set = concat(fx.bias, fx.transfer);
  set.items[0].split = Split::Dev;
  set.items[1].split = Split::Test;
  const auto [dev, test] = split_dev_test(set, 5);
  CHECK(dev.size() + test.size() == set.size());
  std::set<std::string> ids;
  for (const auto& it : dev.items) ids.insert(it.id);
  for (const auto& it : test.items) CHECK(ids.insert(it.id).second);
  CHECK(dev.filter_category("alpha").items.front().id == set.items[0].id);
  CHECK(std::any_of(test.items.begin(), test.items.end(), [&](const auto& i) { return i.id == set.items[1].id; }));
  // alpha: 22 unassigned → round(6.6) = 7 extra test items; beta: round(3.6) = 4.
  CHECK(test.filter_category("alpha").size() == 8);
  CHECK(test.filter_category("beta").size() == 4);
  CHECK(split_dev_test(set, 5).second.items == test.items);
  CHECK_THROWS_AS(split_dev_test(set, 5, 1.5), ConfigError);
}

TEST_CASE("resolve_k") {
  CHECK(resolve_k(0.01, 1000) == 10);
  CHECK(resolve_k(0.0001, 1000) == 1);
  CHECK(resolve_k(3, 1000) == 3);
  CHECK_THROWS_AS(resolve_k(2.5, 1000), ConfigError);
  CHECK_THROWS_AS(resolve_k(0.0, 1000), ConfigError);
  CHECK_THROWS_AS(resolve_k(2000, 1000), ConfigError);
}

TEST_CASE("grid_search_intra: single cell equals its direct computation") {
  const auto& fx = fixture();
  PipelineConfig pc;
  pc.tau_grid = {0.1};
  pc.k_grid = {1};
  pc.seed = 9;
  const auto r = grid_search_intra(fx.weights, fx.bias, pc);
  REQUIRE(r.intra.size() == 1);
  const auto& best = r.intra[0];
  CHECK(best.neurons == std::vector<NeuronId>{fx.planted});
  CHECK(std::abs(best.ea_orig - 200.0 / 3.0) <= 1e-12);
  CHECK(best.ea_deact == 0.0);
  CHECK(best.margin == best.ea_orig);
  CHECK(best.cells.size() == 1);
}

TEST_CASE("grid_search_intra: 2×2 pick matches exhaustive independent recomputation") {
  const auto& fx = fixture();
  PipelineConfig pc;
  pc.tau_grid = {0.1, 1.0};
  pc.k_grid = {1, 2};
  pc.seed = 4;
  const auto r = grid_search_intra(fx.weights, fx.bias, pc);
  REQUIRE(r.intra.size() == 1);

  // Independent path: single-neuron responses from two full forward passes,
  // the loss from explicit exponentials, selection by linear scan.
  const auto part = partition_scenarios(fx.weights, fx.bias, sub_seed(pc.seed, "partition:alpha"));
  const auto neurons = fx.weights.all_neurons();
  std::vector<std::vector<double>> minus(neurons.size()), plus(neurons.size());
  for (std::size_t n = 0; n < neurons.size(); ++n) {
    for (const auto& t : part.minus_prompts()) minus[n].push_back(oracle::full_forward_response(fx.weights, t, neurons[n]));
    for (const auto& t : part.plus_prompts()) plus[n].push_back(oracle::full_forward_response(fx.weights, t, neurons[n]));
  }
  const double ea0 = evaluate_ea(fx.weights, fx.bias);
  double best_margin = -1e300;
  double best_tau = 0;
  std::size_t best_k = 0;
  std::size_t cell = 0;
  for (double tau : pc.tau_grid) {
    std::vector<double> score(neurons.size());
    for (std::size_t n = 0; n < neurons.size(); ++n) {
      score[n] = (oracle::direct_loss(plus[n], minus[n], tau, true) + oracle::direct_loss(minus[n], plus[n], tau, true)) / 2;
    }
    for (double k : pc.k_grid) {
      const auto idx = oracle::select_by_scan(neurons.size(), static_cast<std::size_t>(k), [&](auto i, auto j) {
        return score[i] < score[j] || (score[i] == score[j] && neurons[i] < neurons[j]);
      });
      std::vector<NeuronId> sel;
      for (auto i : idx) sel.push_back(neurons[i]);
      const double margin = ea0 - evaluate_ea(apply_edit(fx.weights, plan_deactivate(sel)), fx.bias);
      CHECK(std::abs(r.intra[0].cells[cell].margin - margin) <= 1e-9);
      ++cell;
      if (margin > best_margin + 1e-9) {
        best_margin = margin;
        best_tau = tau;
        best_k = static_cast<std::size_t>(k);
      }
    }
  }
  CHECK(r.intra[0].tau == best_tau);
  CHECK(r.intra[0].k == best_k);
  CHECK(std::abs(r.intra[0].margin - best_margin) <= 1e-9);
}

TEST_CASE("grid_search_cross") {
  const auto& fx = fixture();
  PipelineConfig pc;
  pc.tau_grid = {0.1};
  pc.k_grid = {1};
  pc.seed = 2;

  SUBCASE("one category reduces to intra") {
    const auto intra = grid_search_intra(fx.weights, fx.bias, pc);
    const auto cross = grid_search_cross(intra, fx.weights, fx.bias, pc);
    REQUIRE(cross.cross.size() == 1);
    CHECK(cross.cross[0].source == "alpha");
    CHECK(cross.cross[0].margin == intra.intra[0].margin);
    CHECK(cross.cross[0].neurons == intra.intra[0].neurons);
  }
  SUBCASE("planted transfer: beta borrows alpha's neuron") {
    const ScenarioSet dev = concat(fx.bias, fx.transfer);
    const auto intra = grid_search_intra(fx.weights, dev, pc);
    const auto cross = grid_search_cross(intra, fx.weights, dev, pc);
    const auto* beta_intra = cross.find_intra("beta");
    const auto* beta_cross = cross.find_cross("beta");
    REQUIRE(beta_intra);
    REQUIRE(beta_cross);
    CHECK(beta_intra->neurons != std::vector<NeuronId>{fx.planted});
    CHECK(beta_cross->source == "alpha");
    CHECK(beta_cross->neurons == std::vector<NeuronId>{fx.planted});
    CHECK(beta_cross->margin == 100.0);
    for (const auto& c : cross.cross) CHECK(c.margin >= cross.find_intra(c.target)->margin);
  }
  SUBCASE("ties keep the first source in category order") {
    // A copy of alpha under another name selects the same neurons with the same margins.
    ScenarioSet twin = fx.bias;
    for (auto& it : twin.items) {
      it.category = "alpha2";
      it.id += "-twin";
    }
    const ScenarioSet dev = concat(fx.bias, twin);
    const auto cross = grid_search_cross(grid_search_intra(fx.weights, dev, pc), fx.weights, dev, pc);
    CHECK(cross.find_cross("alpha")->source == "alpha");
    CHECK(cross.find_cross("alpha2")->source == "alpha");
  }
  SUBCASE("one-sided category is skipped with a warning") {
    const ScenarioSet dev = concat(fx.bias, fx.capability_set);
    const auto intra = grid_search_intra(fx.weights, dev, pc);
    CHECK(intra.intra.size() == 1);
    CHECK(intra.warnings.size() == 1);
  }
  CHECK_THROWS_AS(grid_search_intra(fx.weights, fx.bias, PipelineConfig{.tau_grid = {}}), ConfigError);
}

TEST_CASE("experiments") {
  const auto& fx = fixture();
  auto [dev, test] = split_dev_test(fx.bias, 3);
  const std::vector<NamedScenarioSet> caps{{"capability", fx.capability_set}};

  SUBCASE("deactivating the planted neuron collapses EA and spares capability") {
    ExperimentConfig ec;
    ec.tau = 0.1;
    ec.k_spec = 1;
    ec.seed = 3;
    const auto rep = run_deactivation_experiment(fx.weights, ec, dev, test, caps);
    REQUIRE(rep.categories.size() == 1);
    const auto& c = rep.categories[0];
    CHECK(c.plan == plan_deactivate({fx.planted}));
    CHECK(c.ea_before > 0.0);
    CHECK(c.dev_ea_before - c.dev_ea_after >= 50.0);
    CHECK(c.ea_after == 0.0);
    REQUIRE(c.capability.size() == 1);
    CHECK(std::abs(c.capability[0].ea_after - c.capability[0].ea_before) < 5.0);
    CHECK(rep.mode == "deactivate");
    CHECK(report_to_json(rep) == report_to_json(run_deactivation_experiment(fx.weights, ec, dev, test, caps)));
    const std::string csv = report_to_csv(rep);
    CHECK(csv.rfind("category,phase,ea\n", 0) == 0);
    CHECK(csv.find("alpha:capability") != std::string::npos);
  }
  SUBCASE("an empty fixed plan leaves EA unchanged") {
    ExperimentConfig ec;
    ec.fixed_neurons["alpha"] = {};
    const auto rep = run_deactivation_experiment(fx.weights, ec, dev, test, caps);
    CHECK(rep.categories[0].ea_after == rep.categories[0].ea_before);
    CHECK(rep.categories[0].dev_ea_after == rep.categories[0].dev_ea_before);
  }
  SUBCASE("enhancement with Δ = 0 is the identity") {
    ExperimentConfig ec;
    ec.selector = Selector::Norm;
    ec.k_spec = 4;
    ec.delta_grid = {0.0};
    const auto rep = run_enhancement_experiment(fx.weights, ec, dev, test, caps);
    CHECK(rep.mode == "enhance");
    CHECK(rep.categories[0].ea_after == rep.categories[0].ea_before);
    CHECK(rep.categories[0].capability[0].ea_after == rep.categories[0].capability[0].ea_before);
  }
  SUBCASE("enhancing the planted neuron repairs the biased items") {
    ExperimentConfig ec;
    ec.selector = Selector::Ne;
    ec.k_spec = 1;
    ec.delta_grid = {0.5, 1.0, 2.0};
    const auto rep = run_enhancement_experiment(fx.weights, ec, dev, test, caps);
    const auto& c = rep.categories[0];
    REQUIRE(c.plan.groups.size() == 1);
    CHECK(c.plan.groups[0].neurons == std::vector<NeuronId>{fx.planted});
    CHECK(c.dev_ea_after >= c.dev_ea_before);
  }
  SUBCASE("a category without test items is a config error") {
    ScenarioSet extra = dev;
    for (const auto& it : fx.transfer.items) extra.items.push_back(it);
    CHECK_THROWS_AS(run_deactivation_experiment(fx.weights, ExperimentConfig{}, extra, test, caps), ConfigError);
  }
}

TEST_CASE("golden: EA of the committed planted scenario file") {
  const auto path = test_paths::source_dir() / "tests/data/planted_alpha.jsonl";
  if (std::getenv("COCO_REGEN_GOLDEN")) save_scenarios(fixture().bias, path);
  const ScenarioSet set = load_scenarios(path);
  CHECK(set.items == fixture().bias.items);
  CHECK(std::abs(evaluate_ea(fixture().weights, set) - 200.0 / 3.0) <= 1e-12);
}
