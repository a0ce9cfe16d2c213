#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "coco/ablation.hpp"
#include "coco/attn_analysis.hpp"
#include "coco/editing.hpp"
#include "coco/errors.hpp"
#include "coco/fixtures.hpp"
#include "coco/harness.hpp"
#include "coco/scoring.hpp"

namespace py = pybind11;
using namespace coco;

namespace {

py::object to_py(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

nlohmann::json from_py(const py::object& o) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

std::vector<std::vector<double>> rows_of(const Matrix& m) {
  std::vector<std::vector<double>> out(m.rows);
  for (std::size_t r = 0; r < m.rows; ++r) out[r].assign(m.row(r).begin(), m.row(r).end());
  return out;
}

ScoringConfig scoring(double tau, const std::string& similarity) {
  ScoringConfig c;
  c.tau = tau;
  c.similarity = parse_similarity(similarity);
  return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Contrastive neuron scoring and editing for small decoder-only transformers.";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", base);
  py::register_exception<InputError>(m, "InputError", base);
  py::register_exception<AddressError>(m, "AddressError", base);
  py::register_exception<FormatError>(m, "FormatError", base);
  py::register_exception<ConfigError>(m, "ConfigError", base);
  py::register_exception<StalenessError>(m, "StalenessError", base);
  py::register_exception<PlanError>(m, "PlanError", base);
  py::register_exception<EmptySelectionError>(m, "EmptySelectionError", base);
  py::register_exception<PartitionError>(m, "PartitionError", base);

  py::enum_<MatrixKind>(m, "MatrixKind")
      .value("Q", MatrixKind::Q)
      .value("K", MatrixKind::K)
      .value("V", MatrixKind::V);

  py::class_<NeuronId>(m, "NeuronId")
      .def(py::init([](std::uint32_t layer, const std::string& kind, std::uint32_t col) {
             return NeuronId{layer, parse_matrix_kind(kind), col};
           }),
           py::arg("layer"), py::arg("kind"), py::arg("col"))
      .def_readonly("layer", &NeuronId::layer)
      .def_readonly("col", &NeuronId::col)
      .def_property_readonly("kind", [](const NeuronId& n) { return std::string(to_string(n.kind)); })
      .def("__eq__", [](const NeuronId& a, const NeuronId& b) { return a == b; })
      .def("__lt__", [](const NeuronId& a, const NeuronId& b) { return a < b; })
      .def("__hash__", [](const NeuronId& n) { return py::hash(py::make_tuple(n.layer, int(n.kind), n.col)); })
      .def("__str__", &NeuronId::str)
      .def("__repr__", [](const NeuronId& n) { return "NeuronId('" + n.str() + "')"; });

  py::class_<ModelConfig>(m, "ModelConfig")
      .def_static("make", &ModelConfig::make, py::arg("n_layers"), py::arg("n_heads"), py::arg("d_model"),
                  py::arg("vocab_size"), py::arg("max_seq"), py::arg("seed") = 0)
      .def_readonly("n_layers", &ModelConfig::n_layers)
      .def_readonly("n_heads", &ModelConfig::n_heads)
      .def_readonly("d_model", &ModelConfig::d_model)
      .def_readonly("d_head", &ModelConfig::d_head)
      .def_readonly("d_ff", &ModelConfig::d_ff)
      .def_readonly("vocab_size", &ModelConfig::vocab_size)
      .def_readonly("max_seq", &ModelConfig::max_seq)
      .def_readonly("seed", &ModelConfig::seed)
      .def("__eq__", [](const ModelConfig& a, const ModelConfig& b) { return a == b; });

  py::class_<WeightStore>(m, "WeightStore")
      .def_readonly("config", &WeightStore::config)
      .def("neuron_count", &WeightStore::neuron_count)
      .def("all_neurons", &WeightStore::all_neurons)
      .def("fingerprint", [](const WeightStore& w) { return fingerprint(w); })
      .def("column", [](const WeightStore& w, const NeuronId& n) {
        w.check_neuron(n);
        return w.layers[n.layer].projection(n.kind).column(n.col);
      })
      .def("save", [](const WeightStore& w, const std::filesystem::path& dir) { save_model(w, dir); })
      .def_static("load", &load_model)
      .def("__eq__", [](const WeightStore& a, const WeightStore& b) { return a == b; });

  m.def("gen_synthetic", &gen_synthetic, py::arg("config"), py::arg("seed"));
  m.def(
      "forward",
      [](const WeightStore& w, const TokenSeq& tokens, bool attention) {
        const auto trace = forward(w, tokens, {.attention = attention});
        py::dict out;
        out["logits"] = trace.logits;
        if (attention) {
          py::list layers;
          for (const auto& layer : trace.attention) {
            py::list heads;
            for (const auto& a : layer) heads.append(rows_of(a));
            layers.append(heads);
          }
          out["attention"] = layers;
        }
        return out;
      },
      py::arg("weights"), py::arg("tokens"), py::arg("attention") = false);

  py::class_<EditPlan>(m, "EditPlan")
      .def_property_readonly("mode", [](const EditPlan& p) { return std::string(to_string(p.mode)); })
      .def("neurons", &EditPlan::neurons)
      .def("neuron_count", &EditPlan::neuron_count)
      .def("to_json", [](const EditPlan& p) { return to_py(plan_to_json(p)); })
      .def_static("from_json", [](const py::object& o) { return plan_from_json(from_py(o)); })
      .def("hash", [](const EditPlan& p) { return plan_hash(p); })
      .def("__eq__", [](const EditPlan& a, const EditPlan& b) { return a == b; });
  m.def("plan_deactivate", &plan_deactivate, py::arg("neurons"));
  m.def("plan_ne", &plan_ne, py::arg("neurons"), py::arg("delta"));
  m.def("plan_le", &plan_le, py::arg("coco_group"), py::arg("mact_group"), py::arg("delta_coco"),
        py::arg("delta_mact"));
  m.def("apply_edit", &apply_edit, py::arg("weights"), py::arg("plan"));

  py::class_<ActivationResponsePair>(m, "ActivationResponsePair")
      .def(py::init([](const NeuronId& n, std::vector<double> minus, std::vector<double> plus) {
             return ActivationResponsePair{n, std::move(minus), std::move(plus)};
           }),
           py::arg("neuron"), py::arg("a_minus"), py::arg("a_plus"))
      .def_readonly("neuron", &ActivationResponsePair::neuron)
      .def_readonly("a_minus", &ActivationResponsePair::a_minus)
      .def_readonly("a_plus", &ActivationResponsePair::a_plus);
  m.def(
      "activation_response",
      [](const WeightStore& w, const TokenSeq& tokens, const NeuronId& n) {
        return activation_response(w, build_cache(w, tokens), tokens, n);
      },
      py::arg("weights"), py::arg("tokens"), py::arg("neuron"));
  m.def(
      "response_sweep",
      [](const WeightStore& w, const std::vector<TokenSeq>& minus, const std::vector<TokenSeq>& plus,
         std::optional<std::vector<NeuronId>> neurons, std::size_t jobs) {
        py::gil_scoped_release release;
        return response_sweep(w, minus, plus, neurons ? *neurons : w.all_neurons(), {.jobs = jobs});
      },
      py::arg("weights"), py::arg("minus"), py::arg("plus"), py::arg("neurons") = py::none(), py::arg("jobs") = 1);

  m.def(
      "contrastive_loss",
      [](const std::vector<double>& anchor, const std::vector<double>& contrast, double tau,
         const std::string& similarity) { return contrastive_loss(anchor, contrast, scoring(tau, similarity)); },
      py::arg("anchor"), py::arg("contrast"), py::arg("tau"), py::arg("similarity") = "neg-abs");
  m.def(
      "c2_score",
      [](const std::vector<double>& a_minus, const std::vector<double>& a_plus, double tau,
         const std::string& similarity) {
        return c2_score({{}, a_minus, a_plus}, scoring(tau, similarity));
      },
      py::arg("a_minus"), py::arg("a_plus"), py::arg("tau"), py::arg("similarity") = "neg-abs");

  py::class_<C2ScoreTable>(m, "C2ScoreTable")
      .def_property_readonly("entries",
                             [](const C2ScoreTable& t) {
                               std::vector<std::pair<NeuronId, double>> out;
                               for (const auto& e : t.entries) out.emplace_back(e.neuron, e.score);
                               return out;
                             })
      .def("to_json", [](const C2ScoreTable& t) { return to_py(table_to_json(t)); });
  m.def(
      "score_table",
      [](const std::vector<ActivationResponsePair>& pairs, double tau, const std::string& similarity,
         std::size_t jobs) { return score_table(pairs, scoring(tau, similarity), jobs); },
      py::arg("pairs"), py::arg("tau"), py::arg("similarity") = "neg-abs", py::arg("jobs") = 1);
  m.def("extract_coco", &extract_coco, py::arg("table"), py::arg("k"));
  m.def(
      "select_ne",
      [](const std::vector<ActivationResponsePair>& pairs, double theta, std::size_t k) {
        return select_ne(pairs, {.selector = Selector::Ne, .theta = theta, .k = k});
      },
      py::arg("pairs"), py::arg("theta"), py::arg("k"));
  m.def(
      "select_baseline",
      [](const WeightStore& w, const std::vector<ActivationResponsePair>& pairs, const std::string& selector,
         std::size_t k, std::uint64_t seed, double dispersion_cap) {
        return select_baseline(w, pairs,
                               {.selector = parse_selector(selector), .k = k, .dispersion_cap = dispersion_cap,
                                .seed = seed})
            .neurons;
      },
      py::arg("weights"), py::arg("pairs"), py::arg("selector"), py::arg("k"), py::arg("seed") = 0,
      py::arg("dispersion_cap") = std::numeric_limits<double>::infinity());

  py::class_<ScenarioSet>(m, "ScenarioSet")
      .def("__len__", &ScenarioSet::size)
      .def("categories", &ScenarioSet::categories)
      .def("filter_category", &ScenarioSet::filter_category)
      .def("hash", &ScenarioSet::hash)
      .def("prompts",
           [](const ScenarioSet& s) {
             std::vector<TokenSeq> out;
             for (const auto& it : s.items) out.push_back(it.prompt);
             return out;
           })
      .def("to_json", [](const ScenarioSet& s) {
        py::list out;
        for (const auto& it : s.items) out.append(to_py(item_to_json(it)));
        return out;
      });
  m.def("load_scenarios", &load_scenarios, py::arg("path"));
  m.def("parse_scenarios", &parse_scenarios, py::arg("text"));
  m.def("split_dev_test", &split_dev_test, py::arg("set"), py::arg("seed"), py::arg("test_fraction") = 0.3);
  m.def(
      "evaluate_ea",
      [](const WeightStore& w, const ScenarioSet& set, bool length_normalized) {
        return evaluate_ea(w, set, {.length_normalized = length_normalized});
      },
      py::arg("weights"), py::arg("set"), py::arg("length_normalized") = false);
  m.def(
      "partition",
      [](const WeightStore& w, const ScenarioSet& set, std::uint64_t seed) {
        const Partition p = partition_scenarios(w, set, seed);
        return py::make_tuple(p.minus_prompts(), p.plus_prompts());
      },
      py::arg("weights"), py::arg("set"), py::arg("seed"));

  py::class_<PlantedFixture>(m, "PlantedFixture")
      .def_readonly("weights", &PlantedFixture::weights)
      .def_readonly("planted", &PlantedFixture::planted)
      .def_readonly("always_active", &PlantedFixture::always_active)
      .def_readonly("capability", &PlantedFixture::capability)
      .def_readonly("bias", &PlantedFixture::bias)
      .def_readonly("transfer", &PlantedFixture::transfer)
      .def_readonly("capability_set", &PlantedFixture::capability_set);
  m.def("planted_fixture", &make_planted_fixture, py::arg("seed") = 7, py::arg("noise") = 0.02);

  m.def(
      "grid_search",
      [](const WeightStore& w, const ScenarioSet& dev, std::vector<double> tau_grid, std::vector<double> k_grid,
         std::uint64_t seed, std::size_t jobs) {
        PipelineConfig pc;
        pc.tau_grid = std::move(tau_grid);
        pc.k_grid = std::move(k_grid);
        pc.seed = seed;
        pc.jobs = jobs;
        nlohmann::json j;
        {
          py::gil_scoped_release release;
          j = grid_to_json(grid_search_cross(grid_search_intra(w, dev, pc), w, dev, pc));
        }
        return to_py(j);
      },
      py::arg("weights"), py::arg("dev"), py::arg("tau_grid") = std::vector<double>{0.05, 0.1, 0.2, 0.5, 1.0},
      py::arg("k_grid") = std::vector<double>{0.005, 0.01, 0.015, 0.02}, py::arg("seed") = 0, py::arg("jobs") = 1);

  m.def(
      "run_experiment",
      [](const WeightStore& w, const ScenarioSet& dev, const ScenarioSet& test,
         const std::map<std::string, ScenarioSet>& capability, const std::string& mode, const std::string& selector,
         double tau, double k, std::vector<double> delta_grid, double theta, std::uint64_t seed, std::size_t jobs) {
        ExperimentConfig ec;
        ec.selector = parse_selector(selector);
        ec.tau = tau;
        ec.k_spec = k;
        ec.delta_grid = std::move(delta_grid);
        ec.theta = theta;
        ec.seed = seed;
        ec.jobs = jobs;
        std::vector<NamedScenarioSet> caps(capability.begin(), capability.end());
        if (mode != "deactivate" && mode != "enhance") throw ConfigError("mode must be 'deactivate' or 'enhance'");
        nlohmann::json j;
        {
          py::gil_scoped_release release;
          j = report_to_json(mode == "enhance" ? run_enhancement_experiment(w, ec, dev, test, caps)
                                               : run_deactivation_experiment(w, ec, dev, test, caps));
        }
        return to_py(j);
      },
      py::arg("weights"), py::arg("dev"), py::arg("test"), py::arg("capability") = std::map<std::string, ScenarioSet>{},
      py::arg("mode") = "deactivate", py::arg("selector") = "coco", py::arg("tau") = 0.1, py::arg("k") = 0.01,
      py::arg("delta_grid") = std::vector<double>{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0},
      py::arg("theta") = -std::numeric_limits<double>::infinity(), py::arg("seed") = 0, py::arg("jobs") = 1);

  m.def(
      "attention_shift",
      [](const WeightStore& base, const WeightStore& edited, const std::vector<TokenSeq>& scenarios,
         std::size_t top_k, std::size_t jobs) {
        return to_py(shift_to_json(attention_shift(base, edited, scenarios, top_k, jobs)));
      },
      py::arg("base"), py::arg("edited"), py::arg("scenarios"), py::arg("top_k") = 3, py::arg("jobs") = 1);
  m.def(
      "neuron_distribution",
      [](const std::vector<NeuronId>& selected, const ModelConfig& config) {
        return to_py(distribution_to_json(neuron_distribution(selected, config)));
      },
      py::arg("selected"), py::arg("config"));
}
