#include "coco/editing.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <set>

#include "coco/errors.hpp"
#include "coco/hash.hpp"

namespace coco {

using nlohmann::json;

namespace {

std::vector<NeuronId> normalize(std::vector<NeuronId> neurons) {
  std::sort(neurons.begin(), neurons.end());
  neurons.erase(std::unique(neurons.begin(), neurons.end()), neurons.end());
  return neurons;
}

EditMode parse_mode(const std::string& s) {
  if (s == "deactivate") return EditMode::Deactivate;
  if (s == "enhance") return EditMode::Enhance;
  throw FormatError("unknown plan mode '" + s + "'");
}

}  // namespace

const char* to_string(EditMode mode) {
  return mode == EditMode::Deactivate ? "deactivate" : "enhance";
}

bool EditPlan::empty() const { return neuron_count() == 0; }

std::size_t EditPlan::neuron_count() const {
  std::size_t n = 0;
  for (const auto& g : groups) n += g.neurons.size();
  return n;
}

std::vector<NeuronId> EditPlan::neurons() const {
  std::vector<NeuronId> out;
  for (const auto& g : groups) out.insert(out.end(), g.neurons.begin(), g.neurons.end());
  std::sort(out.begin(), out.end());
  return out;
}

void validate_plan(const EditPlan& plan) {
  std::set<NeuronId> seen;
  for (const auto& g : plan.groups) {
    if (!std::isfinite(g.delta) || g.delta < -1.0) {
      throw PlanError("group '" + g.label + "': delta " + std::to_string(g.delta) + " is below -1");
    }
    if (plan.mode == EditMode::Deactivate && g.delta != -1.0) {
      throw PlanError("group '" + g.label + "': deactivate plans require delta = -1");
    }
    if (plan.mode == EditMode::Enhance && g.delta < 0.0) {
      throw PlanError("group '" + g.label + "': enhance plans require delta >= 0");
    }
    for (const auto& n : g.neurons) {
      if (!seen.insert(n).second) {
        throw PlanError("neuron " + n.str() + " appears in more than one group");
      }
    }
  }
}

EditPlan plan_deactivate(std::vector<NeuronId> neurons) {
  EditPlan p;
  p.mode = EditMode::Deactivate;
  p.groups.push_back({"deactivate", normalize(std::move(neurons)), -1.0});
  return p;
}

EditPlan plan_ne(std::vector<NeuronId> neurons, double delta) {
  // Δ = −1 is deactivation, whichever builder produced it.
  if (delta == -1.0) return plan_deactivate(std::move(neurons));
  EditPlan p;
  p.mode = EditMode::Enhance;
  p.groups.push_back({"ne", normalize(std::move(neurons)), delta});
  validate_plan(p);
  return p;
}

EditPlan plan_le(std::vector<NeuronId> coco_group, std::vector<NeuronId> mact_group,
                 double delta_coco, double delta_mact) {
  EditPlan p;
  p.mode = EditMode::Enhance;
  p.groups.push_back({"coco", normalize(std::move(coco_group)), delta_coco});
  p.groups.push_back({"mact", normalize(std::move(mact_group)), delta_mact});
  validate_plan(p);
  return p;
}

EditPlan merge_plans(const std::vector<EditPlan>& plans) {
  EditPlan out;
  if (plans.empty()) return out;
  out.mode = plans.front().mode;
  for (const auto& p : plans) {
    if (p.mode != out.mode) throw PlanError("cannot merge deactivate and enhance plans");
    out.groups.insert(out.groups.end(), p.groups.begin(), p.groups.end());
  }
  validate_plan(out);
  return out;
}

json neuron_to_json(const NeuronId& n) {
  return json{{"layer", n.layer}, {"kind", to_string(n.kind)}, {"col", n.col}};
}

NeuronId neuron_from_json(const json& j) {
  try {
    NeuronId n;
    n.layer = j.at("layer").get<std::uint32_t>();
    n.kind = parse_matrix_kind(j.at("kind").get<std::string>());
    n.col = j.at("col").get<std::uint32_t>();
    return n;
  } catch (const json::exception& e) {
    throw FormatError(std::string("neuron entry: ") + e.what());
  }
}

json plan_to_json(const EditPlan& plan) {
  json groups = json::array();
  for (const auto& g : plan.groups) {
    json neurons = json::array();
    for (const auto& n : g.neurons) neurons.push_back(neuron_to_json(n));
    groups.push_back({{"label", g.label}, {"delta", g.delta}, {"neurons", neurons}});
  }
  return json{{"mode", to_string(plan.mode)}, {"groups", groups}};
}

EditPlan plan_from_json(const json& j) {
  EditPlan p;
  try {
    p.mode = parse_mode(j.at("mode").get<std::string>());
    for (const auto& g : j.at("groups")) {
      EditGroup group;
      group.label = g.at("label").get<std::string>();
      group.delta = g.at("delta").get<double>();
      for (const auto& n : g.at("neurons")) group.neurons.push_back(neuron_from_json(n));
      group.neurons = normalize(std::move(group.neurons));
      p.groups.push_back(std::move(group));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("plan: ") + e.what());
  }
  validate_plan(p);
  return p;
}

void save_plan(const EditPlan& plan, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  out << plan_to_json(plan).dump(2) << "\n";
  if (!out) throw FormatError("failed writing plan to " + path.string());
}

EditPlan load_plan(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open plan " + path.string());
  const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError("plan " + path.string() + ": " + e.what(), static_cast<long long>(e.byte));
  }
  return plan_from_json(j);
}

std::string plan_hash(const EditPlan& plan) {
  Fnv1a h;
  h.update(plan_to_json(plan).dump());
  return h.hex();
}

}  // namespace coco
