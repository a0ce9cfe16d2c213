#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "coco/model.hpp"
#include <json.hpp>

namespace coco {

enum class EditMode { Deactivate, Enhance };

const char* to_string(EditMode mode);

struct EditGroup {
  std::string label;
  std::vector<NeuronId> neurons;  // sorted, unique
  double delta = 0.0;             // column ← column · (1 + delta)

  bool operator==(const EditGroup&) const = default;
};

// A set of neuron groups, each scaled by its own factor. Groups are pairwise
// disjoint; deactivate plans carry delta = −1 on every group.
struct EditPlan {
  EditMode mode = EditMode::Enhance;
  std::vector<EditGroup> groups;

  bool empty() const;
  std::size_t neuron_count() const;
  std::vector<NeuronId> neurons() const;

  bool operator==(const EditPlan&) const = default;
};

// Structural checks: delta ≥ −1, disjoint groups, deactivate ⇒ delta = −1,
// enhance ⇒ delta ≥ 0. Throws PlanError.
void validate_plan(const EditPlan& plan);

EditPlan plan_deactivate(std::vector<NeuronId> neurons);
EditPlan plan_ne(std::vector<NeuronId> neurons, double delta);
EditPlan plan_le(std::vector<NeuronId> coco_group, std::vector<NeuronId> mact_group,
                 double delta_coco, double delta_mact);

// Concatenates the groups of several plans. The result must still be disjoint.
EditPlan merge_plans(const std::vector<EditPlan>& plans);

nlohmann::json plan_to_json(const EditPlan& plan);
// Throws FormatError on schema problems and PlanError on invalid values.
EditPlan plan_from_json(const nlohmann::json& j);

void save_plan(const EditPlan& plan, const std::filesystem::path& path);
EditPlan load_plan(const std::filesystem::path& path);

std::string plan_hash(const EditPlan& plan);

nlohmann::json neuron_to_json(const NeuronId& n);
NeuronId neuron_from_json(const nlohmann::json& j);

}  // namespace coco
