#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "coco/errors.hpp"
#include "coco/harness.hpp"
#include "coco/hash.hpp"
#include "coco/rng.hpp"

namespace coco {

using nlohmann::json;

namespace {

ScenarioItem item_from_json(const json& j, long long line) {
  ScenarioItem item;
  try {
    item.id = j.at("id").get<std::string>();
    item.category = j.at("category").get<std::string>();
    item.prompt = j.at("prompt").get<TokenSeq>();
    item.options = j.at("options").get<std::vector<TokenSeq>>();
    item.unbiased_index = j.at("unbiased_index").get<std::size_t>();
    if (j.contains("polarity") && !j.at("polarity").is_null()) {
      const auto p = j.at("polarity").get<std::string>();
      if (p == "biased") {
        item.polarity = Polarity::Biased;
      } else if (p == "unbiased") {
        item.polarity = Polarity::Unbiased;
      } else {
        throw FormatError("item '" + item.id + "': polarity must be 'biased' or 'unbiased'", line);
      }
    }
    if (j.contains("split") && !j.at("split").is_null()) {
      const auto s = j.at("split").get<std::string>();
      if (s == "dev") {
        item.split = Split::Dev;
      } else if (s == "test") {
        item.split = Split::Test;
      } else {
        throw FormatError("item '" + item.id + "': split must be 'dev' or 'test'", line);
      }
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("scenario item: ") + e.what(), line);
  }
  if (item.prompt.empty()) throw FormatError("item '" + item.id + "': empty prompt", line);
  if (item.options.size() < 2) throw FormatError("item '" + item.id + "': needs at least 2 options", line);
  for (const auto& o : item.options) {
    if (o.empty()) throw FormatError("item '" + item.id + "': empty option", line);
  }
  if (item.unbiased_index >= item.options.size()) {
    throw FormatError("item '" + item.id + "': unbiased_index out of range", line);
  }
  return item;
}

}  // namespace

std::vector<std::string> ScenarioSet::categories() const {
  std::vector<std::string> out;
  for (const auto& item : items) {
    if (std::find(out.begin(), out.end(), item.category) == out.end()) out.push_back(item.category);
  }
  return out;
}

ScenarioSet ScenarioSet::filter_category(const std::string& category) const {
  ScenarioSet out;
  for (const auto& item : items) {
    if (item.category == category) out.items.push_back(item);
  }
  return out;
}

std::string ScenarioSet::hash() const {
  Fnv1a h;
  for (const auto& item : items) {
    h.update(item_to_json(item).dump());
    h.update("\n");
  }
  return h.hex();
}

json item_to_json(const ScenarioItem& item) {
  json j{{"id", item.id},
         {"category", item.category},
         {"prompt", item.prompt},
         {"options", item.options},
         {"unbiased_index", item.unbiased_index}};
  if (item.polarity) j["polarity"] = *item.polarity == Polarity::Biased ? "biased" : "unbiased";
  if (item.split) j["split"] = *item.split == Split::Dev ? "dev" : "test";
  return j;
}

ScenarioSet parse_scenarios(const std::string& text) {
  ScenarioSet set;
  std::set<std::string> ids;
  std::istringstream in(text);
  std::string line;
  long long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw FormatError("scenario line " + std::to_string(line_no) + ": " + e.what(), line_no);
    }
    ScenarioItem item = item_from_json(j, line_no);
    if (!ids.insert(item.id).second) {
      throw FormatError("duplicate scenario id '" + item.id + "'", line_no);
    }
    set.items.push_back(std::move(item));
  }
  return set;
}

ScenarioSet load_scenarios(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open scenario file " + path.string());
  return parse_scenarios({std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()});
}

void save_scenarios(const ScenarioSet& set, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  for (const auto& item : set.items) out << item_to_json(item).dump() << "\n";
  if (!out) throw FormatError("failed writing " + path.string());
}

std::pair<ScenarioSet, ScenarioSet> split_dev_test(const ScenarioSet& set, std::uint64_t seed,
                                                   double test_fraction) {
  if (!(test_fraction >= 0.0 && test_fraction <= 1.0)) {
    throw ConfigError("test fraction must lie in [0, 1]");
  }
  std::set<std::string> test_ids;
  for (const auto& category : set.categories()) {
    std::vector<std::string> unassigned;
    for (const auto& item : set.items) {
      if (item.category != category) continue;
      if (item.split == Split::Test) test_ids.insert(item.id);
      if (!item.split) unassigned.push_back(item.id);
    }
    const auto n_test = static_cast<std::size_t>(
        std::llround(test_fraction * static_cast<double>(unassigned.size())));
    for (std::size_t i : subsample_indices(unassigned.size(), n_test, sub_seed(seed, "split:" + category))) {
      test_ids.insert(unassigned[i]);
    }
  }
  std::pair<ScenarioSet, ScenarioSet> out;
  for (const auto& item : set.items) {
    (test_ids.count(item.id) ? out.second : out.first).items.push_back(item);
  }
  return out;
}

}  // namespace coco
