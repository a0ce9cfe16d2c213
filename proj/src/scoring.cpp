#include "coco/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "coco/editing.hpp"
#include "coco/errors.hpp"
#include "coco/parallel.hpp"

namespace coco {

using nlohmann::json;

namespace {

// log(1 + e^x) without overflow.
double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double mean(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += x;
  return acc / static_cast<double>(v.size());
}

// Sort by descending key, then ascending NeuronId.
template <typename Key>
void sort_desc(std::vector<std::pair<Key, NeuronId>>& v) {
  std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
}

std::vector<NeuronId> mact_rank(const std::vector<ActivationResponsePair>& pairs, double cap,
                                std::size_t k, bool use_cap) {
  std::vector<std::pair<double, NeuronId>> ranked;
  for (const auto& p : pairs) {
    if (use_cap && !(consistency(p.a_minus) <= cap)) continue;
    ranked.emplace_back(mean(p.a_minus), p.neuron);
  }
  sort_desc(ranked);
  std::vector<NeuronId> out;
  for (std::size_t i = 0; i < ranked.size() && i < k; ++i) out.push_back(ranked[i].second);
  return out;
}

Selection select_mact(const std::vector<ActivationResponsePair>& pairs, const SelectorConfig& config) {
  if (pairs.empty()) throw ConfigError("MACT selection needs activation response pairs");
  Selection sel;
  sel.neurons = mact_rank(pairs, config.dispersion_cap, config.k, true);
  if (sel.neurons.empty()) {
    sel.fallback = true;
    sel.warnings.push_back("MACT: no neuron has dispersion <= " + std::to_string(config.dispersion_cap) +
                           "; ranking all neurons by mean biased response");
    sel.neurons = mact_rank(pairs, config.dispersion_cap, config.k, false);
  }
  return sel;
}

}  // namespace

const char* to_string(Similarity s) { return s == Similarity::NegAbs ? "neg-abs" : "literal-abs"; }

Similarity parse_similarity(const std::string& s) {
  if (s == "neg-abs") return Similarity::NegAbs;
  if (s == "literal-abs") return Similarity::LiteralAbs;
  throw ConfigError("unknown similarity convention '" + s + "'");
}

const char* to_string(Selector s) {
  switch (s) {
    case Selector::Coco: return "coco";
    case Selector::Rand: return "rand";
    case Selector::Norm: return "norm";
    case Selector::Mact: return "mact";
    case Selector::Ne: return "ne";
    case Selector::Le: return "le";
  }
  return "?";
}

Selector parse_selector(const std::string& s) {
  for (auto sel : {Selector::Coco, Selector::Rand, Selector::Norm, Selector::Mact, Selector::Ne,
                   Selector::Le}) {
    if (s == to_string(sel)) return sel;
  }
  throw ConfigError("unknown selector '" + s + "' (expected coco, rand, norm, mact, le or ne)");
}

void ScoringConfig::validate() const {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("tau must be a finite value > 0");
  if (k < 1) throw ConfigError("k must be >= 1");
}

double abs_stat(double a, std::span<const double> ref) {
  if (ref.empty()) throw ConfigError("abs_stat: empty reference set");
  double acc = 0.0;
  for (double r : ref) acc += std::abs(a - r);
  return acc / static_cast<double>(ref.size());
}

double contrastive_loss(std::span<const double> anchor_set, std::span<const double> contrast_set,
                        const ScoringConfig& config) {
  config.validate();
  const std::size_t k = anchor_set.size();
  if (k < 2 || contrast_set.size() != k) {
    throw ConfigError("contrastive_loss: need |anchor| = |contrast| = K >= 2 (got " +
                      std::to_string(k) + " and " + std::to_string(contrast_set.size()) + ")");
  }
  const double sign = config.similarity == Similarity::NegAbs ? -1.0 : 1.0;
  std::vector<double> rest;
  rest.reserve(k - 1);
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    rest.clear();
    for (std::size_t j = 0; j < k; ++j) {
      if (j != i) rest.push_back(anchor_set[j]);
    }
    const double s_intra = sign * abs_stat(anchor_set[i], rest) / config.tau;
    const double s_inter = sign * abs_stat(anchor_set[i], contrast_set) / config.tau;
    total += softplus(s_inter - s_intra);
  }
  return total / static_cast<double>(k);
}

double c2_score(const ActivationResponsePair& pair, const ScoringConfig& config) {
  const double forward = contrastive_loss(pair.a_plus, pair.a_minus, config);
  const double backward = contrastive_loss(pair.a_minus, pair.a_plus, config);
  return (forward + backward) / 2.0;
}

C2ScoreTable score_table(const std::vector<ActivationResponsePair>& pairs, const ScoringConfig& config,
                         std::size_t jobs) {
  config.validate();
  C2ScoreTable table;
  table.config = config;
  table.provenance = pairs_provenance(pairs);
  table.entries.resize(pairs.size());
  parallel_for(pairs.size(), jobs, [&](std::size_t i) {
    table.entries[i] = {pairs[i].neuron, c2_score(pairs[i], config)};
  });
  return table;
}

std::vector<NeuronId> extract_coco(const C2ScoreTable& table, std::size_t k) {
  if (k > table.entries.size()) {
    throw ConfigError("extract_coco: k = " + std::to_string(k) + " exceeds table size " +
                      std::to_string(table.entries.size()));
  }
  std::vector<ScoreEntry> sorted = table.entries;
  std::sort(sorted.begin(), sorted.end(), [](const ScoreEntry& a, const ScoreEntry& b) {
    if (a.score != b.score) return a.score < b.score;
    return a.neuron < b.neuron;
  });
  std::vector<NeuronId> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back(sorted[i].neuron);
  return out;
}

double disparity(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw ConfigError("disparity: empty input");
  return std::abs(mean(a) - mean(b));
}

double consistency(std::span<const double> a) {
  if (a.empty()) throw ConfigError("consistency: empty input");
  const double m = mean(a);
  double acc = 0.0;
  for (double x : a) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(a.size()));
}

Selection select_baseline(const WeightStore& weights, const std::vector<ActivationResponsePair>& pairs,
                          const SelectorConfig& config) {
  if (config.k < 1) throw ConfigError("selector k must be >= 1");
  switch (config.selector) {
    case Selector::Rand: {
      const auto all = weights.all_neurons();
      if (config.k > all.size()) throw ConfigError("RAND: k exceeds neuron count");
      Selection sel;
      for (std::size_t i : subsample_indices(all.size(), config.k, config.seed)) {
        sel.neurons.push_back(all[i]);
      }
      return sel;
    }
    case Selector::Norm: {
      const auto all = weights.all_neurons();
      if (config.k > all.size()) throw ConfigError("NORM: k exceeds neuron count");
      std::vector<std::pair<double, NeuronId>> ranked;
      ranked.reserve(all.size());
      for (const auto& n : all) {
        ranked.emplace_back(l2_norm(weights.layers[n.layer].projection(n.kind).column(n.col)), n);
      }
      sort_desc(ranked);
      Selection sel;
      for (std::size_t i = 0; i < config.k; ++i) sel.neurons.push_back(ranked[i].second);
      return sel;
    }
    case Selector::Mact:
      return select_mact(pairs, config);
    default:
      throw ConfigError(std::string("select_baseline does not handle selector ") +
                        to_string(config.selector));
  }
}

LeSelection select_le(const C2ScoreTable& table, const std::vector<ActivationResponsePair>& pairs,
                      const SelectorConfig& config) {
  std::map<NeuronId, const ActivationResponsePair*> by_neuron;
  for (const auto& p : pairs) by_neuron[p.neuron] = &p;

  LeSelection out;
  for (const auto& n : extract_coco(table, std::min(config.k, table.entries.size()))) {
    auto it = by_neuron.find(n);
    if (it == by_neuron.end()) throw ConfigError("select_le: no responses for " + n.str());
    if (disparity(it->second->a_minus, it->second->a_plus) > config.theta) out.coco_group.push_back(n);
  }
  if (out.coco_group.empty()) {
    throw EmptySelectionError("LE: threshold theta = " + std::to_string(config.theta) +
                              " excludes every COCO neuron");
  }
  const Selection mact = select_mact(pairs, config);
  for (const auto& n : mact.neurons) {
    if (std::find(out.coco_group.begin(), out.coco_group.end(), n) != out.coco_group.end()) {
      out.overlap_removed.push_back(n);
    } else {
      out.mact_group.push_back(n);
    }
  }
  return out;
}

std::vector<NeuronId> select_ne(const std::vector<ActivationResponsePair>& pairs,
                                const SelectorConfig& config) {
  if (config.k < 1) throw ConfigError("selector k must be >= 1");
  std::vector<std::pair<double, NeuronId>> ranked;
  for (const auto& p : pairs) {
    const double d = disparity(p.a_minus, p.a_plus);
    if (d > config.theta) ranked.emplace_back(d, p.neuron);
  }
  if (ranked.empty()) {
    throw EmptySelectionError("NE: threshold theta = " + std::to_string(config.theta) +
                              " excludes every neuron");
  }
  sort_desc(ranked);
  std::vector<NeuronId> out;
  for (std::size_t i = 0; i < ranked.size() && i < config.k; ++i) out.push_back(ranked[i].second);
  return out;
}

json table_to_json(const C2ScoreTable& table) {
  json entries = json::array();
  for (const auto& e : table.entries) {
    json j = neuron_to_json(e.neuron);
    j["score"] = e.score;
    entries.push_back(std::move(j));
  }
  return json{{"config",
               {{"tau", table.config.tau},
                {"k", table.config.k},
                {"similarity_convention", to_string(table.config.similarity)},
                {"seed", table.config.seed}}},
              {"entries", entries},
              {"provenance", table.provenance}};
}

C2ScoreTable table_from_json(const json& j) {
  C2ScoreTable t;
  try {
    const json& c = j.at("config");
    t.config.tau = c.at("tau").get<double>();
    t.config.k = c.at("k").get<std::size_t>();
    t.config.similarity = parse_similarity(c.at("similarity_convention").get<std::string>());
    t.config.seed = c.value("seed", std::uint64_t{0});
    for (const auto& e : j.at("entries")) {
      t.entries.push_back({neuron_from_json(e), e.at("score").get<double>()});
    }
    t.provenance = j.value("provenance", "");
  } catch (const json::exception& e) {
    throw FormatError(std::string("score table: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("score table: ") + e.what());
  }
  return t;
}

}  // namespace coco
