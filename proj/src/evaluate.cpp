#include <algorithm>
#include <cmath>

#include "coco/errors.hpp"
#include "coco/harness.hpp"
#include "coco/parallel.hpp"
#include "coco/rng.hpp"

namespace coco {

namespace {

double log_softmax_at(std::span<const double> logits, std::size_t index) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - mx);
  return logits[index] - mx - std::log(sum);
}

std::vector<TokenSeq> prompts_of(const std::vector<ScenarioItem>& items) {
  std::vector<TokenSeq> out;
  out.reserve(items.size());
  for (const auto& item : items) out.push_back(item.prompt);
  return out;
}

}  // namespace

std::vector<double> option_scores(const WeightStore& weights, const ScenarioItem& item,
                                  const EvalOptions& options) {
  std::vector<double> scores;
  scores.reserve(item.options.size());
  for (const auto& option : item.options) {
    if (option.empty()) throw InputError("item '" + item.id + "' has an empty option");
    // Teacher forcing: the option's last token is predicted, never fed.
    TokenSeq seq = item.prompt;
    seq.insert(seq.end(), option.begin(), option.end() - 1);
    for (auto t : option) {
      if (t >= weights.config.vocab_size) {
        throw InputError("item '" + item.id + "': option token " + std::to_string(t) +
                         " is outside the vocabulary");
      }
    }
    double total = 0.0;
    if (option.size() == 1) {
      const ForwardTrace trace = forward(weights, seq);
      total = log_softmax_at(trace.logits, option[0]);
    } else {
      const ForwardTrace trace = forward(weights, seq, {.all_logits = true});
      const Matrix& logits = *trace.all_logits;
      const std::size_t first = item.prompt.size() - 1;
      for (std::size_t t = 0; t < option.size(); ++t) {
        total += log_softmax_at(logits.row(first + t), option[t]);
      }
    }
    if (options.length_normalized) total /= static_cast<double>(option.size());
    scores.push_back(total);
  }
  return scores;
}

std::size_t predict(const WeightStore& weights, const ScenarioItem& item, const EvalOptions& options) {
  const auto scores = option_scores(weights, item, options);
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

double evaluate_ea(const WeightStore& weights, const ScenarioSet& set, const EvalOptions& options) {
  if (set.empty()) throw ConfigError("evaluate_ea: empty scenario set");
  std::vector<char> correct(set.size(), 0);
  parallel_for(set.size(), options.jobs, [&](std::size_t i) {
    correct[i] = predict(weights, set.items[i], options) == set.items[i].unbiased_index ? 1 : 0;
  });
  const auto hits = std::count(correct.begin(), correct.end(), 1);
  return 100.0 * static_cast<double>(hits) / static_cast<double>(set.size());
}

std::vector<TokenSeq> Partition::minus_prompts() const { return prompts_of(minus); }
std::vector<TokenSeq> Partition::plus_prompts() const { return prompts_of(plus); }

Partition partition_scenarios(const WeightStore& weights, const ScenarioSet& set, std::uint64_t seed,
                              const EvalOptions& options) {
  std::vector<char> biased(set.size(), 0);
  parallel_for(set.size(), options.jobs, [&](std::size_t i) {
    const auto& item = set.items[i];
    if (item.polarity) {
      biased[i] = *item.polarity == Polarity::Biased ? 1 : 0;
    } else {
      biased[i] = predict(weights, item, options) != item.unbiased_index ? 1 : 0;
    }
  });
  Partition p;
  for (std::size_t i = 0; i < set.size(); ++i) {
    (biased[i] ? p.minus : p.plus).push_back(set.items[i]);
  }
  if (p.minus.empty() || p.plus.empty()) {
    throw PartitionError("partition: " + std::to_string(p.minus.size()) + " biased and " +
                         std::to_string(p.plus.size()) + " unbiased items; both sides must be nonempty");
  }
  auto trim = [&](std::vector<ScenarioItem>& larger, std::size_t k, std::string_view label) {
    std::vector<ScenarioItem> kept;
    const auto keep = subsample_indices(larger.size(), k, sub_seed(seed, label));
    std::size_t next = 0;
    for (std::size_t i = 0; i < larger.size(); ++i) {
      if (next < keep.size() && keep[next] == i) {
        kept.push_back(larger[i]);
        ++next;
      } else {
        p.dropped_ids.push_back(larger[i].id);
      }
    }
    larger = std::move(kept);
  };
  const std::size_t k = std::min(p.minus.size(), p.plus.size());
  if (p.minus.size() > k) trim(p.minus, k, "partition:minus");
  if (p.plus.size() > k) trim(p.plus, k, "partition:plus");
  return p;
}

std::size_t resolve_k(double k_spec, std::size_t neuron_count) {
  if (!(k_spec > 0.0) || !std::isfinite(k_spec)) throw ConfigError("k must be > 0");
  std::size_t k = 0;
  if (k_spec < 1.0) {
    k = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(k_spec * static_cast<double>(neuron_count))));
  } else {
    if (k_spec != std::floor(k_spec)) throw ConfigError("k counts >= 1 must be integers");
    k = static_cast<std::size_t>(k_spec);
  }
  if (k > neuron_count) {
    throw ConfigError("k = " + std::to_string(k) + " exceeds the " + std::to_string(neuron_count) +
                      " neurons in the model");
  }
  return k;
}

}  // namespace coco
