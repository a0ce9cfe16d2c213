#include "coco/ablation.hpp"

#include <algorithm>
#include <numeric>

#include "coco/errors.hpp"
#include "coco/hash.hpp"
#include "coco/parallel.hpp"
#include "coco/rng.hpp"

namespace coco {

namespace {

LayerInputCache build_cache_unchecked(const WeightStore& weights, const TokenSeq& tokens,
                                      std::string fp) {
  LayerInputCache cache;
  cache.weights_fingerprint = std::move(fp);
  cache.tokens = tokens;
  cache.hidden = forward(weights, tokens, {.hidden = true}).hidden;
  return cache;
}

LayerWeights ablated_layer(const WeightStore& weights, const NeuronId& neuron) {
  LayerWeights layer = weights.layers[neuron.layer];
  Matrix& m = layer.projection(neuron.kind);
  for (std::size_t r = 0; r < m.rows; ++r) m(r, neuron.col) = 0.0;
  return layer;
}

double response_from_cache(const LayerWeights& ablated, const ModelConfig& config,
                           const LayerInputCache& cache, std::size_t layer) {
  const LayerOutput out = forward_layer(ablated, config, cache.hidden[layer]);
  const std::size_t last = out.h_out.rows - 1;
  return l2_dist(out.h_out.row(last), cache.hidden[layer + 1].row(last));
}

}  // namespace

LayerInputCache build_cache(const WeightStore& weights, const TokenSeq& tokens) {
  return build_cache_unchecked(weights, tokens, fingerprint(weights));
}

double activation_response(const WeightStore& weights, const LayerInputCache& cache,
                           const TokenSeq& scenario, const NeuronId& neuron) {
  weights.check_neuron(neuron);
  if (cache.tokens != scenario) {
    throw StalenessError("layer cache was built for a different scenario");
  }
  if (cache.weights_fingerprint != fingerprint(weights)) {
    throw StalenessError("layer cache was built from different weights");
  }
  if (cache.hidden.size() != weights.config.n_layers + 1) {
    throw StalenessError("layer cache has the wrong number of layers");
  }
  return response_from_cache(ablated_layer(weights, neuron), weights.config, cache, neuron.layer);
}

std::vector<ActivationResponsePair> response_sweep(const WeightStore& weights,
                                                   const std::vector<TokenSeq>& scenarios_minus,
                                                   const std::vector<TokenSeq>& scenarios_plus,
                                                   const std::vector<NeuronId>& neurons,
                                                   SweepOptions options) {
  const std::size_t k = scenarios_minus.size();
  if (k != scenarios_plus.size()) {
    throw ConfigError("response_sweep: |X-| = " + std::to_string(k) + " but |X+| = " +
                      std::to_string(scenarios_plus.size()));
  }
  if (k < 2) throw ConfigError("response_sweep: need K >= 2 scenarios per set");
  for (const auto& n : neurons) weights.check_neuron(n);

  const std::string fp = fingerprint(weights);
  std::vector<LayerInputCache> minus(k), plus(k);
  parallel_for(2 * k, options.jobs, [&](std::size_t i) {
    if (i < k) {
      minus[i] = build_cache_unchecked(weights, scenarios_minus[i], fp);
    } else {
      plus[i - k] = build_cache_unchecked(weights, scenarios_plus[i - k], fp);
    }
  });

  std::vector<ActivationResponsePair> out(neurons.size());
  parallel_for(neurons.size(), options.jobs, [&](std::size_t idx) {
    const NeuronId& n = neurons[idx];
    const LayerWeights layer = ablated_layer(weights, n);
    ActivationResponsePair pair{n, std::vector<double>(k), std::vector<double>(k)};
    for (std::size_t s = 0; s < k; ++s) {
      pair.a_minus[s] = response_from_cache(layer, weights.config, minus[s], n.layer);
      pair.a_plus[s] = response_from_cache(layer, weights.config, plus[s], n.layer);
    }
    out[idx] = std::move(pair);
  });
  return out;
}

std::vector<std::size_t> subsample_indices(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k > n) throw ConfigError("cannot subsample " + std::to_string(k) + " of " + std::to_string(n));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  SplitMix64 rng(seed);
  // Partial Fisher–Yates over the first k slots.
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::string pairs_provenance(const std::vector<ActivationResponsePair>& pairs) {
  Fnv1a h;
  for (const auto& p : pairs) {
    h.update_u64(p.neuron.layer);
    h.update_u64(static_cast<std::uint64_t>(p.neuron.kind));
    h.update_u64(p.neuron.col);
    h.update(std::span<const double>(p.a_minus));
    h.update(std::span<const double>(p.a_plus));
  }
  return h.hex();
}

}  // namespace coco
