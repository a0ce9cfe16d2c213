#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "coco/model.hpp"

namespace coco {

// Hidden states h^0 … h^L of one un-edited forward pass. Ablating a neuron in
// layer l cannot change h^{l-1}, so responses only need layer l recomputed.
struct LayerInputCache {
  std::string weights_fingerprint;
  TokenSeq tokens;
  std::vector<Matrix> hidden;  // L+1 entries, seq×d
};

LayerInputCache build_cache(const WeightStore& weights, const TokenSeq& tokens);

// Responses of one neuron over the biased (minus) and unbiased (plus) scenarios.
struct ActivationResponsePair {
  NeuronId neuron;
  std::vector<double> a_minus;
  std::vector<double> a_plus;

  bool operator==(const ActivationResponsePair&) const = default;
};

// ‖h^l_{\N}(x) − h^l(x)‖₂ at the final token, where h^l_{\N} is layer l rerun
// from the cached h^{l-1} with the neuron's column zeroed. Throws
// StalenessError if the cache was built from different weights or tokens.
double activation_response(const WeightStore& weights, const LayerInputCache& cache,
                           const TokenSeq& scenario, const NeuronId& neuron);

struct SweepOptions {
  std::size_t jobs = 1;
};

// One pair per neuron, in input order. Baseline caches are built once per
// scenario and shared by every neuron. Requires |minus| = |plus| = K ≥ 2.
std::vector<ActivationResponsePair> response_sweep(const WeightStore& weights,
                                                   const std::vector<TokenSeq>& scenarios_minus,
                                                   const std::vector<TokenSeq>& scenarios_plus,
                                                   const std::vector<NeuronId>& neurons,
                                                   SweepOptions options = {});

// Indices of a seeded sample of `k` items out of `n`, returned in ascending
// order. Used to trim the larger scenario set to K = min(|X⁻|, |X⁺|).
std::vector<std::size_t> subsample_indices(std::size_t n, std::size_t k, std::uint64_t seed);

std::string pairs_provenance(const std::vector<ActivationResponsePair>& pairs);

}  // namespace coco
