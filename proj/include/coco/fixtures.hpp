#pragma once

#include <cstdint>

#include "coco/harness.hpp"
#include "coco/model.hpp"

namespace coco {

// Hand-built two-layer model with a known answer.
//
// The residual stream is organised as feature pairs (dims 2f, 2f+1 hold +x, −x),
// which keeps every hidden state zero-mean so layernorm only rescales it.
// Attention weights are near zero, so every head averages its prefix.
//
//   layer 0, V col 0  (capability)    copies the capability answer to the query token
//   layer 1, V col 3  (always active) reads the bias context and pushes the biased option
//   layer 1, V col 10 (planted)       reads the cue token and pushes the unbiased option
//                                      twice as hard
//
// Bias items with the cue are answered correctly (X⁺); without it the model
// picks the biased option (X⁻). Zeroing the planted column flips every X⁺
// item and leaves the capability items alone.
struct PlantedFixture {
  WeightStore weights;
  NeuronId planted;
  NeuronId always_active;
  NeuronId capability;
  ScenarioSet bias;        // category "alpha": 16 cue items, 8 without
  ScenarioSet transfer;    // category "beta": cue items with fixed polarity labels
  ScenarioSet capability_set;
};

namespace planted_tokens {
inline constexpr std::uint32_t kQuery = 0;
inline constexpr std::uint32_t kBiasContext = 1;
inline constexpr std::uint32_t kCue = 2;
inline constexpr std::uint32_t kUnbiased = 3;
inline constexpr std::uint32_t kBiased = 4;
inline constexpr std::uint32_t kCapY = 5;
inline constexpr std::uint32_t kCapZ = 6;
inline constexpr std::uint32_t kCapOption1 = 7;
inline constexpr std::uint32_t kCapOption2 = 8;
inline constexpr std::uint32_t kFirstFiller = 9;
inline constexpr std::uint32_t kFillerCount = 7;
}  // namespace planted_tokens

PlantedFixture make_planted_fixture(std::uint64_t seed = 7, double noise = 0.02);

}  // namespace coco
