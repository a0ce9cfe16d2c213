#include "coco/fixtures.hpp"

#include <cstdio>

#include "coco/rng.hpp"

namespace coco {

namespace {

using namespace planted_tokens;

// Feature slots; feature f occupies dims (2f, 2f+1).
constexpr std::size_t kFeatCue = 0;
constexpr std::size_t kFeatBiasCtx = 1;
constexpr std::size_t kFeatAnswer = 2;
constexpr std::size_t kFeatCapCtx = 3;
constexpr std::size_t kFeatCapAnswer = 4;
constexpr std::size_t kFeatQuery = 5;
constexpr std::size_t kFeatFiller = 6;
constexpr std::size_t kFeatOption = 7;

void set_feature(std::span<double> v, std::size_t feature, double value) {
  v[2 * feature] += value;
  v[2 * feature + 1] -= value;
}

// Column `col` of `w` reads feature f: w[2f, col] = 1, w[2f+1, col] = −1.
void read_feature(Matrix& w, std::size_t col, std::size_t feature) {
  w(2 * feature, col) += 1.0;
  w(2 * feature + 1, col) -= 1.0;
}

// Row `row` of W_O writes `value` onto feature f.
void write_feature(Matrix& wo, std::size_t row, std::size_t feature, double value) {
  wo(row, 2 * feature) += value;
  wo(row, 2 * feature + 1) -= value;
}

std::string item_id(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s-%03zu", prefix, i);
  return buf;
}

ScenarioItem bias_item(std::string id, std::string category, TokenSeq prompt, bool unbiased_first) {
  ScenarioItem item;
  item.id = std::move(id);
  item.category = std::move(category);
  item.prompt = std::move(prompt);
  if (unbiased_first) {
    item.options = {{kUnbiased}, {kBiased}};
    item.unbiased_index = 0;
  } else {
    item.options = {{kBiased}, {kUnbiased}};
    item.unbiased_index = 1;
  }
  return item;
}

}  // namespace

PlantedFixture make_planted_fixture(std::uint64_t seed, double noise) {
  ModelConfig config = ModelConfig::make(2, 2, 16, 16, 8, seed);
  WeightStore w = WeightStore::zeros(config);
  SplitMix64 rng(seed);

  for (auto& [name, m] : w.named_tensors()) {
    if (name.find("ln") != std::string::npos || name.ends_with(".b1") || name.ends_with(".b2")) continue;
    const double scale = (name == "tok_embed" || name == "pos_embed") ? noise / 2 : noise;
    if (name == "unembed") continue;
    for (double& v : m->data) v = rng.gaussian() * scale;
  }

  auto tok = [&](std::uint32_t t) { return w.tok_embed.row(t); };
  set_feature(tok(kQuery), kFeatQuery, 1.0);
  set_feature(tok(kBiasContext), kFeatBiasCtx, 1.0);
  set_feature(tok(kCue), kFeatCue, 1.0);
  set_feature(tok(kUnbiased), kFeatOption, 1.0);
  set_feature(tok(kBiased), kFeatOption, 1.0);
  set_feature(tok(kCapY), kFeatCapCtx, 1.0);
  set_feature(tok(kCapY), kFeatCapAnswer, 1.0);
  set_feature(tok(kCapZ), kFeatCapCtx, 1.0);
  set_feature(tok(kCapZ), kFeatCapAnswer, -1.0);
  set_feature(tok(kCapOption1), kFeatOption, 1.0);
  set_feature(tok(kCapOption2), kFeatOption, 1.0);
  for (std::uint32_t i = 0; i < kFillerCount; ++i) {
    set_feature(tok(kFirstFiller + i), kFeatQuery, 0.5);
    set_feature(tok(kFirstFiller + i), kFeatFiller, 0.25 * (1.0 + i));
  }

  PlantedFixture fx;
  fx.capability = {0, MatrixKind::V, 0};
  fx.always_active = {1, MatrixKind::V, 3};
  fx.planted = {1, MatrixKind::V, 10};

  read_feature(w.layers[0].wv, fx.capability.col, kFeatCapAnswer);
  write_feature(w.layers[0].wo, fx.capability.col, kFeatCapAnswer, 1.0);
  read_feature(w.layers[1].wv, fx.always_active.col, kFeatBiasCtx);
  write_feature(w.layers[1].wo, fx.always_active.col, kFeatAnswer, -1.0);
  read_feature(w.layers[1].wv, fx.planted.col, kFeatCue);
  write_feature(w.layers[1].wo, fx.planted.col, kFeatAnswer, 2.0);

  constexpr double kUnembedScale = 4.0;
  auto unembed_feature = [&](std::uint32_t token, std::size_t feature, double sign) {
    w.unembed(2 * feature, token) = sign * kUnembedScale;
    w.unembed(2 * feature + 1, token) = -sign * kUnembedScale;
  };
  unembed_feature(kUnbiased, kFeatAnswer, 1.0);
  unembed_feature(kBiased, kFeatAnswer, -1.0);
  unembed_feature(kCapOption1, kFeatCapAnswer, 1.0);
  unembed_feature(kCapOption2, kFeatCapAnswer, -1.0);
  fx.weights = std::move(w);

  auto filler = [](std::size_t i) { return kFirstFiller + static_cast<std::uint32_t>(i % kFillerCount); };

  for (std::size_t i = 0; i < 16; ++i) {
    TokenSeq prompt = i % 2 == 0 ? TokenSeq{kBiasContext, kCue, filler(i), kQuery}
                                 : TokenSeq{kCue, kBiasContext, filler(i), kQuery};
    fx.bias.items.push_back(bias_item(item_id("alpha", i), "alpha", std::move(prompt), i % 4 < 2));
  }
  for (std::size_t i = 0; i < 8; ++i) {
    TokenSeq prompt{kBiasContext, filler(i), filler(i + 3), kQuery};
    fx.bias.items.push_back(bias_item(item_id("alpha", 16 + i), "alpha", std::move(prompt), i % 2 == 0));
  }

  // Identical prompts: every neuron responds the same on both labelled sides,
  // so the category's own scoring cannot find the planted neuron.
  for (std::size_t i = 0; i < 12; ++i) {
    ScenarioItem item = bias_item(item_id("beta", i), "beta",
                                  TokenSeq{kBiasContext, kCue, kFirstFiller, kQuery}, i % 2 == 0);
    item.polarity = (i / 2) % 2 == 0 ? Polarity::Biased : Polarity::Unbiased;
    fx.transfer.items.push_back(std::move(item));
  }

  for (std::size_t i = 0; i < 16; ++i) {
    const bool is_y = i % 2 == 0;
    ScenarioItem item;
    item.id = item_id("cap", i);
    item.category = "capability";
    item.prompt = {is_y ? kCapY : kCapZ, filler(i), filler(i + 2), kQuery};
    const bool first = i % 4 < 2;
    item.options = first ? std::vector<TokenSeq>{{kCapOption1}, {kCapOption2}}
                         : std::vector<TokenSeq>{{kCapOption2}, {kCapOption1}};
    item.unbiased_index = (is_y == first) ? 0 : 1;
    fx.capability_set.items.push_back(std::move(item));
  }
  return fx;
}

}  // namespace coco
