#include <bit>
#include <cstdint>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "coco/errors.hpp"
#include "coco/model.hpp"

namespace coco {

namespace {

constexpr const char* kFormat = "coco-forge-model";
constexpr int kVersion = 1;

using nlohmann::json;

json config_to_json(const ModelConfig& c) {
  return json{{"n_layers", c.n_layers}, {"n_heads", c.n_heads},     {"d_model", c.d_model},
              {"d_head", c.d_head},     {"d_ff", c.d_ff},           {"vocab_size", c.vocab_size},
              {"max_seq", c.max_seq},   {"norm_kind", "pre-layernorm"}, {"seed", c.seed}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  try {
    c.n_layers = j.at("n_layers").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.d_model = j.at("d_model").get<std::size_t>();
    c.d_head = j.at("d_head").get<std::size_t>();
    c.d_ff = j.at("d_ff").get<std::size_t>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.max_seq = j.at("max_seq").get<std::size_t>();
    c.seed = j.value("seed", std::uint64_t{0});
    if (j.value("norm_kind", std::string("pre-layernorm")) != "pre-layernorm") {
      throw FormatError("unsupported norm_kind " + j.at("norm_kind").dump());
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("manifest config: ") + e.what());
  }
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("manifest config: ") + e.what());
  }
  return c;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw FormatError("cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

void save_model(const WeightStore& weights, const std::filesystem::path& dir) {
  weights.validate_shapes();
  std::filesystem::create_directories(dir);

  json tensors = json::array();
  std::string blob;
  std::uint64_t offset = 0;
  for (const auto& [name, m] : weights.named_tensors()) {
    const std::uint64_t nbytes = m->data.size() * 8;
    tensors.push_back({{"name", name},
                       {"shape", {m->rows, m->cols}},
                       {"dtype", "f64"},
                       {"offset", offset},
                       {"nbytes", nbytes}});
    for (double v : m->data) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      for (int i = 0; i < 8; ++i) blob.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
    }
    offset += nbytes;
  }
  const json manifest{{"format", kFormat},
                      {"version", kVersion},
                      {"config", config_to_json(weights.config)},
                      {"dtype", "f64"},
                      {"byte_order", "little"},
                      {"data_file", "tensors.bin"},
                      {"total_bytes", offset},
                      {"tensors", tensors}};

  std::ofstream mf(dir / "manifest.json", std::ios::binary | std::ios::trunc);
  mf << manifest.dump(2) << "\n";
  std::ofstream bin(dir / "tensors.bin", std::ios::binary | std::ios::trunc);
  bin.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!mf || !bin) throw FormatError("failed writing model to " + dir.string());
}

WeightStore load_model(const std::filesystem::path& dir) {
  const std::string text = read_file(dir / "manifest.json");
  json manifest;
  try {
    manifest = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError("manifest.json: " + std::string(e.what()), static_cast<long long>(e.byte));
  }
  if (manifest.value("format", "") != kFormat) throw FormatError("manifest.json: not a model manifest");
  if (manifest.value("version", 0) != kVersion) throw FormatError("manifest.json: unsupported version");
  if (manifest.value("dtype", "") != "f64") throw FormatError("manifest.json: dtype must be f64");

  WeightStore w = WeightStore::zeros(config_from_json(manifest.at("config")));
  const std::string blob = read_file(dir / "tensors.bin");

  auto named = w.named_tensors();
  const json& entries = manifest.at("tensors");
  if (!entries.is_array() || entries.size() != named.size()) {
    throw FormatError("manifest.json: expected " + std::to_string(named.size()) + " tensors");
  }
  std::uint64_t expected_offset = 0;
  for (std::size_t i = 0; i < named.size(); ++i) {
    const json& e = entries[i];
    auto& [name, m] = named[i];
    std::uint64_t offset = 0;
    std::size_t rows = 0, cols = 0;
    try {
      if (e.at("name").get<std::string>() != name) {
        throw FormatError("manifest.json: tensor " + std::to_string(i) + " is '" +
                          e.at("name").get<std::string>() + "', expected '" + name + "'");
      }
      rows = e.at("shape").at(0).get<std::size_t>();
      cols = e.at("shape").at(1).get<std::size_t>();
      offset = e.at("offset").get<std::uint64_t>();
    } catch (const json::exception& ex) {
      throw FormatError("manifest.json: tensor " + name + ": " + ex.what());
    }
    if (rows != m->rows || cols != m->cols) {
      throw FormatError("manifest.json: tensor " + name + " has shape " + std::to_string(rows) + "x" +
                        std::to_string(cols) + ", config implies " + std::to_string(m->rows) + "x" +
                        std::to_string(m->cols));
    }
    if (offset != expected_offset) {
      throw FormatError("tensors.bin: tensor " + name + " offset mismatch",
                        static_cast<long long>(offset));
    }
    const std::uint64_t nbytes = m->data.size() * 8;
    if (offset + nbytes > blob.size()) {
      throw FormatError("tensors.bin: truncated while reading " + name,
                        static_cast<long long>(blob.size()));
    }
    for (std::size_t k = 0; k < m->data.size(); ++k) {
      std::uint64_t bits = 0;
      const std::size_t base = offset + k * 8;
      for (int b = 0; b < 8; ++b) {
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(blob[base + b])) << (8 * b);
      }
      m->data[k] = std::bit_cast<double>(bits);
    }
    expected_offset = offset + nbytes;
  }
  if (expected_offset != blob.size()) {
    throw FormatError("tensors.bin: trailing bytes after last tensor",
                      static_cast<long long>(expected_offset));
  }
  return w;
}

}  // namespace coco
