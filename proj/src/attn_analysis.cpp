#include "coco/attn_analysis.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "coco/errors.hpp"
#include "coco/parallel.hpp"

namespace coco {

using nlohmann::json;

namespace {

struct Bucket {
  std::size_t count = 0;
  std::vector<std::vector<Matrix>> sum;  // [layer][head]
};

}  // namespace

double causal_column_mean(const Matrix& delta, std::size_t col) {
  if (col >= delta.cols || delta.rows == 0) return 0.0;
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t r = col; r < delta.rows; ++r) {
    acc += delta(r, col);
    ++n;
  }
  return n ? acc / static_cast<double>(n) : 0.0;
}

AttentionShiftReport attention_shift(const WeightStore& base, const WeightStore& edited,
                                     const std::vector<TokenSeq>& scenarios, std::size_t top_k,
                                     std::size_t jobs) {
  if (!(base.config == edited.config)) throw InputError("attention_shift: model configs differ");
  if (scenarios.empty()) throw InputError("attention_shift: no scenarios");
  const std::size_t n_layers = base.config.n_layers;
  const std::size_t n_heads = base.config.n_heads;

  // Per scenario: ΔA per head and its L1 norm.
  std::vector<std::vector<std::vector<Matrix>>> deltas(scenarios.size());
  parallel_for(scenarios.size(), jobs, [&](std::size_t s) {
    const auto a = forward(base, scenarios[s], {.attention = true}).attention;
    const auto b = forward(edited, scenarios[s], {.attention = true}).attention;
    auto& d = deltas[s];
    d.resize(n_layers);
    for (std::size_t l = 0; l < n_layers; ++l) {
      for (std::size_t h = 0; h < n_heads; ++h) {
        Matrix m = b[l][h];
        for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] -= a[l][h].data[i];
        d[l].push_back(std::move(m));
      }
    }
  });

  AttentionShiftReport report;
  report.n_scenarios = scenarios.size();
  std::map<std::size_t, Bucket> buckets;
  std::vector<double> l1_sum(n_layers * n_heads, 0.0);
  for (std::size_t s = 0; s < scenarios.size(); ++s) {
    Bucket& bucket = buckets[scenarios[s].size()];
    if (bucket.count == 0) bucket.sum = deltas[s];
    else {
      for (std::size_t l = 0; l < n_layers; ++l) {
        for (std::size_t h = 0; h < n_heads; ++h) {
          auto& acc = bucket.sum[l][h].data;
          const auto& src = deltas[s][l][h].data;
          for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += src[i];
        }
      }
    }
    ++bucket.count;
    for (std::size_t l = 0; l < n_layers; ++l) {
      for (std::size_t h = 0; h < n_heads; ++h) l1_sum[l * n_heads + h] += l1_norm(deltas[s][l][h]);
    }
  }

  bool any_shift = false;
  for (std::size_t l = 0; l < n_layers; ++l) {
    for (std::size_t h = 0; h < n_heads; ++h) {
      const double mean_l1 = l1_sum[l * n_heads + h] / static_cast<double>(scenarios.size());
      any_shift = any_shift || mean_l1 != 0.0;
      report.heads.push_back({l, h, mean_l1});
    }
  }
  report.no_shift = !any_shift;

  std::vector<HeadShift> ranked = report.heads;
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const HeadShift& a, const HeadShift& b) { return a.mean_l1 > b.mean_l1; });
  ranked.resize(std::min(top_k, ranked.size()));
  for (const auto& hs : ranked) {
    TopHead top{hs.layer, hs.head, hs.mean_l1, {}};
    for (const auto& [len, bucket] : buckets) {
      HeadBucketDetail detail;
      detail.seq_len = len;
      detail.n_scenarios = bucket.count;
      detail.mean_delta = bucket.sum[hs.layer][hs.head];
      for (double& v : detail.mean_delta.data) v /= static_cast<double>(bucket.count);
      detail.first_col_mean = causal_column_mean(detail.mean_delta, 0);
      detail.last_col_mean = causal_column_mean(detail.mean_delta, len - 1);
      top.buckets.push_back(std::move(detail));
    }
    report.top.push_back(std::move(top));
  }
  return report;
}

HeadTail head_tail_of(const Matrix& mean_delta) {
  HeadTail ht;
  ht.seq_len = mean_delta.rows;
  if (mean_delta.rows == 0) return ht;
  ht.first_col_mean = causal_column_mean(mean_delta, 0);
  ht.last_col_mean = causal_column_mean(mean_delta, mean_delta.cols - 1);
  ht.trade_off = ht.first_col_mean > 0.0 && ht.last_col_mean < 0.0;
  return ht;
}

std::vector<HeadTail> head_tail_stat(const AttentionShiftReport& report) {
  std::vector<HeadTail> out;
  for (const auto& top : report.top) {
    for (const auto& b : top.buckets) {
      HeadTail ht = head_tail_of(b.mean_delta);
      ht.layer = top.layer;
      ht.head = top.head;
      out.push_back(ht);
    }
  }
  return out;
}

NeuronDistribution neuron_distribution(const std::vector<NeuronId>& selected, const ModelConfig& config) {
  NeuronDistribution dist;
  dist.n_layers = config.n_layers;
  dist.counts.assign(config.n_layers, {0, 0, 0});
  dist.percent.assign(config.n_layers, {0.0, 0.0, 0.0});
  for (const auto& n : selected) {
    if (n.layer >= config.n_layers || n.col >= config.d_model) {
      throw AddressError("neuron " + n.str() + " is outside the model");
    }
    ++dist.counts[n.layer][static_cast<std::size_t>(n.kind)];
    ++dist.total;
  }
  dist.degenerate = dist.total == 0;
  if (!dist.degenerate) {
    for (std::size_t l = 0; l < config.n_layers; ++l) {
      for (std::size_t k = 0; k < 3; ++k) {
        dist.percent[l][k] = 100.0 * static_cast<double>(dist.counts[l][k]) / static_cast<double>(dist.total);
      }
    }
  }
  return dist;
}

json shift_to_json(const AttentionShiftReport& report) {
  json heads = json::array();
  for (const auto& h : report.heads) {
    heads.push_back({{"layer", h.layer}, {"head", h.head}, {"mean_l1", h.mean_l1}});
  }
  json top = json::array();
  for (const auto& t : report.top) {
    json buckets = json::array();
    for (const auto& b : t.buckets) {
      json rows = json::array();
      for (std::size_t r = 0; r < b.mean_delta.rows; ++r) {
        auto row = b.mean_delta.row(r);
        rows.push_back(std::vector<double>(row.begin(), row.end()));
      }
      const HeadTail ht = head_tail_of(b.mean_delta);
      buckets.push_back({{"seq_len", b.seq_len},
                         {"n_scenarios", b.n_scenarios},
                         {"first_col_mean", b.first_col_mean},
                         {"last_col_mean", b.last_col_mean},
                         {"trade_off", ht.trade_off},
                         {"mean_delta", rows}});
    }
    top.push_back({{"layer", t.layer}, {"head", t.head}, {"mean_l1", t.mean_l1}, {"buckets", buckets}});
  }
  return json{{"n_scenarios", report.n_scenarios},
              {"no_shift", report.no_shift},
              {"heads", heads},
              {"top", top}};
}

json distribution_to_json(const NeuronDistribution& dist) {
  json layers = json::array();
  for (std::size_t l = 0; l < dist.n_layers; ++l) {
    layers.push_back({{"layer", l},
                      {"counts", {{"Q", dist.counts[l][0]}, {"K", dist.counts[l][1]}, {"V", dist.counts[l][2]}}},
                      {"percent",
                       {{"Q", dist.percent[l][0]}, {"K", dist.percent[l][1]}, {"V", dist.percent[l][2]}}}});
  }
  return json{{"total", dist.total}, {"degenerate", dist.degenerate}, {"layers", layers}};
}

std::string matrix_to_csv(const Matrix& m) {
  std::ostringstream out;
  out.precision(17);
  for (std::size_t r = 0; r < m.rows; ++r) {
    for (std::size_t c = 0; c < m.cols; ++c) {
      if (c) out << ",";
      out << m(r, c);
    }
    out << "\n";
  }
  return out.str();
}

std::string distribution_to_csv(const NeuronDistribution& dist) {
  std::ostringstream out;
  out.precision(17);
  out << "layer,Q,K,V\n";
  for (std::size_t l = 0; l < dist.n_layers; ++l) {
    out << l << "," << dist.percent[l][0] << "," << dist.percent[l][1] << "," << dist.percent[l][2] << "\n";
  }
  return out.str();
}

std::vector<std::string> write_shift_outputs(const AttentionShiftReport& report,
                                             const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> written;
  auto write = [&](const std::string& name, const std::string& text) {
    std::ofstream out(dir / name, std::ios::trunc);
    out << text;
    if (!out) throw FormatError("failed writing " + (dir / name).string());
    written.push_back(name);
  };
  write("attn_shift.json", shift_to_json(report).dump(2) + "\n");
  std::ostringstream l1;
  l1.precision(17);
  l1 << "layer,head,mean_l1\n";
  for (const auto& h : report.heads) l1 << h.layer << "," << h.head << "," << h.mean_l1 << "\n";
  write("head_l1.csv", l1.str());
  for (const auto& t : report.top) {
    for (const auto& b : t.buckets) {
      write("delta_L" + std::to_string(t.layer) + "_H" + std::to_string(t.head) + "_len" +
                std::to_string(b.seq_len) + ".csv",
            matrix_to_csv(b.mean_delta));
    }
  }
  return written;
}

}  // namespace coco
