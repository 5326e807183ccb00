// Copyright 2026 The DecomposeWHAR Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dwhar/config.hpp"
#include "dwhar/error.hpp"
#include "dwhar/model.hpp"

namespace dwhar {

// ---------------------------------------------------------------------------
// Classification metrics. All percentages are in [0, 100].

using ConfusionMatrix = std::vector<std::vector<std::int64_t>>;  // [true][pred]

inline ConfusionMatrix confusion_matrix(std::span<const int> y_true, std::span<const int> y_pred,
                                        std::size_t n_classes) {
  if (y_true.size() != y_pred.size()) throw UsageError("label vectors differ in length");
  ConfusionMatrix cm(n_classes, std::vector<std::int64_t>(n_classes, 0));
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const auto t = static_cast<std::size_t>(y_true[i]);
    const auto p = static_cast<std::size_t>(y_pred[i]);
    if (y_true[i] < 0 || y_pred[i] < 0 || t >= n_classes || p >= n_classes) {
      throw DataError("label out of range [0, " + std::to_string(n_classes) + ")");
    }
    ++cm[t][p];
  }
  return cm;
}

struct ClassScores {
  double precision = 0.0;  // percent
  double recall = 0.0;
  double f1 = 0.0;
};

inline std::vector<ClassScores> per_class_scores(const ConfusionMatrix& cm) {
  const std::size_t c = cm.size();
  std::vector<ClassScores> out(c);
  for (std::size_t k = 0; k < c; ++k) {
    std::int64_t tp = cm[k][k], predicted = 0, actual = 0;
    for (std::size_t j = 0; j < c; ++j) {
      predicted += cm[j][k];
      actual += cm[k][j];
    }
    const double p = predicted ? static_cast<double>(tp) / static_cast<double>(predicted) : 0.0;
    const double r = actual ? static_cast<double>(tp) / static_cast<double>(actual) : 0.0;
    // 2PR/(P+R) in its single-division form 2TP/(2TP+FP+FN).
    const std::int64_t denom = predicted + actual;
    out[k] = {100.0 * p, 100.0 * r,
              denom ? 100.0 * static_cast<double>(2 * tp) / static_cast<double>(denom) : 0.0};
  }
  return out;
}

inline double accuracy(const ConfusionMatrix& cm) {
  std::int64_t correct = 0, total = 0;
  for (std::size_t i = 0; i < cm.size(); ++i) {
    for (std::size_t j = 0; j < cm.size(); ++j) total += cm[i][j];
    correct += cm[i][i];
  }
  return total ? 100.0 * static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

/// Unweighted mean of per-class F1 over all `n_classes` classes; classes
/// that never occur contribute 0.
inline double macro_f1(std::span<const int> y_true, std::span<const int> y_pred,
                       std::size_t n_classes) {
  const auto scores = per_class_scores(confusion_matrix(y_true, y_pred, n_classes));
  double s = 0.0;
  for (const auto& sc : scores) s += sc.f1;
  return s / static_cast<double>(n_classes);
}

inline double accuracy(std::span<const int> y_true, std::span<const int> y_pred,
                       std::size_t n_classes) {
  return accuracy(confusion_matrix(y_true, y_pred, n_classes));
}

struct MetricsReport {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::vector<ClassScores> per_class;
  ConfusionMatrix confusion;
  std::int64_t param_count = 0;
  std::int64_t flops_per_window = 0;
};

inline MetricsReport compute_metrics(std::span<const int> y_true, std::span<const int> y_pred,
                                     std::size_t n_classes) {
  MetricsReport r;
  r.confusion = confusion_matrix(y_true, y_pred, n_classes);
  r.per_class = per_class_scores(r.confusion);
  r.accuracy = accuracy(r.confusion);
  double s = 0.0;
  for (const auto& sc : r.per_class) s += sc.f1;
  r.macro_f1 = s / static_cast<double>(n_classes);
  return r;
}

inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json per_class = nlohmann::json::array();
  for (const auto& c : r.per_class) {
    per_class.push_back({{"precision", c.precision}, {"recall", c.recall}, {"f1", c.f1}});
  }
  return {{"accuracy", r.accuracy},
          {"macro_f1", r.macro_f1},
          {"per_class", per_class},
          {"confusion", r.confusion},
          {"param_count", r.param_count},
          {"flops_per_window", r.flops_per_window}};
}

// ---------------------------------------------------------------------------
// Parameter accounting

inline std::int64_t count_params(const ModelState& st) {
  std::int64_t total = 0;
  for (const auto& p : st.params()) total += static_cast<std::int64_t>(p.value.size());
  return total;
}

/// Closed-form parameter counts per stage, matching init_model's layout.
struct ParamBreakdown {
  std::int64_t mse = 0;         // N·M·D·P + N·M·D
  std::int64_t lte = 0;         // M·D·K + M·D
  std::int64_t ccf = 0;         // 2·M·D (norm) + M·(D·E·D + E·D) + M·(E·D·D + D)
  std::int64_t cvf = 0;         // 2·D·M (norm) + D·(M·E·M + E·M) + D·(E·M·M + M)
  std::int64_t mamba = 0;       // 2·Di·D + Di·dc + Di + Di² + Di + 2·ds·Di + Di·ds + Di + D·Di
  std::int64_t csi = 0;         // 4·(D·T)²
  std::int64_t classifier = 0;  // C·N·D·T + C
  std::int64_t total() const { return mse + lte + ccf + cvf + mamba + csi + classifier; }
};

inline ParamBreakdown expected_param_counts(const ModelConfig& cfg) {
  const auto n = static_cast<std::int64_t>(cfg.n_sensors), m = static_cast<std::int64_t>(cfg.n_vars);
  const auto d = static_cast<std::int64_t>(cfg.d_model), p = static_cast<std::int64_t>(cfg.patch);
  const auto k = static_cast<std::int64_t>(cfg.lte_kernel);
  const auto e = static_cast<std::int64_t>(cfg.expand_ratio);
  const auto di = static_cast<std::int64_t>(cfg.d_inner());
  const auto ds = static_cast<std::int64_t>(cfg.d_state);
  const auto dc = static_cast<std::int64_t>(cfg.d_conv);
  const auto tok = static_cast<std::int64_t>(cfg.token_dim());
  const auto c = static_cast<std::int64_t>(cfg.n_classes);
  ParamBreakdown b;
  b.mse = n * m * d * p + n * m * d;
  b.lte = m * d * k + m * d;
  b.ccf = 2 * m * d + m * (e * d * d + e * d) + m * (d * e * d + d);
  b.cvf = 2 * d * m + d * (e * m * m + e * m) + d * (m * e * m + m);
  if (cfg.enable_gta) {
    b.mamba = 2 * di * d + di * dc + di + di * di + di + 2 * ds * di + di * ds + di + d * di;
  }
  if (cfg.enable_csi) b.csi = 4 * tok * tok;
  b.classifier = c * n * tok + c;
  return b;
}

// ---------------------------------------------------------------------------
// FLOP accounting
//
// Analytic count for a single window, 2 FLOPs per multiply-accumulate.
// Bias additions, normalization and elementwise activations are not counted.
//
//   conv (any grouping)  2 · C_out · (C_in/G) · K · T_out
//   linear               2 · rows · in · out
//   attention logits     2 · H · N · N · d_head      (Q K^T)
//   attention mixing     2 · H · N · N · d_head      (A V)
//   selective scan       6 · T · Di · ds             (decay MAC, input MAC, readout MAC)

struct FlopBreakdown {
  std::int64_t mse = 0;
  std::int64_t lte = 0;
  std::int64_t ccf = 0;
  std::int64_t cvf = 0;
  std::int64_t mamba = 0;
  std::int64_t csi = 0;
  std::int64_t classifier = 0;
  std::int64_t total() const { return mse + lte + ccf + cvf + mamba + csi + classifier; }
};

inline std::int64_t conv_flops(std::int64_t c_in, std::int64_t c_out, std::int64_t groups,
                               std::int64_t kernel, std::int64_t t_out) {
  return 2 * c_out * (c_in / groups) * kernel * t_out;
}

inline FlopBreakdown count_flops(const ModelConfig& cfg) {
  cfg.validate();
  const auto n = static_cast<std::int64_t>(cfg.n_sensors), m = static_cast<std::int64_t>(cfg.n_vars);
  const auto d = static_cast<std::int64_t>(cfg.d_model), t = static_cast<std::int64_t>(cfg.steps());
  const auto e = static_cast<std::int64_t>(cfg.expand_ratio);
  const auto di = static_cast<std::int64_t>(cfg.d_inner());
  const auto ds = static_cast<std::int64_t>(cfg.d_state);
  const auto tok = static_cast<std::int64_t>(cfg.token_dim());
  const auto h = static_cast<std::int64_t>(cfg.heads);
  const auto c = static_cast<std::int64_t>(cfg.n_classes);
  FlopBreakdown f;
  f.mse = conv_flops(n * m, n * m * d, n * m, static_cast<std::int64_t>(cfg.patch), t);
  f.lte = n * conv_flops(m * d, m * d, m * d, static_cast<std::int64_t>(cfg.lte_kernel), t);
  f.ccf = n * (conv_flops(m * d, m * e * d, m, 1, t) + conv_flops(m * e * d, m * d, m, 1, t));
  f.cvf = n * (conv_flops(d * m, d * e * m, d, 1, t) + conv_flops(d * e * m, d * m, d, 1, t));
  if (cfg.enable_gta) {
    const std::int64_t per_sensor =
        2 * t * d * di * 2                                            // input and gate projections
        + conv_flops(di, di, di, static_cast<std::int64_t>(cfg.d_conv), t)  // causal conv
        + 2 * t * di * di                                             // step-size projection
        + 2 * t * di * ds * 2                                         // B and C projections
        + 6 * t * di * ds                                             // scan
        + 2 * t * di * d;                                             // output projection
    f.mamba = n * per_sensor;
  }
  if (cfg.enable_csi) {
    f.csi = 4 * 2 * n * tok * tok          // Q, K, V, W projections
            + 2 * 2 * h * n * n * (tok / h);  // logits and mixing
  }
  f.classifier = 2 * c * n * tok;
  return f;
}

// ---------------------------------------------------------------------------
// Attention export

/// Writes `head_<h>.csv` for every head and `mean.csv` for the head average
/// into `dir`. Each matrix is averaged over the batch axis; row i holds the
/// weights sensor i assigns to every sensor, so rows sum to one.
inline std::vector<std::filesystem::path> export_attention(const Tensor& attn,
                                                           const std::vector<std::string>& sensor_names,
                                                           const std::filesystem::path& dir) {
  if (attn.rank() != 4 || attn.dim(2) != attn.dim(3)) {
    throw ConfigError("export_attention: expected [B, H, N, N], got " + shape_str(attn.shape()));
  }
  const std::size_t b = attn.dim(0), h = attn.dim(1), n = attn.dim(2);
  if (sensor_names.size() != n) {
    throw ConfigError("export_attention: " + std::to_string(sensor_names.size()) +
                      " names for " + std::to_string(n) + " sensors");
  }
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());

  const auto a = attn.data();
  std::vector<std::vector<double>> per_head(h, std::vector<double>(n * n, 0.0));
  for (std::size_t bi = 0; bi < b; ++bi) {
    for (std::size_t hi = 0; hi < h; ++hi) {
      for (std::size_t k = 0; k < n * n; ++k) {
        per_head[hi][k] += a[(bi * h + hi) * n * n + k] / static_cast<double>(b);
      }
    }
  }
  std::vector<double> mean(n * n, 0.0);
  for (const auto& m : per_head) {
    for (std::size_t k = 0; k < n * n; ++k) mean[k] += m[k] / static_cast<double>(h);
  }
  auto write = [&](const std::filesystem::path& path, const std::vector<double>& mat) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out.precision(17);
    out << "sensor";
    for (const auto& name : sensor_names) out << ',' << name;
    out << '\n';
    for (std::size_t i = 0; i < n; ++i) {
      out << sensor_names[i];
      for (std::size_t j = 0; j < n; ++j) out << ',' << mat[i * n + j];
      out << '\n';
    }
    if (!out) throw IoError("write failed for '" + path.string() + "'");
  };
  std::vector<std::filesystem::path> written;
  for (std::size_t hi = 0; hi < h; ++hi) {
    written.push_back(dir / ("head_" + std::to_string(hi) + ".csv"));
    write(written.back(), per_head[hi]);
  }
  written.push_back(dir / "mean.csv");
  write(written.back(), mean);
  return written;
}

}  // namespace dwhar
