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

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <thread>
#include <vector>

#include "dwhar/data.hpp"
#include "dwhar/metrics.hpp"
#include "dwhar/model.hpp"
#include "dwhar/tensor.hpp"

namespace dwhar {

/// Mean negative log-likelihood of `labels` under softmax(logits).
inline Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2) {
    throw ConfigError("cross_entropy: logits must be [B, C], got " + shape_str(logits.shape()));
  }
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  if (labels.size() != b) {
    throw DataError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                    std::to_string(b));
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw DataError("cross_entropy: label " + std::to_string(y) + " outside [0, " +
                      std::to_string(c) + ")");
    }
  }
  const auto z = logits.data();
  auto probs = std::make_shared<std::vector<double>>(b * c);
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const double* row = z.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double sum = 0.0;
    for (std::size_t k = 0; k < c; ++k) sum += std::exp(row[k] - mx);
    const double log_z = mx + std::log(sum);
    for (std::size_t k = 0; k < c; ++k) (*probs)[i * c + k] = std::exp(row[k] - log_z);
    total += log_z - row[labels[i]];
  }
  Tensor loss = Tensor::scalar(total / static_cast<double>(b));
  std::vector<int> y(labels.begin(), labels.end());
  dwhar::detail::record({logits}, loss, [logits, loss, probs, y, b, c]() mutable {
    const double g = loss.grad()[0] / static_cast<double>(b);
    auto gz = logits.mutable_grad();
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t k = 0; k < c; ++k) {
        const double target = static_cast<std::size_t>(y[i]) == k ? 1.0 : 0.0;
        gz[i * c + k] += g * ((*probs)[i * c + k] - target);
      }
    }
  });
  return loss;
}

// ---------------------------------------------------------------------------
// Adam

struct OptimizerState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::vector<std::vector<double>> m;  // per parameter, same order as ModelState
  std::vector<std::vector<double>> v;
};

inline OptimizerState make_optimizer(const ModelState& st, double lr) {
  OptimizerState opt;
  opt.lr = lr;
  for (const auto& p : st.params()) {
    opt.m.emplace_back(p.value.size(), 0.0);
    opt.v.emplace_back(p.value.size(), 0.0);
  }
  return opt;
}

/// One bias-corrected Adam update of every parameter from its gradient.
inline void adam_step(ModelState& st, OptimizerState& opt) {
  if (opt.m.size() != st.size()) throw UsageError("optimizer state does not match parameters");
  for (const auto& p : st.params()) {
    if (!p.value.has_grad()) throw UsageError("adam_step: no gradient for '" + p.name + "'");
  }
  ++opt.step;
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
  for (std::size_t i = 0; i < st.size(); ++i) {
    Tensor& param = st.params()[i].value;
    const auto g = param.grad();
    auto w = param.mutable_data();
    auto& m = opt.m[i];
    auto& v = opt.v[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = opt.beta1 * m[k] + (1.0 - opt.beta1) * g[k];
      v[k] = opt.beta2 * v[k] + (1.0 - opt.beta2) * g[k] * g[k];
      const double m_hat = m[k] / c1;
      const double v_hat = v[k] / c2;
      w[k] -= opt.lr * m_hat / (std::sqrt(v_hat) + opt.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Evaluation

struct Evaluation {
  MetricsReport metrics;
  double loss = 0.0;
  std::vector<int> predictions;
};

inline std::vector<int> argmax_rows(const Tensor& logits) {
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  std::vector<int> out(b);
  const auto z = logits.data();
  for (std::size_t i = 0; i < b; ++i) {
    out[i] = static_cast<int>(std::max_element(z.begin() + static_cast<std::ptrdiff_t>(i * c),
                                               z.begin() + static_cast<std::ptrdiff_t>((i + 1) * c)) -
                              (z.begin() + static_cast<std::ptrdiff_t>(i * c)));
  }
  return out;
}

/// Forward passes only; the parameters are never touched. `workers` > 1
/// splits the windows across threads; results do not depend on it because
/// every window is computed independently.
inline Evaluation evaluate(const ModelConfig& cfg, const ModelState& st, const SensorBatch& data,
                           std::size_t chunk = 128, std::size_t workers = 1) {
  Evaluation ev;
  if (data.empty()) {
    ev.metrics = compute_metrics({}, {}, cfg.n_classes);
    return ev;
  }
  const std::size_t b = data.size();
  std::vector<std::pair<std::size_t, std::size_t>> ranges;
  for (std::size_t s = 0; s < b; s += chunk) ranges.emplace_back(s, std::min(b, s + chunk));
  std::vector<double> losses(ranges.size());
  ev.predictions.assign(b, 0);
  auto run = [&](std::size_t r) {
    std::vector<std::size_t> idx(ranges[r].second - ranges[r].first);
    std::iota(idx.begin(), idx.end(), ranges[r].first);
    const SensorBatch part = data.subset(idx);
    const Tensor logits = forward(part.windows, cfg, st).logits;
    losses[r] = cross_entropy(logits, part.labels).item() * static_cast<double>(idx.size());
    const auto pred = argmax_rows(logits);
    std::copy(pred.begin(), pred.end(), ev.predictions.begin() + static_cast<std::ptrdiff_t>(ranges[r].first));
  };
  if (workers <= 1) {
    for (std::size_t r = 0; r < ranges.size(); ++r) run(r);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w]() {
        for (std::size_t r = w; r < ranges.size(); r += workers) run(r);
      });
    }
    for (auto& t : pool) t.join();
  }
  ev.loss = std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(b);
  ev.metrics = compute_metrics(data.labels, ev.predictions, cfg.n_classes);
  ev.metrics.param_count = count_params(st);
  ev.metrics.flops_per_window = count_flops(cfg).total();
  return ev;
}

inline MetricsReport evaluate_split(const ModelConfig& cfg, const ModelState& st,
                                    const SensorBatch& data, std::size_t workers = 1) {
  return evaluate(cfg, st, data, 128, workers).metrics;
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainOptions {
  std::size_t epochs = 80;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  std::size_t eval_workers = 1;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double train_macro_f1 = 0.0;
  std::optional<double> val_loss;
  std::optional<double> val_accuracy;
  std::optional<double> val_macro_f1;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;  // 0 when no validation data was given
  double seconds = 0.0;
  std::uint64_t seed = 0;
};

inline nlohmann::json to_json(const EpochRecord& e) {
  nlohmann::json j{{"epoch", e.epoch},
                   {"train_loss", e.train_loss},
                   {"train_accuracy", e.train_accuracy},
                   {"train_macro_f1", e.train_macro_f1}};
  if (e.val_loss) {
    j["val_loss"] = *e.val_loss;
    j["val_accuracy"] = *e.val_accuracy;
    j["val_macro_f1"] = *e.val_macro_f1;
  }
  return j;
}

/// Minibatch Adam on cross-entropy. The window order is reshuffled each epoch
/// from a generator seeded with `opts.seed`; the last partial minibatch is
/// kept. Train metrics are accumulated from the minibatch forward passes.
/// With validation data, the parameters of the epoch with the best validation
/// macro-F1 are restored before returning.
inline TrainReport train_epochs(const ModelConfig& cfg, ModelState& st, const SensorBatch& train,
                                const SensorBatch* val, const TrainOptions& opts,
                                const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  if (train.empty()) throw UsageError("train_epochs: no training windows");
  if (opts.batch_size == 0) throw UsageError("train_epochs: batch size must be positive");
  const auto started = std::chrono::steady_clock::now();
  TrainReport report;
  report.seed = opts.seed;
  OptimizerState opt = make_optimizer(st, opts.lr);
  std::mt19937_64 rng(opts.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::optional<ModelState> best;
  double best_f1 = -1.0;

  for (std::size_t epoch = 1; epoch <= opts.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::vector<int> truth, pred;
    truth.reserve(train.size());
    pred.reserve(train.size());
    for (std::size_t start = 0; start < order.size(); start += opts.batch_size) {
      const std::vector<std::size_t> idx(
          order.begin() + static_cast<std::ptrdiff_t>(start),
          order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + opts.batch_size)));
      const SensorBatch mb = train.subset(idx);
      st.zero_grad();
      Tape tape;
      Tensor logits;
      {
        TapeScope scope(tape);
        logits = forward(mb.windows, cfg, st).logits;
        Tensor loss = cross_entropy(logits, mb.labels);
        loss_sum += loss.item() * static_cast<double>(idx.size());
        backward(loss, tape);
      }
      adam_step(st, opt);
      const auto p = argmax_rows(logits);
      pred.insert(pred.end(), p.begin(), p.end());
      truth.insert(truth.end(), mb.labels.begin(), mb.labels.end());
    }
    st.zero_grad();

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(train.size());
    const MetricsReport tm = compute_metrics(truth, pred, cfg.n_classes);
    rec.train_accuracy = tm.accuracy;
    rec.train_macro_f1 = tm.macro_f1;
    if (val != nullptr && !val->empty()) {
      const Evaluation ev = evaluate(cfg, st, *val, 128, opts.eval_workers);
      rec.val_loss = ev.loss;
      rec.val_accuracy = ev.metrics.accuracy;
      rec.val_macro_f1 = ev.metrics.macro_f1;
      if (ev.metrics.macro_f1 > best_f1) {
        best_f1 = ev.metrics.macro_f1;
        report.best_epoch = epoch;
        best = st.clone();
      }
    }
    report.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  if (best) {
    for (std::size_t i = 0; i < st.size(); ++i) {
      auto dst = st.params()[i].value.mutable_data();
      const auto src = best->params()[i].value.data();
      std::copy(src.begin(), src.end(), dst.begin());
    }
  }
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

}  // namespace dwhar
