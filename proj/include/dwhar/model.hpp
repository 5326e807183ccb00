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

// The decomposition/fusion network for multi-sensor windows.
//
// Stage layout for a batch of B windows with N sensors and M variables:
//
//   embed        [B,N,M,L]     -> [B,N,M,D,T]   per-(sensor,variable) strided conv
//   temporal     [B·N,M·D,T]   -> [B·N,M·D,T]   depth-wise conv shared across sensors
//   channel fuse [B·N,M·D,T]   -> [B·N,M·D,T]   point-wise, groups = M
//   var fuse     [B·N,M·D,T]   -> [B·N,D·M,T]   point-wise, groups = D
//   pool         [B·N,D·M,T]   -> [B·N,D,T]     mean over variables
//   ssm block    [B·N,D,T]     -> [B·N,D,T]     selective scan, one sequence per sensor
//   attention    [B,N,D·T]     -> [B,N,D·T]     sensors as tokens, residual
//   classifier   [B,N·D·T]     -> [B,C]

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dwhar/config.hpp"
#include "dwhar/ops.hpp"
#include "dwhar/scan.hpp"
#include "dwhar/tensor.hpp"

namespace dwhar {

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// Ordered collection of named parameter tensors.
class ModelState {
 public:
  void add(std::string name, Tensor value) {
    if (find(name) != nullptr) throw UsageError("duplicate parameter '" + name + "'");
    value.set_requires_grad(true);
    params_.push_back({std::move(name), std::move(value)});
  }

  const Tensor& get(const std::string& name) const {
    const Tensor* t = find(name);
    if (t == nullptr) throw UsageError("unknown parameter '" + name + "'");
    return *t;
  }

  Tensor& get(const std::string& name) {
    return const_cast<Tensor&>(std::as_const(*this).get(name));
  }

  bool contains(const std::string& name) const { return find(name) != nullptr; }

  std::vector<NamedTensor>& params() { return params_; }
  const std::vector<NamedTensor>& params() const { return params_; }
  std::size_t size() const { return params_.size(); }

  void zero_grad() {
    for (auto& p : params_) p.value.zero_grad();
  }

  /// Independent copy of every value.
  ModelState clone() const {
    ModelState out;
    for (const auto& p : params_) out.add(p.name, p.value.clone());
    return out;
  }

  /// FNV-1a over names, shapes and raw value bytes.
  std::uint64_t digest() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const void* bytes, std::size_t n) {
      const auto* c = static_cast<const unsigned char*>(bytes);
      for (std::size_t i = 0; i < n; ++i) {
        h ^= c[i];
        h *= 1099511628211ULL;
      }
    };
    for (const auto& p : params_) {
      mix(p.name.data(), p.name.size());
      for (std::size_t d : p.value.shape()) mix(&d, sizeof d);
      mix(p.value.data().data(), p.value.size() * sizeof(double));
    }
    return h;
  }

 private:
  const Tensor* find(const std::string& name) const {
    for (const auto& p : params_) {
      if (p.name == name) return &p.value;
    }
    return nullptr;
  }

  std::vector<NamedTensor> params_;
};

namespace detail {

inline Tensor uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(numel(shape));
  for (double& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v));
}

}  // namespace detail

/// Seeded initialization. Conv and linear weights are uniform in
/// +-1/sqrt(fan_in), biases zero, normalization scale one. Stages disabled in
/// `cfg` get no parameters.
inline ModelState init_model(const ModelConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  ModelState st;
  const std::size_t n = cfg.n_sensors, m = cfg.n_vars, d = cfg.d_model;
  const std::size_t e = cfg.expand_ratio;
  const std::size_t di = cfg.d_inner(), ds = cfg.d_state, tok = cfg.token_dim();

  st.add("mse.weight", detail::uniform({n * m * d, 1, cfg.patch}, cfg.patch, rng));
  st.add("mse.bias", Tensor::zeros({n * m * d}));
  st.add("lte.weight", detail::uniform({m * d, 1, cfg.lte_kernel}, cfg.lte_kernel, rng));
  st.add("lte.bias", Tensor::zeros({m * d}));

  st.add("ccf.norm.scale", Tensor::full({m * d}, 1.0));
  st.add("ccf.norm.shift", Tensor::zeros({m * d}));
  st.add("ccf.w1", detail::uniform({m * e * d, d, 1}, d, rng));
  st.add("ccf.b1", Tensor::zeros({m * e * d}));
  st.add("ccf.w2", detail::uniform({m * d, e * d, 1}, e * d, rng));
  st.add("ccf.b2", Tensor::zeros({m * d}));

  st.add("cvf.norm.scale", Tensor::full({d * m}, 1.0));
  st.add("cvf.norm.shift", Tensor::zeros({d * m}));
  st.add("cvf.w1", detail::uniform({d * e * m, m, 1}, m, rng));
  st.add("cvf.b1", Tensor::zeros({d * e * m}));
  st.add("cvf.w2", detail::uniform({d * m, e * m, 1}, e * m, rng));
  st.add("cvf.b2", Tensor::zeros({d * m}));

  if (cfg.enable_gta) {
    st.add("mamba.in_proj", detail::uniform({di, d}, d, rng));
    st.add("mamba.gate_proj", detail::uniform({di, d}, d, rng));
    st.add("mamba.conv.weight", detail::uniform({di, 1, cfg.d_conv}, cfg.d_conv, rng));
    st.add("mamba.conv.bias", Tensor::zeros({di}));
    st.add("mamba.dt_proj.weight", detail::uniform({di, di}, di, rng));
    // softplus(bias) log-uniform in [1e-3, 1e-1]
    std::uniform_real_distribution<double> log_dt(std::log(1e-3), std::log(1e-1));
    std::vector<double> dt_bias(di);
    for (double& v : dt_bias) v = std::log(std::expm1(std::exp(log_dt(rng))));
    st.add("mamba.dt_proj.bias", Tensor::from({di}, std::move(dt_bias)));
    st.add("mamba.b_proj", detail::uniform({ds, di}, di, rng));
    st.add("mamba.c_proj", detail::uniform({ds, di}, di, rng));
    std::vector<double> a_log(di * ds);
    for (std::size_t c = 0; c < di; ++c) {
      for (std::size_t s = 0; s < ds; ++s) a_log[c * ds + s] = std::log(static_cast<double>(s + 1));
    }
    st.add("mamba.A_log", Tensor::from({di, ds}, std::move(a_log)));
    st.add("mamba.D_skip", Tensor::full({di}, 1.0));
    st.add("mamba.out_proj", detail::uniform({d, di}, di, rng));
  }

  if (cfg.enable_csi) {
    for (const char* name : {"csi.q", "csi.k", "csi.v", "csi.w"}) {
      st.add(name, detail::uniform({tok, tok}, tok, rng));
    }
  }

  st.add("fc.weight", detail::uniform({cfg.n_classes, n * tok}, n * tok, rng));
  st.add("fc.bias", Tensor::zeros({cfg.n_classes}));
  return st;
}

namespace detail {

inline void expect_shape(const Tensor& x, const Shape& want, const char* stage) {
  if (x.shape() != want) {
    throw ConfigError(std::string(stage) + ": expected input " + shape_str(want) + ", got " +
                      shape_str(x.shape()));
  }
}

}  // namespace detail

/// Per-(sensor, variable) strided embedding: [B,N,M,L] -> [B,N,M,D,T].
inline Tensor mse_embed(const Tensor& x, const ModelConfig& cfg, const ModelState& st) {
  if (x.rank() != 4) {
    throw ConfigError("mse_embed: expected [B,N,M,L], got " + shape_str(x.shape()));
  }
  const std::size_t b = x.dim(0), n = cfg.n_sensors, m = cfg.n_vars;
  detail::expect_shape(x, {b, n, m, cfg.window}, "mse_embed");
  Tensor flat = ops::reshape(x, {b, n * m, cfg.window});
  Tensor y = ops::conv1d_grouped(flat, st.get("mse.weight"), st.get("mse.bias"), cfg.stride,
                                 0, cfg.embed_right_pad(), n * m);
  return ops::reshape(y, {b, n, m, cfg.d_model, cfg.steps()});
}

/// Depth-wise temporal conv with weights indexed by (variable, channel) only:
/// [B,N,M,D,T] -> [B·N, M·D, T].
inline Tensor lte_extract(const Tensor& x_emb, const ModelConfig& cfg, const ModelState& st) {
  if (cfg.lte_kernel % 2 == 0) {
    throw ConfigError("lte_extract: kernel size must be odd, got " +
                      std::to_string(cfg.lte_kernel));
  }
  if (x_emb.rank() != 5) {
    throw ConfigError("lte_extract: expected [B,N,M,D,T], got " + shape_str(x_emb.shape()));
  }
  const std::size_t b = x_emb.dim(0), n = cfg.n_sensors, m = cfg.n_vars, d = cfg.d_model;
  detail::expect_shape(x_emb, {b, n, m, d, cfg.steps()}, "lte_extract");
  Tensor flat = ops::reshape(x_emb, {b * n, m * d, cfg.steps()});
  return ops::conv1d_grouped(flat, st.get("lte.weight"), st.get("lte.bias"), 1,
                             (cfg.lte_kernel - 1) / 2, m * d);
}

namespace detail {

// x + pw2(gelu(pw1(norm(x)))) with both point-wise convs grouped by `groups`.
inline Tensor fusion_block(const Tensor& x, const ModelState& st, const std::string& prefix,
                           std::size_t groups) {
  Tensor h = ops::channel_norm(x, st.get(prefix + ".norm.scale"), st.get(prefix + ".norm.shift"));
  h = ops::conv1d_grouped(h, st.get(prefix + ".w1"), st.get(prefix + ".b1"), 1, 0, groups);
  h = ops::gelu(h);
  h = ops::conv1d_grouped(h, st.get(prefix + ".w2"), st.get(prefix + ".b2"), 1, 0, groups);
  return ops::add(x, h);
}

}  // namespace detail

/// Cross-channel fusion within each variable. Layout in and out is
/// variable-major: channel index m·D + d.
inline Tensor ccf_fuse(const Tensor& x_dw, const ModelConfig& cfg, const ModelState& st) {
  if (x_dw.rank() != 3 || x_dw.dim(1) % cfg.n_vars != 0) {
    throw ConfigError("ccf_fuse: channel count of " + shape_str(x_dw.shape()) +
                      " not divisible by M=" + std::to_string(cfg.n_vars));
  }
  detail::expect_shape(x_dw, {x_dw.dim(0), cfg.n_vars * cfg.d_model, cfg.steps()}, "ccf_fuse");
  return detail::fusion_block(x_dw, st, "ccf", cfg.n_vars);
}

/// Cross-variable fusion within each channel. Transposes to channel-major
/// layout (index d·M + m) and stays there.
inline Tensor cvf_fuse(const Tensor& x_ccf, const ModelConfig& cfg, const ModelState& st) {
  const std::size_t m = cfg.n_vars, d = cfg.d_model, t = cfg.steps();
  if (x_ccf.rank() != 3 || x_ccf.dim(1) != m * d || x_ccf.dim(2) != t) {
    throw ConfigError("cvf_fuse: expected [B', M·D, T] = [*, " + std::to_string(m * d) + ", " +
                      std::to_string(t) + "], got " + shape_str(x_ccf.shape()));
  }
  const std::size_t bn = x_ccf.dim(0);
  Tensor xt = ops::permute(ops::reshape(x_ccf, {bn, m, d, t}), {0, 2, 1, 3});
  xt = ops::reshape(xt, {bn, d * m, t});
  return detail::fusion_block(xt, st, "cvf", d);
}

/// Mean over the variable axis of a channel-major tensor: [B', D·M, T] -> [B', D, T].
inline Tensor gta_pool(const Tensor& x_cvf, std::size_t d_model, std::size_t n_vars) {
  if (x_cvf.rank() != 3 || x_cvf.dim(1) != d_model * n_vars) {
    throw ConfigError("gta_pool: expected [B', D·M, T], got " + shape_str(x_cvf.shape()));
  }
  Tensor grouped = ops::reshape(x_cvf, {x_cvf.dim(0), d_model, n_vars, x_cvf.dim(2)});
  return ops::mean_axis(grouped, 2);
}

inline Tensor gta_pool(const Tensor& x_cvf, const ModelConfig& cfg) {
  return gta_pool(x_cvf, cfg.d_model, cfg.n_vars);
}

/// Selective-SSM block applied independently to every sensor sequence:
/// [B·N, D, T] -> [B·N, D, T].
inline Tensor mamba_block(const Tensor& x_gap, const ModelConfig& cfg, const ModelState& st) {
  const std::size_t d = cfg.d_model, di = cfg.d_inner();
  if (x_gap.rank() != 3 || x_gap.dim(1) != d) {
    throw ConfigError("mamba_block: expected [B', D, T], got " + shape_str(x_gap.shape()));
  }
  Tensor seq = ops::permute(x_gap, {0, 2, 1});  // [B', T, D]

  Tensor u = ops::linear(seq, st.get("mamba.in_proj"));  // [B', T, Di]
  u = ops::permute(u, {0, 2, 1});                         // [B', Di, T]
  u = ops::conv1d_grouped(u, st.get("mamba.conv.weight"), st.get("mamba.conv.bias"), 1,
                          cfg.d_conv - 1, 0, di);  // causal
  u = ops::silu(ops::permute(u, {0, 2, 1}));        // [B', T, Di]

  Tensor delta = ops::softplus(
      ops::linear(u, st.get("mamba.dt_proj.weight"), st.get("mamba.dt_proj.bias")));
  Tensor b_t = ops::linear(u, st.get("mamba.b_proj"));
  Tensor c_t = ops::linear(u, st.get("mamba.c_proj"));
  Tensor a = ops::neg(ops::exp(st.get("mamba.A_log")));
  Tensor y = selective_scan(u, delta, b_t, c_t, a, st.get("mamba.D_skip"));

  Tensor gate = ops::silu(ops::linear(seq, st.get("mamba.gate_proj")));
  Tensor out = ops::linear(ops::mul(y, gate), st.get("mamba.out_proj"));  // [B', T, D]
  return ops::permute(out, {0, 2, 1});
}

struct AttentionOutput {
  Tensor features;   // [B, N, D·T]
  Tensor attention;  // [B, H, N, N], rows are probability vectors
};

/// Multi-head self-attention over sensor tokens with a residual connection.
inline AttentionOutput csi_attend(const Tensor& x, const ModelConfig& cfg, const ModelState& st) {
  if (x.rank() != 3) {
    throw ConfigError("csi_attend: expected [B, N, D·T], got " + shape_str(x.shape()));
  }
  const std::size_t b = x.dim(0), n = x.dim(1), tok = x.dim(2), h = cfg.heads;
  if (tok % h != 0) {
    throw ConfigError("csi_attend: token length " + std::to_string(tok) +
                      " not divisible by heads=" + std::to_string(h));
  }
  const std::size_t dh = tok / h;
  auto split_heads = [&](const Tensor& t) {
    return ops::permute(ops::reshape(t, {b, n, h, dh}), {0, 2, 1, 3});  // [B,H,N,dh]
  };
  Tensor q = split_heads(ops::linear(x, st.get("csi.q")));
  Tensor k = split_heads(ops::linear(x, st.get("csi.k")));
  Tensor v = split_heads(ops::linear(x, st.get("csi.v")));
  Tensor logits = ops::matmul(q, ops::permute(k, {0, 1, 3, 2}));  // [B,H,N,N]
  if (cfg.attn_scaled) logits = ops::scale(logits, 1.0 / std::sqrt(static_cast<double>(dh)));
  Tensor attn = ops::softmax_axis(logits, -1);
  Tensor ctx = ops::matmul_order_invariant(attn, v);                   // [B,H,N,dh]
  ctx = ops::reshape(ops::permute(ctx, {0, 2, 1, 3}), {b, n, tok});  // [B,N,D·T]
  Tensor o = ops::linear(ctx, st.get("csi.w"));
  return {ops::add(x, o), attn};
}

/// Flatten sensors and apply the final affine map: [B, N, D·T] -> [B, C].
inline Tensor classify_logits(const Tensor& x_csi, const ModelState& st) {
  const Tensor& w = st.get("fc.weight");
  if (x_csi.rank() < 2 || x_csi.size() / x_csi.dim(0) != w.dim(1)) {
    throw ConfigError("classify_logits: flattened length of " + shape_str(x_csi.shape()) +
                      " does not match fc weight " + shape_str(w.shape()));
  }
  Tensor flat = ops::reshape(x_csi, {x_csi.dim(0), w.dim(1)});
  return ops::linear(flat, w, st.get("fc.bias"));
}

struct ForwardResult {
  Tensor logits;                    // [B, C]
  std::optional<Tensor> attention;  // [B, H, N, N] when attention is enabled
  Tensor sensor_features;           // [B, N, D·T], input to the classifier
};

/// Full network. Ablation flags in `cfg` bypass or reorder the temporal SSM
/// and cross-sensor attention stages.
inline ForwardResult forward(const Tensor& x, const ModelConfig& cfg, const ModelState& st) {
  if (x.rank() != 4 || x.dim(1) != cfg.n_sensors || x.dim(2) != cfg.n_vars ||
      x.dim(3) != cfg.window) {
    throw ConfigError("forward: input " + (x.defined() ? shape_str(x.shape()) : "<empty>") +
                      " does not match config [B," + std::to_string(cfg.n_sensors) + "," +
                      std::to_string(cfg.n_vars) + "," + std::to_string(cfg.window) + "]");
  }
  const std::size_t b = x.dim(0), n = cfg.n_sensors;
  Tensor h = mse_embed(x, cfg, st);
  h = lte_extract(h, cfg, st);
  h = ccf_fuse(h, cfg, st);
  h = cvf_fuse(h, cfg, st);
  h = gta_pool(h, cfg);  // [B·N, D, T]

  ForwardResult result;
  auto temporal = [&](const Tensor& in) {
    return cfg.enable_gta ? mamba_block(in, cfg, st) : in;
  };
  auto cross = [&](const Tensor& in) {
    if (!cfg.enable_csi) return in;
    AttentionOutput a = csi_attend(in, cfg, st);
    result.attention = a.attention;
    return a.features;
  };
  const Shape per_sensor{b * n, cfg.d_model, cfg.steps()};
  const Shape tokens{b, n, cfg.token_dim()};
  if (cfg.gta_before_csi) {
    h = temporal(h);
    h = cross(ops::reshape(h, tokens));
  } else {
    h = cross(ops::reshape(h, tokens));
    h = ops::reshape(temporal(ops::reshape(h, per_sensor)), tokens);
  }
  result.sensor_features = h;
  result.logits = classify_logits(h, st);
  return result;
}

}  // namespace dwhar
