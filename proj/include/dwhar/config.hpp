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

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <sstream>
#include <string>

#include "dwhar/error.hpp"

namespace dwhar {

/// Architecture hyperparameters of the network.
struct ModelConfig {
  std::size_t n_sensors = 5;       // N
  std::size_t n_vars = 9;          // M, variables per sensor
  std::size_t window = 24;         // L, time steps per window
  std::size_t n_classes = 18;      // C
  std::size_t d_model = 64;        // D, embedding channels per variable
  std::size_t patch = 8;           // P, embedding kernel size
  std::size_t stride = 8;          // S, embedding stride
  std::size_t lte_kernel = 3;      // depth-wise kernel size, must be odd
  std::size_t expand_ratio = 2;    // hidden width factor of the fusion blocks
  std::size_t heads = 8;           // attention heads over sensor tokens
  std::size_t d_state = 16;        // SSM state size
  std::size_t d_conv = 4;          // causal conv width inside the SSM block
  std::size_t mamba_expand = 2;    // SSM inner width = mamba_expand * D
  bool attn_scaled = false;        // divide attention logits by sqrt(head dim)
  bool enable_gta = true;          // temporal SSM block
  bool enable_csi = true;          // cross-sensor attention
  bool gta_before_csi = true;      // false swaps the two stages
  std::uint64_t seed = 0;

  /// Embedded sequence length, ceil(L / S).
  std::size_t steps() const { return (window + stride - 1) / stride; }
  std::size_t d_inner() const { return mamba_expand * d_model; }
  /// Length of one sensor token, D * T.
  std::size_t token_dim() const { return d_model * steps(); }
  /// Right zero-padding needed so the embedding yields exactly steps() outputs.
  std::size_t embed_right_pad() const {
    const std::size_t needed = (steps() - 1) * stride + patch;
    return needed > window ? needed - window : 0;
  }

  /// Kernel size recommended for a window: one third of the time steps.
  static std::size_t default_patch(std::size_t window) {
    const auto p = static_cast<std::size_t>(std::lround(static_cast<double>(window) / 3.0));
    return p == 0 ? 1 : p;
  }

  /// N=5 IMUs with 9 variables, 800 ms at 30 Hz, 18 classes.
  static ModelConfig opportunity() { return ModelConfig{}; }

  /// Small configuration used for gradient checks.
  static ModelConfig tiny() {
    ModelConfig c;
    c.n_sensors = 2;
    c.n_vars = 3;
    c.window = 9;
    c.n_classes = 3;
    c.d_model = 4;
    c.patch = 3;
    c.stride = 3;
    c.heads = 2;
    c.d_state = 2;
    return c;
  }

  void validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
    if (n_sensors == 0) fail("n_sensors must be positive");
    if (n_vars == 0) fail("n_vars must be positive");
    if (window == 0) fail("window must be positive");
    if (n_classes < 2) fail("n_classes must be at least 2");
    if (d_model == 0) fail("d_model must be positive");
    if (patch == 0 || patch > window) fail("patch must be in [1, window]");
    if (stride == 0) fail("stride must be positive");
    if (lte_kernel == 0 || lte_kernel % 2 == 0) {
      fail("lte_kernel must be odd for symmetric padding, got " + std::to_string(lte_kernel));
    }
    if (expand_ratio == 0) fail("expand_ratio must be positive");
    if (heads == 0) fail("heads must be positive");
    if (enable_csi && token_dim() % heads != 0) {
      fail("token length D*T=" + std::to_string(token_dim()) + " not divisible by heads=" +
           std::to_string(heads));
    }
    if (d_state == 0) fail("d_state must be positive");
    if (d_conv == 0) fail("d_conv must be positive");
    if (mamba_expand == 0) fail("mamba_expand must be positive");
  }

  /// Canonical one-line rendering; the digest is computed over this text.
  std::string canonical() const {
    std::ostringstream os;
    os << "N=" << n_sensors << ";M=" << n_vars << ";L=" << window << ";C=" << n_classes
       << ";D=" << d_model << ";P=" << patch << ";S=" << stride << ";K=" << lte_kernel
       << ";E=" << expand_ratio << ";H=" << heads << ";ds=" << d_state << ";dc=" << d_conv
       << ";me=" << mamba_expand << ";scaled=" << attn_scaled << ";gta=" << enable_gta
       << ";csi=" << enable_csi << ";order=" << gta_before_csi;
    return os.str();
  }

  /// 64-bit FNV-1a of canonical(). The seed is excluded: it does not change
  /// the parameter layout.
  std::uint64_t digest() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : canonical()) {
      h ^= ch;
      h *= 1099511628211ULL;
    }
    return h;
  }

  bool operator==(const ModelConfig&) const = default;
};

}  // namespace dwhar
