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
#include <memory>
#include <string>
#include <vector>

#include "dwhar/tensor.hpp"

namespace dwhar {

/// Selective state-space scan with input-dependent discretization.
///
///   u, delta : [B, T, Di]      B_t, C_t : [B, T, Ds]
///   A        : [Di, Ds] (< 0)  D_skip   : [Di]
///
/// For every batch row and channel c, starting from h = 0:
///   h[s] <- exp(delta_t[c] * A[c,s]) * h[s] + delta_t[c] * B_t[s] * u_t[c]
///   y_t[c] = sum_s C_t[s] * h[s] + D_skip[c] * u_t[c]
///
/// The hidden states are kept for the backward pass, which runs the
/// recurrence in reverse.
inline Tensor selective_scan(const Tensor& u, const Tensor& delta, const Tensor& b_in,
                             const Tensor& c_in, const Tensor& a, const Tensor& d_skip) {
  if (u.rank() != 3) {
    throw ConfigError("selective_scan: u must be [B, T, Di], got " + shape_str(u.shape()));
  }
  const std::size_t batch = u.dim(0), steps = u.dim(1), di = u.dim(2);
  if (a.rank() != 2 || a.dim(0) != di) {
    throw ConfigError("selective_scan: A must be [" + std::to_string(di) + ", Ds], got " +
                      shape_str(a.shape()));
  }
  const std::size_t ds = a.dim(1);
  if (delta.shape() != u.shape()) {
    throw ConfigError("selective_scan: delta shape " + shape_str(delta.shape()) +
                      " differs from u " + shape_str(u.shape()));
  }
  const Shape bc_shape{batch, steps, ds};
  if (b_in.shape() != bc_shape || c_in.shape() != bc_shape) {
    throw ConfigError("selective_scan: B and C must be " + shape_str(bc_shape));
  }
  if (d_skip.shape() != Shape{di}) {
    throw ConfigError("selective_scan: D_skip must be [" + std::to_string(di) + "]");
  }
  for (double v : a.data()) {
    if (!(v < 0.0)) throw ConfigError("selective_scan: A must be strictly negative");
  }

  const auto uv = u.data(), dv = delta.data(), bv = b_in.data(), cv = c_in.data();
  const auto av = a.data(), sv = d_skip.data();
  // states[((b*T + t)*Di + c)*Ds + s] = h_t after step t
  auto states = std::make_shared<std::vector<double>>(batch * steps * di * ds);
  std::vector<double> out(batch * steps * di);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < di; ++c) {
      const double* arow = av.data() + c * ds;
      for (std::size_t t = 0; t < steps; ++t) {
        const std::size_t ti = (b * steps + t) * di + c;
        const double dt = dv[ti], ut = uv[ti];
        const double* bt = bv.data() + (b * steps + t) * ds;
        const double* ct = cv.data() + (b * steps + t) * ds;
        double* h = states->data() + ti * ds;
        const double* h_prev = t == 0 ? nullptr : h - di * ds;
        double y = sv[c] * ut;
        for (std::size_t s = 0; s < ds; ++s) {
          const double prev = h_prev ? h_prev[s] : 0.0;
          h[s] = std::exp(dt * arow[s]) * prev + dt * bt[s] * ut;
          y += ct[s] * h[s];
        }
        out[ti] = y;
      }
    }
  }
  Tensor y = Tensor::from(u.shape(), std::move(out));
  dwhar::detail::record(
      {u, delta, b_in, c_in, a, d_skip}, y,
      [u, delta, b_in, c_in, a, d_skip, y, states, batch, steps, di, ds]() mutable {
        const auto gy = y.grad();
        const auto uv = u.data(), dv = delta.data(), bv = b_in.data(), cv = c_in.data();
        const auto av = a.data(), sv = d_skip.data();
        auto grad_or_empty = [](const Tensor& t) {
          return t.requires_grad() ? t.mutable_grad() : std::span<double>();
        };
        auto gu = grad_or_empty(u);
        auto gd = grad_or_empty(delta);
        auto gb = grad_or_empty(b_in);
        auto gc = grad_or_empty(c_in);
        auto ga = grad_or_empty(a);
        auto gs = grad_or_empty(d_skip);
        std::vector<double> carry(ds);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t c = 0; c < di; ++c) {
            std::fill(carry.begin(), carry.end(), 0.0);
            const double* arow = av.data() + c * ds;
            for (std::size_t t = steps; t-- > 0;) {
              const std::size_t ti = (b * steps + t) * di + c;
              const double g = gy[ti], dt = dv[ti], ut = uv[ti];
              const std::size_t bc_off = (b * steps + t) * ds;
              const double* h = states->data() + ti * ds;
              const double* h_prev = t == 0 ? nullptr : h - di * ds;
              if (!gs.empty()) gs[c] += g * ut;
              double du = g * sv[c];
              double dd = 0.0;
              for (std::size_t s = 0; s < ds; ++s) {
                const double gh = g * cv[bc_off + s] + carry[s];
                if (!gc.empty()) gc[bc_off + s] += g * h[s];
                const double decay = std::exp(dt * arow[s]);
                const double prev = h_prev ? h_prev[s] : 0.0;
                const double g_decay = gh * prev * decay;
                dd += g_decay * arow[s] + gh * bv[bc_off + s] * ut;
                if (!ga.empty()) ga[c * ds + s] += g_decay * dt;
                if (!gb.empty()) gb[bc_off + s] += gh * dt * ut;
                du += gh * dt * bv[bc_off + s];
                carry[s] = gh * decay;
              }
              if (!gu.empty()) gu[ti] += du;
              if (!gd.empty()) gd[ti] += dd;
            }
          }
        }
      });
  return y;
}

}  // namespace dwhar
