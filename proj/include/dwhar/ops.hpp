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

// Differentiable tensor operations. Every function here is pure with respect
// to its inputs and records a backward rule on the active tape, if any.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "dwhar/tensor.hpp"

namespace dwhar::ops {

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ConfigError(std::string(op) + ": shape mismatch " +
                      shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

/// Sum whose result does not depend on the order of `terms` (sorted first).
inline double sorted_sum(std::vector<double>& terms) {
  std::sort(terms.begin(), terms.end());
  double s = 0.0;
  for (double t : terms) s += t;
  return s;
}

inline std::size_t normalize_axis(int axis, std::size_t rank, const char* op) {
  const int r = static_cast<int>(rank);
  if (axis < -r || axis >= r) {
    throw ConfigError(std::string(op) + ": axis " + std::to_string(axis) +
                      " out of range for rank " + std::to_string(rank));
  }
  return static_cast<std::size_t>(axis < 0 ? axis + r : axis);
}

// Shared implementation of elementwise unary maps: y = f(x), dy/dx = df(x, y).
template <class F, class DF>
Tensor unary(const Tensor& x, F f, DF df) {
  std::vector<double> out(x.size());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  Tensor y = Tensor::from(x.shape(), std::move(out));
  dwhar::detail::record({x}, y, [x, y, df]() mutable {
    const auto gy = y.grad();
    const auto xv = x.data();
    const auto yv = y.data();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * df(xv[i], yv[i]);
  });
  return y;
}

inline double sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  Tensor y = Tensor::from(a.shape(), std::move(out));
  dwhar::detail::record({a, b}, y, [a, b, y]() mutable {
    const auto gy = y.grad();
    if (a.requires_grad()) {
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i];
    }
    if (b.requires_grad()) {
      auto gb = b.mutable_grad();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gy[i];
    }
  });
  return y;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  Tensor y = Tensor::from(a.shape(), std::move(out));
  dwhar::detail::record({a, b}, y, [a, b, y]() mutable {
    const auto gy = y.grad();
    if (a.requires_grad()) {
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i];
    }
    if (b.requires_grad()) {
      auto gb = b.mutable_grad();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= gy[i];
    }
  });
  return y;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  Tensor y = Tensor::from(a.shape(), std::move(out));
  dwhar::detail::record({a, b}, y, [a, b, y]() mutable {
    const auto gy = y.grad();
    if (a.requires_grad()) {
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i] * b[i];
    }
    if (b.requires_grad()) {
      auto gb = b.mutable_grad();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gy[i] * a[i];
    }
  });
  return y;
}

inline Tensor scale(const Tensor& x, double factor) {
  return detail::unary(
      x, [factor](double v) { return factor * v; },
      [factor](double, double) { return factor; });
}

inline Tensor neg(const Tensor& x) { return scale(x, -1.0); }

inline Tensor exp(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

/// Sum of all elements as a shape-[1] tensor.
inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor y = Tensor::scalar(s);
  dwhar::detail::record({x}, y, [x, y]() mutable {
    const double g = y.grad()[0];
    for (double& gx : x.mutable_grad()) gx += g;
  });
  return y;
}

// ---------------------------------------------------------------------------
// Activations

/// Exact GELU, x * Phi(x) with Phi the standard normal CDF.
inline Tensor gelu(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0)); },
      [](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
        const double pdf = std::exp(-0.5 * v * v) * std::numbers::inv_sqrtpi /
                           std::numbers::sqrt2;
        return cdf + v * pdf;
      });
}

inline Tensor silu(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return v * detail::sigmoid(v); },
      [](double v, double) {
        const double s = detail::sigmoid(v);
        return s * (1.0 + v * (1.0 - s));
      });
}

inline Tensor softplus(const Tensor& x) {
  return detail::unary(
      x,
      [](double v) { return v > 30.0 ? v : std::log1p(std::exp(v)); },
      [](double v, double) { return detail::sigmoid(v); });
}

// ---------------------------------------------------------------------------
// Shape manipulation

/// Metadata-only reshape; the result shares storage with `x`.
inline Tensor reshape(const Tensor& x, Shape shape) {
  Tensor y = x.view(std::move(shape));
  dwhar::detail::record({x}, y, [x, y]() mutable {
    const auto gy = y.grad();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
  });
  return y;
}

/// Copying axis permutation: output axis i is input axis `axes[i]`.
inline Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const std::size_t rank = x.rank();
  if (axes.size() != rank) {
    throw ConfigError("permute: expected " + std::to_string(rank) + " axes");
  }
  std::vector<bool> seen(rank, false);
  for (std::size_t a : axes) {
    if (a >= rank || seen[a]) throw ConfigError("permute: invalid axis list");
    seen[a] = true;
  }
  const Shape& in_shape = x.shape();
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank - 1; i-- > 0;) in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
  Shape out_shape(rank);
  std::vector<std::size_t> src_strides(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = in_shape[axes[i]];
    src_strides[i] = in_strides[axes[i]];
  }
  // Flat source offset for every output element, reused by the backward rule.
  const std::size_t n = x.size();
  auto index = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < n; ++i) {
    (*index)[i] = offset;
    for (std::size_t d = rank; d-- > 0;) {
      ++counter[d];
      offset += src_strides[d];
      if (counter[d] < out_shape[d]) break;
      offset -= src_strides[d] * counter[d];
      counter[d] = 0;
    }
  }
  std::vector<double> out(n);
  const auto xv = x.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = xv[(*index)[i]];
  Tensor y = Tensor::from(std::move(out_shape), std::move(out));
  dwhar::detail::record({x}, y, [x, y, index]() mutable {
    const auto gy = y.grad();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < gy.size(); ++i) gx[(*index)[i]] += gy[i];
  });
  return y;
}

/// Arithmetic mean over one axis; the axis is removed from the shape.
inline Tensor mean_axis(const Tensor& x, int axis) {
  const std::size_t ax = detail::normalize_axis(axis, x.rank(), "mean_axis");
  const Shape& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[ax];
  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i != ax) out_shape.push_back(s[i]);
  }
  if (out_shape.empty()) out_shape.push_back(1);
  std::vector<double> out(outer * inner, 0.0);
  const auto xv = x.data();
  const double inv = 1.0 / static_cast<double>(len);
  std::vector<double> terms(len);  // sorted, so the mean is invariant to order along `axis`
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      for (std::size_t k = 0; k < len; ++k) terms[k] = xv[(o * len + k) * inner + i];
      out[o * inner + i] = detail::sorted_sum(terms) * inv;
    }
  }
  Tensor y = Tensor::from(std::move(out_shape), std::move(out));
  dwhar::detail::record({x}, y, [x, y, outer, inner, len, inv]() mutable {
    const auto gy = y.grad();
    auto gx = x.mutable_grad();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t k = 0; k < len; ++k) {
        for (std::size_t i = 0; i < inner; ++i) {
          gx[(o * len + k) * inner + i] += gy[o * inner + i] * inv;
        }
      }
    }
  });
  return y;
}

// ---------------------------------------------------------------------------
// Linear algebra

namespace detail {

inline Tensor matmul_impl(const Tensor& a, const Tensor& b, bool order_invariant) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw ConfigError("matmul: operands need rank >= 2, got " +
                      shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t p = a.dim(a.rank() - 2), q = a.dim(a.rank() - 1);
  const std::size_t q2 = b.dim(b.rank() - 2), r = b.dim(b.rank() - 1);
  if (q != q2) {
    throw ConfigError("matmul: inner dimension mismatch " + std::to_string(q) +
                      " vs " + std::to_string(q2));
  }
  const Shape a_batch(a.shape().begin(), a.shape().end() - 2);
  const Shape b_batch(b.shape().begin(), b.shape().end() - 2);
  Shape batch;
  if (a_batch == b_batch || b_batch.empty()) {
    batch = a_batch;
  } else if (a_batch.empty()) {
    batch = b_batch;
  } else {
    throw ConfigError("matmul: batch dimensions " + shape_str(a_batch) + " and " +
                      shape_str(b_batch) + " are not broadcastable");
  }
  const std::size_t nb = numel(batch);
  const std::size_t a_step = a_batch.empty() ? 0 : p * q;
  const std::size_t b_step = b_batch.empty() ? 0 : q * r;
  std::vector<double> out(nb * p * r, 0.0);
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> terms(q);
  for (std::size_t n = 0; n < nb; ++n) {
    const double* A = av.data() + n * a_step;
    const double* B = bv.data() + n * b_step;
    double* C = out.data() + n * p * r;
    for (std::size_t i = 0; i < p; ++i) {
      if (order_invariant) {
        for (std::size_t j = 0; j < r; ++j) {
          for (std::size_t k = 0; k < q; ++k) terms[k] = A[i * q + k] * B[k * r + j];
          C[i * r + j] = sorted_sum(terms);
        }
        continue;
      }
      for (std::size_t k = 0; k < q; ++k) {
        const double aik = A[i * q + k];
        for (std::size_t j = 0; j < r; ++j) C[i * r + j] += aik * B[k * r + j];
      }
    }
  }
  Shape out_shape = batch;
  out_shape.push_back(p);
  out_shape.push_back(r);
  Tensor y = Tensor::from(std::move(out_shape), std::move(out));
  dwhar::detail::record({a, b}, y, [a, b, y, nb, p, q, r, a_step, b_step]() mutable {
    const auto gy = y.grad();
    const auto av = a.data();
    const auto bv = b.data();
    if (a.requires_grad()) {
      auto ga = a.mutable_grad();
      for (std::size_t n = 0; n < nb; ++n) {
        const double* G = gy.data() + n * p * r;
        const double* B = bv.data() + n * b_step;
        double* GA = ga.data() + n * a_step;
        for (std::size_t i = 0; i < p; ++i) {
          for (std::size_t k = 0; k < q; ++k) {
            double s = 0.0;
            for (std::size_t j = 0; j < r; ++j) s += G[i * r + j] * B[k * r + j];
            GA[i * q + k] += s;
          }
        }
      }
    }
    if (b.requires_grad()) {
      auto gb = b.mutable_grad();
      for (std::size_t n = 0; n < nb; ++n) {
        const double* G = gy.data() + n * p * r;
        const double* A = av.data() + n * a_step;
        double* GB = gb.data() + n * b_step;
        for (std::size_t i = 0; i < p; ++i) {
          for (std::size_t k = 0; k < q; ++k) {
            const double aik = A[i * q + k];
            for (std::size_t j = 0; j < r; ++j) GB[k * r + j] += aik * G[i * r + j];
          }
        }
      }
    }
  });
  return y;
}

}  // namespace detail

/// Batched matrix product a[..., P, Q] x b[..., Q, R] -> [..., P, R].
/// Batch dimensions must match exactly, or one operand must be a plain matrix
/// that is broadcast over the other's batch.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  return detail::matmul_impl(a, b, false);
}

/// matmul whose inner sums are taken in sorted order, so permuting the inner
/// axis of `a` together with the rows of `b` leaves the result bitwise equal.
inline Tensor matmul_order_invariant(const Tensor& a, const Tensor& b) {
  return detail::matmul_impl(a, b, true);
}

/// Affine map over the last axis: y = x W^T + b, W of shape [out, in].
inline Tensor linear(const Tensor& x, const Tensor& weight,
                     const std::optional<Tensor>& bias = std::nullopt) {
  if (weight.rank() != 2) {
    throw ConfigError("linear: weight must be [out, in], got " + shape_str(weight.shape()));
  }
  const std::size_t in = weight.dim(1), out_f = weight.dim(0);
  if (x.rank() < 1 || x.dim(x.rank() - 1) != in) {
    throw ConfigError("linear: input feature dimension of " + shape_str(x.shape()) +
                      " does not match weight " + shape_str(weight.shape()));
  }
  if (bias && (bias->rank() != 1 || bias->dim(0) != out_f)) {
    throw ConfigError("linear: bias shape " + shape_str(bias->shape()) +
                      " does not match " + std::to_string(out_f) + " outputs");
  }
  const std::size_t rows = x.size() / in;
  std::vector<double> out(rows * out_f);
  const auto xv = x.data();
  const auto wv = weight.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * in;
    for (std::size_t o = 0; o < out_f; ++o) {
      const double* wo = wv.data() + o * in;
      double s = bias ? (*bias)[o] : 0.0;
      for (std::size_t i = 0; i < in; ++i) s += xr[i] * wo[i];
      out[r * out_f + o] = s;
    }
  }
  Shape out_shape = x.shape();
  out_shape.back() = out_f;
  Tensor y = Tensor::from(std::move(out_shape), std::move(out));
  Tensor b = bias ? *bias : Tensor();
  dwhar::detail::record({x, weight, b}, y, [x, weight, b, y, rows, in, out_f]() mutable {
    const auto gy = y.grad();
    const auto xv = x.data();
    const auto wv = weight.data();
    if (x.requires_grad()) {
      auto gx = x.mutable_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        double* gxr = gx.data() + r * in;
        for (std::size_t o = 0; o < out_f; ++o) {
          const double g = gy[r * out_f + o];
          const double* wo = wv.data() + o * in;
          for (std::size_t i = 0; i < in; ++i) gxr[i] += g * wo[i];
        }
      }
    }
    if (weight.requires_grad()) {
      auto gw = weight.mutable_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xv.data() + r * in;
        for (std::size_t o = 0; o < out_f; ++o) {
          const double g = gy[r * out_f + o];
          double* gwo = gw.data() + o * in;
          for (std::size_t i = 0; i < in; ++i) gwo[i] += g * xr[i];
        }
      }
    }
    if (b.defined() && b.requires_grad()) {
      auto gb = b.mutable_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t o = 0; o < out_f; ++o) gb[o] += gy[r * out_f + o];
      }
    }
  });
  return y;
}

// ---------------------------------------------------------------------------
// Convolution

/// Grouped 1-D convolution with independent left/right zero padding.
///   input  [B, C_in, T_in], weight [C_out, C_in/G, K], bias [C_out]
///   output [B, C_out, (T_in + pad_left + pad_right - K)/stride + 1]
inline Tensor conv1d_grouped(const Tensor& input, const Tensor& weight,
                             const std::optional<Tensor>& bias, std::size_t stride,
                             std::size_t pad_left, std::size_t pad_right,
                             std::size_t groups) {
  if (input.rank() != 3) {
    throw ConfigError("conv1d: input must be [B, C_in, T], got " + shape_str(input.shape()));
  }
  if (weight.rank() != 3) {
    throw ConfigError("conv1d: weight must be [C_out, C_in/G, K], got " +
                      shape_str(weight.shape()));
  }
  if (stride == 0) throw ConfigError("conv1d: stride must be positive");
  if (groups == 0) throw ConfigError("conv1d: groups must be positive");
  const std::size_t batch = input.dim(0), c_in = input.dim(1), t_in = input.dim(2);
  const std::size_t c_out = weight.dim(0), c_in_g = weight.dim(1), k = weight.dim(2);
  if (c_in % groups != 0) {
    throw ConfigError("conv1d: C_in=" + std::to_string(c_in) +
                      " not divisible by groups=" + std::to_string(groups));
  }
  if (c_out % groups != 0) {
    throw ConfigError("conv1d: C_out=" + std::to_string(c_out) +
                      " not divisible by groups=" + std::to_string(groups));
  }
  if (c_in_g != c_in / groups) {
    throw ConfigError("conv1d: weight C_in/G=" + std::to_string(c_in_g) + ", expected " +
                      std::to_string(c_in / groups));
  }
  if (bias && (bias->rank() != 1 || bias->dim(0) != c_out)) {
    throw ConfigError("conv1d: bias C_out=" + shape_str(bias->shape()) + ", expected [" +
                      std::to_string(c_out) + "]");
  }
  const std::size_t padded = t_in + pad_left + pad_right;
  if (padded < k) {
    throw ConfigError("conv1d: zero-length output (T_in + padding = " +
                      std::to_string(padded) + " < K = " + std::to_string(k) + ")");
  }
  const std::size_t t_out = (padded - k) / stride + 1;
  const std::size_t c_out_g = c_out / groups;

  std::vector<double> out(batch * c_out * t_out);
  const auto xv = input.data();
  const auto wv = weight.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t oc = 0; oc < c_out; ++oc) {
      const std::size_t g = oc / c_out_g;
      const double bval = bias ? (*bias)[oc] : 0.0;
      double* yrow = out.data() + (b * c_out + oc) * t_out;
      for (std::size_t t = 0; t < t_out; ++t) yrow[t] = bval;
      for (std::size_t ic = 0; ic < c_in_g; ++ic) {
        const double* xrow = xv.data() + (b * c_in + g * c_in_g + ic) * t_in;
        const double* w = wv.data() + (oc * c_in_g + ic) * k;
        for (std::size_t t = 0; t < t_out; ++t) {
          const std::ptrdiff_t base = static_cast<std::ptrdiff_t>(t * stride) -
                                      static_cast<std::ptrdiff_t>(pad_left);
          double s = 0.0;
          for (std::size_t j = 0; j < k; ++j) {
            const std::ptrdiff_t pos = base + static_cast<std::ptrdiff_t>(j);
            if (pos >= 0 && pos < static_cast<std::ptrdiff_t>(t_in)) s += w[j] * xrow[pos];
          }
          yrow[t] += s;
        }
      }
    }
  }
  Tensor y = Tensor::from({batch, c_out, t_out}, std::move(out));
  Tensor bt = bias ? *bias : Tensor();
  dwhar::detail::record(
      {input, weight, bt}, y,
      [input, weight, bt, y, batch, c_in, t_in, c_out, c_in_g, c_out_g, k, t_out, stride,
       pad_left]() mutable {
        const auto gy = y.grad();
        const auto xv = input.data();
        const auto wv = weight.data();
        const bool want_x = input.requires_grad();
        const bool want_w = weight.requires_grad();
        std::span<double> gx = want_x ? input.mutable_grad() : std::span<double>();
        std::span<double> gw = want_w ? weight.mutable_grad() : std::span<double>();
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t oc = 0; oc < c_out; ++oc) {
            const std::size_t g = oc / c_out_g;
            const double* grow = gy.data() + (b * c_out + oc) * t_out;
            for (std::size_t ic = 0; ic < c_in_g; ++ic) {
              const std::size_t xoff = (b * c_in + g * c_in_g + ic) * t_in;
              const std::size_t woff = (oc * c_in_g + ic) * k;
              for (std::size_t t = 0; t < t_out; ++t) {
                const double gv = grow[t];
                const std::ptrdiff_t base = static_cast<std::ptrdiff_t>(t * stride) -
                                            static_cast<std::ptrdiff_t>(pad_left);
                for (std::size_t j = 0; j < k; ++j) {
                  const std::ptrdiff_t pos = base + static_cast<std::ptrdiff_t>(j);
                  if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(t_in)) continue;
                  if (want_x) gx[xoff + pos] += gv * wv[woff + j];
                  if (want_w) gw[woff + j] += gv * xv[xoff + pos];
                }
              }
            }
          }
        }
        if (bt.defined() && bt.requires_grad()) {
          auto gb = bt.mutable_grad();
          for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t oc = 0; oc < c_out; ++oc) {
              const double* grow = gy.data() + (b * c_out + oc) * t_out;
              for (std::size_t t = 0; t < t_out; ++t) gb[oc] += grow[t];
            }
          }
        }
      });
  return y;
}

/// Symmetric-padding convenience form.
inline Tensor conv1d_grouped(const Tensor& input, const Tensor& weight,
                             const std::optional<Tensor>& bias, std::size_t stride,
                             std::size_t padding, std::size_t groups) {
  return conv1d_grouped(input, weight, bias, stride, padding, padding, groups);
}

// ---------------------------------------------------------------------------
// Normalization

/// Softmax along `axis`, max-subtracted.
inline Tensor softmax_axis(const Tensor& x, int axis) {
  const std::size_t ax = detail::normalize_axis(axis, x.rank(), "softmax_axis");
  const Shape& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[ax];
  std::vector<double> out(x.size());
  std::vector<double> terms(len);  // denominator is summed in sorted order
  const auto xv = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * len * inner + i;
      double mx = xv[base];
      for (std::size_t k = 1; k < len; ++k) mx = std::max(mx, xv[base + k * inner]);
      for (std::size_t k = 0; k < len; ++k) {
        const double e = std::exp(xv[base + k * inner] - mx);
        out[base + k * inner] = e;
        terms[k] = e;
      }
      const double z = detail::sorted_sum(terms);
      for (std::size_t k = 0; k < len; ++k) out[base + k * inner] /= z;
    }
  }
  Tensor y = Tensor::from(s, std::move(out));
  dwhar::detail::record({x}, y, [x, y, outer, inner, len]() mutable {
    const auto gy = y.grad();
    const auto yv = y.data();
    auto gx = x.mutable_grad();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t base = o * len * inner + i;
        double dot = 0.0;
        for (std::size_t k = 0; k < len; ++k) dot += gy[base + k * inner] * yv[base + k * inner];
        for (std::size_t k = 0; k < len; ++k) {
          const std::size_t idx = base + k * inner;
          gx[idx] += yv[idx] * (gy[idx] - dot);
        }
      }
    }
  });
  return y;
}

/// Per-row standardization over the last axis with a learned per-channel
/// affine map: x is [B, C, T], scale and shift are [C]. Statistics never mix
/// batch elements.
inline Tensor channel_norm(const Tensor& x, const Tensor& scale_param,
                           const Tensor& shift_param, double eps = 1e-5) {
  if (x.rank() != 3) {
    throw ConfigError("channel_norm: input must be [B, C, T], got " + shape_str(x.shape()));
  }
  const std::size_t batch = x.dim(0), ch = x.dim(1), len = x.dim(2);
  if (scale_param.shape() != Shape{ch} || shift_param.shape() != Shape{ch}) {
    throw ConfigError("channel_norm: scale/shift must be [" + std::to_string(ch) + "]");
  }
  const std::size_t rows = batch * ch;
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(x.size());
  const auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * len;
    double mean = 0.0;
    for (std::size_t t = 0; t < len; ++t) mean += xr[t];
    mean /= static_cast<double>(len);
    double var = 0.0;
    for (std::size_t t = 0; t < len; ++t) var += (xr[t] - mean) * (xr[t] - mean);
    var /= static_cast<double>(len);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    const std::size_t c = r % ch;
    for (std::size_t t = 0; t < len; ++t) {
      const double h = (xr[t] - mean) * is;
      (*xhat)[r * len + t] = h;
      out[r * len + t] = h * scale_param[c] + shift_param[c];
    }
  }
  Tensor y = Tensor::from(x.shape(), std::move(out));
  dwhar::detail::record(
      {x, scale_param, shift_param}, y,
      [x, scale_param, shift_param, y, xhat, inv_std, rows, ch, len]() mutable {
        const auto gy = y.grad();
        const double n = static_cast<double>(len);
        std::span<double> gx = x.requires_grad() ? x.mutable_grad() : std::span<double>();
        std::span<double> gs =
            scale_param.requires_grad() ? scale_param.mutable_grad() : std::span<double>();
        std::span<double> gb =
            shift_param.requires_grad() ? shift_param.mutable_grad() : std::span<double>();
        for (std::size_t r = 0; r < rows; ++r) {
          const std::size_t c = r % ch;
          const double* g = gy.data() + r * len;
          const double* h = xhat->data() + r * len;
          double sum_g = 0.0, sum_gh = 0.0;
          for (std::size_t t = 0; t < len; ++t) {
            sum_g += g[t];
            sum_gh += g[t] * h[t];
          }
          if (!gs.empty()) gs[c] += sum_gh;
          if (!gb.empty()) gb[c] += sum_g;
          if (!gx.empty()) {
            const double a = scale_param[c] * (*inv_std)[r];
            for (std::size_t t = 0; t < len; ++t) {
              gx[r * len + t] += a * (g[t] - sum_g / n - h[t] * sum_gh / n);
            }
          }
        }
      });
  return y;
}

}  // namespace dwhar::ops
