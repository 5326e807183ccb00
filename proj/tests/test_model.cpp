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

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dwhar/dwhar.hpp"
#include "model_fixtures.hpp"
#include "oracles.hpp"

using namespace dwhar;

namespace {

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  EXPECT_EQ(a.size(), b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double gelu_ref(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }
double silu_ref(double x) { return x / (1.0 + std::exp(-x)); }
double softplus_ref(double x) { return std::log1p(std::exp(x)); }

ModelConfig small_config() {
  ModelConfig c = ModelConfig::tiny();
  c.n_sensors = 3;
  c.n_vars = 2;
  c.d_model = 3;
  c.heads = 3;
  return c;
}

// norm over T per row, two grouped point-wise convs with GELU between, residual.
std::vector<double> fusion_oracle(const Tensor& x, const ModelState& st, const std::string& p,
                                  std::size_t groups) {
  const std::size_t B = x.dim(0), C = x.dim(1), T = x.dim(2);
  const auto scale = st.get(p + ".norm.scale"), shift = st.get(p + ".norm.shift");
  std::vector<double> h(x.size());
  for (std::size_t r = 0; r < B * C; ++r) {
    double mu = 0, var = 0;
    for (std::size_t t = 0; t < T; ++t) mu += x[r * T + t];
    mu /= static_cast<double>(T);
    for (std::size_t t = 0; t < T; ++t) var += (x[r * T + t] - mu) * (x[r * T + t] - mu);
    var /= static_cast<double>(T);
    for (std::size_t t = 0; t < T; ++t)
      h[r * T + t] = (x[r * T + t] - mu) / std::sqrt(var + 1e-5) * scale[r % C] + shift[r % C];
  }
  const Tensor w1 = st.get(p + ".w1"), w2 = st.get(p + ".w2");
  const std::vector<double> b1(st.get(p + ".b1").data().begin(), st.get(p + ".b1").data().end());
  const std::vector<double> b2(st.get(p + ".b2").data().begin(), st.get(p + ".b2").data().end());
  auto mid = oracle::conv1d(Tensor::from(x.shape(), h), w1, &b1, 1, 0, 0, groups);
  for (double& v : mid) v = gelu_ref(v);
  auto out = oracle::conv1d(Tensor::from({B, w1.dim(0), T}, mid), w2, &b2, 1, 0, 0, groups);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += x[i];
  return out;
}

// The five SSM-block stages written out with explicit loops.
std::vector<double> mamba_oracle(const Tensor& x, const ModelConfig& cfg, const ModelState& st) {
  const std::size_t Bn = x.dim(0), D = x.dim(1), T = x.dim(2), Di = cfg.d_inner(),
                    Ds = cfg.d_state, K = cfg.d_conv;
  const Tensor &win = st.get("mamba.in_proj"), &wg = st.get("mamba.gate_proj"),
               &cw = st.get("mamba.conv.weight"), &cb = st.get("mamba.conv.bias"),
               &dtw = st.get("mamba.dt_proj.weight"), &dtb = st.get("mamba.dt_proj.bias"),
               &bp = st.get("mamba.b_proj"), &cp = st.get("mamba.c_proj"),
               &alog = st.get("mamba.A_log"), &dsk = st.get("mamba.D_skip"),
               &wo = st.get("mamba.out_proj");
  std::vector<double> out(x.size());
  for (std::size_t b = 0; b < Bn; ++b) {
    auto X = [&](std::size_t t, std::size_t d) { return x[(b * D + d) * T + t]; };
    std::vector<std::vector<double>> u0(T, std::vector<double>(Di)), u(T, std::vector<double>(Di));
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t c = 0; c < Di; ++c)
        for (std::size_t d = 0; d < D; ++d) u0[t][c] += win[c * D + d] * X(t, d);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t c = 0; c < Di; ++c) {
        double acc = cb[c];
        for (std::size_t k = 0; k < K; ++k) {
          const long src = static_cast<long>(t + k) - static_cast<long>(K - 1);
          if (src >= 0) acc += cw[c * K + k] * u0[static_cast<std::size_t>(src)][c];
        }
        u[t][c] = silu_ref(acc);
      }
    std::vector<double> h(Di * Ds, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
      std::vector<double> bt(Ds), ct(Ds), y(Di);
      for (std::size_t s = 0; s < Ds; ++s)
        for (std::size_t j = 0; j < Di; ++j) {
          bt[s] += bp[s * Di + j] * u[t][j];
          ct[s] += cp[s * Di + j] * u[t][j];
        }
      for (std::size_t c = 0; c < Di; ++c) {
        double z = dtb[c];
        for (std::size_t j = 0; j < Di; ++j) z += dtw[c * Di + j] * u[t][j];
        const double delta = softplus_ref(z);
        y[c] = dsk[c] * u[t][c];
        for (std::size_t s = 0; s < Ds; ++s) {
          const double a = -std::exp(alog[c * Ds + s]);
          h[c * Ds + s] = std::exp(delta * a) * h[c * Ds + s] + delta * bt[s] * u[t][c];
          y[c] += ct[s] * h[c * Ds + s];
        }
        double g = 0.0;
        for (std::size_t d = 0; d < D; ++d) g += wg[c * D + d] * X(t, d);
        y[c] *= silu_ref(g);
      }
      for (std::size_t d = 0; d < D; ++d) {
        double acc = 0.0;
        for (std::size_t c = 0; c < Di; ++c) acc += wo[d * Di + c] * y[c];
        out[(b * D + d) * T + t] = acc;
      }
    }
  }
  return out;
}

}  // namespace

TEST(Embedding, OpportunityShape) {
  ModelConfig cfg;
  ModelState st = init_model(cfg);
  Tensor y = mse_embed(Tensor::zeros({2, 5, 9, 24}), cfg, st);
  EXPECT_EQ(y.shape(), (Shape{2, 5, 9, 64, 3}));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(Embedding, IdentityKernelBroadcastsInput) {
  ModelConfig cfg = ModelConfig::tiny();
  cfg.d_model = 1;
  cfg.patch = 1;
  cfg.stride = 1;
  cfg.heads = 1;
  ModelState st = init_model(cfg);
  fixtures::fill(st, "mse.weight", 1.0);
  std::mt19937_64 rng(1);
  Tensor x = oracle::random_tensor({2, 2, 3, 9}, rng);
  EXPECT_EQ(max_abs_diff(mse_embed(x, cfg, st).data(), x.data()), 0.0);
}

TEST(Embedding, RightPaddingMatchesOracle) {
  ModelConfig cfg = ModelConfig::tiny();
  cfg.window = 10;  // ceil(10/3) = 4 steps, needs 2 samples of right padding
  std::mt19937_64 rng(2);
  ModelState st = init_model(cfg);
  fixtures::randomize(st, rng);
  Tensor x = oracle::random_tensor({2, 2, 3, 10}, rng);
  const std::vector<double> bias(st.get("mse.bias").data().begin(), st.get("mse.bias").data().end());
  const auto ref = oracle::conv1d(Tensor::from({2, 6, 10}, std::vector<double>(x.data().begin(), x.data().end())),
                                  st.get("mse.weight"), &bias, 3, 0, 2, 6);
  Tensor y = mse_embed(x, cfg, st);
  EXPECT_EQ(y.shape(), (Shape{2, 2, 3, 4, 4}));
  EXPECT_LT(max_abs_diff(y.data(), ref), 1e-12);
}

TEST(Lte, IdentityKernelAndWeightSharing) {
  ModelConfig cfg = ModelConfig::tiny();
  cfg.lte_kernel = 1;
  ModelState st = init_model(cfg);
  fixtures::fill(st, "lte.weight", 1.0);
  std::mt19937_64 rng(3);
  Tensor x = oracle::random_tensor({2, 2, 3, 4, 3}, rng);
  EXPECT_EQ(max_abs_diff(lte_extract(x, cfg, st).data(), x.data()), 0.0);

  cfg.lte_kernel = 3;
  ModelState st3 = init_model(cfg);
  fixtures::randomize(st3, rng);
  const std::size_t per_sensor = 3 * 4 * 3;
  std::vector<double> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i / (2 * per_sensor) * 2 * per_sensor + i % per_sensor];
  Tensor y = lte_extract(Tensor::from(x.shape(), v), cfg, st3);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t k = 0; k < per_sensor; ++k)
      EXPECT_EQ(y[(b * 2) * per_sensor + k], y[(b * 2 + 1) * per_sensor + k]);
}

TEST(Lte, RandomMatchesPerChannelLoop) {
  ModelConfig cfg = small_config();
  cfg.lte_kernel = 5;
  std::mt19937_64 rng(4);
  ModelState st = init_model(cfg);
  fixtures::randomize(st, rng);
  const std::size_t B = 2, N = 3, M = 2, D = 3, T = 3, K = 5;
  Tensor x = oracle::random_tensor({B, N, M, D, T}, rng);
  Tensor y = lte_extract(x, cfg, st);
  const Tensor &w = st.get("lte.weight"), &bias = st.get("lte.bias");
  double worst = 0;
  for (std::size_t r = 0; r < B * N; ++r)
    for (std::size_t c = 0; c < M * D; ++c)
      for (std::size_t t = 0; t < T; ++t) {
        double acc = bias[c];
        for (std::size_t k = 0; k < K; ++k) {
          const long s = static_cast<long>(t + k) - 2;
          if (s >= 0 && s < static_cast<long>(T)) acc += w[c * K + k] * x[(r * M * D + c) * T + static_cast<std::size_t>(s)];
        }
        worst = std::max(worst, std::abs(acc - y[(r * M * D + c) * T + t]));
      }
  EXPECT_LT(worst, 1e-10);
}

TEST(Lte, RejectsEvenKernel) {
  ModelConfig cfg = ModelConfig::tiny();
  ModelState st = init_model(cfg);
  cfg.lte_kernel = 2;
  EXPECT_THROW(lte_extract(Tensor::zeros({1, 2, 3, 4, 3}), cfg, st), ConfigError);
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(DepthwiseConv, ChannelPermutationEquivarianceIsExact) {
  std::mt19937_64 rng(5);
  const std::size_t C = 7, K = 3;
  Tensor x = oracle::random_tensor({2, C, 6}, rng);
  Tensor w = oracle::random_tensor({C, 1, K}, rng);
  Tensor b = oracle::random_tensor({C}, rng);
  std::vector<std::size_t> perm(C);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<double> xp(x.size()), wp(w.size()), bp(C);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t t = 0; t < 6; ++t) xp[(i * C + c) * 6 + t] = x[(i * C + perm[c]) * 6 + t];
    for (std::size_t k = 0; k < K; ++k) wp[c * K + k] = w[perm[c] * K + k];
    bp[c] = b[perm[c]];
  }
  Tensor y = ops::conv1d_grouped(x, w, b, 1, 1, C);
  Tensor yp = ops::conv1d_grouped(Tensor::from(x.shape(), xp), Tensor::from(w.shape(), wp),
                                  Tensor::from({C}, bp), 1, 1, C);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t t = 0; t < 6; ++t) ASSERT_EQ(yp[(i * C + c) * 6 + t], y[(i * C + perm[c]) * 6 + t]);
}

TEST(Ccf, ZeroWeightsArePureResidual) {
  ModelConfig cfg = small_config();
  ModelState st = init_model(cfg);
  fixtures::fill(st, "ccf.w1", 0.0);
  fixtures::fill(st, "ccf.w2", 0.0);
  std::mt19937_64 rng(6);
  Tensor x = oracle::random_tensor({2, 6, 3}, rng);
  EXPECT_EQ(max_abs_diff(ccf_fuse(x, cfg, st).data(), x.data()), 0.0);
}

TEST(Ccf, BlockDiagonalPerVariable) {
  ModelConfig cfg = small_config();
  std::mt19937_64 rng(7);
  ModelState st = init_model(cfg);
  fixtures::randomize(st, rng);
  Tensor x = oracle::random_tensor({1, 6, 3}, rng);
  std::vector<double> v(x.data().begin(), x.data().end());
  for (std::size_t t = 0; t < 3; ++t) v[(0 * 3 + 1) * 3 + t] += 0.7;  // variable 0, channel 1
  Tensor y0 = ccf_fuse(x, cfg, st), y1 = ccf_fuse(Tensor::from(x.shape(), v), cfg, st);
  for (std::size_t i = 9; i < 18; ++i) EXPECT_EQ(y0[i], y1[i]) << "variable 1 must not move";
  double moved = 0;
  for (std::size_t i = 0; i < 9; ++i) moved += std::abs(y0[i] - y1[i]);
  EXPECT_GT(moved, 0.0);
}

TEST(Ccf, RandomMatchesOracle) {
  ModelConfig cfg = small_config();
  std::mt19937_64 rng(8);
  ModelState st = init_model(cfg);
  fixtures::randomize(st, rng);
  Tensor x = oracle::random_tensor({4, 6, 3}, rng);
  EXPECT_LT(max_abs_diff(ccf_fuse(x, cfg, st).data(), fusion_oracle(x, st, "ccf", 2)), 1e-10);
}

TEST(Cvf, ZeroWeightsGiveTransposedInput) {
  ModelConfig cfg = small_config();
  ModelState st = init_model(cfg);
  fixtures::fill(st, "cvf.w1", 0.0);
  fixtures::fill(st, "cvf.w2", 0.0);
  std::mt19937_64 rng(9);
  Tensor x = oracle::random_tensor({2, 6, 3}, rng);  // index m*D + d
  Tensor y = cvf_fuse(x, cfg, st);                   // index d*M + m
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t m = 0; m < 2; ++m)
      for (std::size_t d = 0; d < 3; ++d)
        for (std::size_t t = 0; t < 3; ++t)
          EXPECT_EQ(y[((b * 6) + d * 2 + m) * 3 + t], x[((b * 6) + m * 3 + d) * 3 + t]);
}

TEST(Cvf, BlockDiagonalPerChannelAndOracle) {
  ModelConfig cfg = small_config();
  std::mt19937_64 rng(10);
  ModelState st = init_model(cfg);
  fixtures::randomize(st, rng);
  Tensor x = oracle::random_tensor({3, 6, 3}, rng);
  Tensor xt = ops::permute(ops::reshape(x, {3, 2, 3, 3}), {0, 2, 1, 3});
  const auto ref = fusion_oracle(ops::reshape(xt, {3, 6, 3}), st, "cvf", 3);
  Tensor y = cvf_fuse(x, cfg, st);
  EXPECT_LT(max_abs_diff(y.data(), ref), 1e-10);

  std::vector<double> v(x.data().begin(), x.data().end());
  v[(1 * 3 + 2) * 3 + 0] += 0.5;  // sample 0, variable 1, channel 2
  Tensor y1 = cvf_fuse(Tensor::from(x.shape(), v), cfg, st);
  for (std::size_t c = 0; c < 6; ++c)
    for (std::size_t t = 0; t < 3; ++t) {
      if (c / 2 == 2) continue;
      EXPECT_EQ(y[c * 3 + t], y1[c * 3 + t]) << "channel " << c / 2 << " moved";
    }
}

TEST(GtaPool, ArithmeticMeanAndInvariance) {
  Tensor x = Tensor::from({1, 2, 1}, {1, 3});  // D=1, M=2
  EXPECT_EQ(gta_pool(x, 1, 2)[0], 2.0);
  Tensor same = Tensor::full({2, 12, 3}, 0.37);
  const Tensor pooled = gta_pool(same, 4, 3);
  for (double v : pooled.data()) EXPECT_DOUBLE_EQ(v, 0.37);

  std::mt19937_64 rng(11);
  const std::size_t D = 4, M = 5, T = 3;
  Tensor r = oracle::random_tensor({2, D * M, T}, rng);
  Tensor y = gta_pool(r, D, M);
  for (int rep = 0; rep < 10; ++rep) {
    std::vector<double> v(r.size());
    for (std::size_t d = 0; d < D; ++d) {
      std::vector<std::size_t> perm(M);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t m = 0; m < M; ++m)
          for (std::size_t t = 0; t < T; ++t)
            v[((b * D + d) * M + m) * T + t] = r[((b * D + d) * M + perm[m]) * T + t];
    }
    Tensor yp = gta_pool(Tensor::from(r.shape(), v), D, M);
    for (std::size_t i = 0; i < y.size(); ++i) ASSERT_EQ(y[i], yp[i]);
  }
}

TEST(Mamba, ZeroProjectionsGiveZero) {
  ModelConfig cfg = small_config();
  std::mt19937_64 rng(12);
  ModelState st = init_model(cfg);
  fixtures::randomize(st, rng);
  for (const char* n : {"mamba.in_proj", "mamba.gate_proj", "mamba.dt_proj.weight", "mamba.b_proj",
                        "mamba.c_proj", "mamba.out_proj"})
    fixtures::fill(st, n, 0.0);
  Tensor y = mamba_block(oracle::random_tensor({4, 3, 3}, rng), cfg, st);
  EXPECT_EQ(y.shape(), (Shape{4, 3, 3}));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(Mamba, StagedOracle) {
  ModelConfig cfg = ModelConfig::tiny();
  cfg.d_model = 2;  // D=2, T=3, d_state=2
  std::mt19937_64 rng(13);
  ModelState st = init_model(cfg);
  fixtures::randomize(st, rng, -0.8, 0.8);
  Tensor x = oracle::random_tensor({3, 2, 3}, rng);
  Tensor y = mamba_block(x, cfg, st);
  EXPECT_EQ(y.shape(), x.shape());
  EXPECT_LT(max_abs_diff(y.data(), mamba_oracle(x, cfg, st)), 1e-10);
}

TEST(Mamba, InitialStepSizesAreInRange) {
  ModelConfig cfg;
  ModelState st = init_model(cfg);
  for (double b : st.get("mamba.dt_proj.bias").data()) {
    const double dt = std::log1p(std::exp(b));
    EXPECT_GE(dt, 1e-3 * (1 - 1e-9));
    EXPECT_LE(dt, 1e-1 * (1 + 1e-9));
  }
  const Tensor& a = st.get("mamba.A_log");
  EXPECT_EQ(a[0], 0.0);
  EXPECT_NEAR(a[15], std::log(16.0), 1e-15);
}

TEST(Csi, RowsSumToOneAndSingleToken) {
  ModelConfig cfg = small_config();
  std::mt19937_64 rng(14);
  ModelState st = init_model(cfg);
  fixtures::randomize(st, rng, -1, 1);
  const AttentionOutput out = csi_attend(oracle::random_tensor({2, 3, 9}, rng, -3, 3), cfg, st);
  ASSERT_EQ(out.attention.shape(), (Shape{2, 3, 3, 3}));
  for (std::size_t r = 0; r < 18; ++r) {
    double s = 0;
    for (std::size_t j = 0; j < 3; ++j) s += out.attention[r * 3 + j];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }

  Tensor x1 = oracle::random_tensor({2, 1, 9}, rng);
  const AttentionOutput one = csi_attend(x1, cfg, st);
  for (double a : one.attention.data()) EXPECT_EQ(a, 1.0);
  Tensor expect = ops::add(x1, ops::linear(ops::linear(x1, st.get("csi.v")), st.get("csi.w")));
  EXPECT_LT(max_abs_diff(one.features.data(), expect.data()), 1e-12);
}

TEST(Csi, MatchesPerHeadOracle) {
  ModelConfig cfg = small_config();
  for (bool scaled : {false, true}) {
    cfg.attn_scaled = scaled;
    std::mt19937_64 rng(15);
    ModelState st = init_model(cfg);
    fixtures::randomize(st, rng, -0.6, 0.6);
    const std::size_t B = 2, N = 3, tok = 9, H = 3, dh = 3;
    Tensor x = oracle::random_tensor({B, N, tok}, rng);
    const AttentionOutput out = csi_attend(x, cfg, st);
    auto proj = [&](const char* name) {
      return oracle::matmul(x.data(), ops::permute(st.get(name), {1, 0}).data(), B * N, tok, tok);
    };
    const auto q = proj("csi.q"), k = proj("csi.k"), v = proj("csi.v");
    std::vector<double> ctx(B * N * tok);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t i = 0; i < N; ++i) {
          std::vector<double> logit(N);
          double mx = -1e300, z = 0;
          for (std::size_t j = 0; j < N; ++j) {
            for (std::size_t e = 0; e < dh; ++e)
              logit[j] += q[(b * N + i) * tok + h * dh + e] * k[(b * N + j) * tok + h * dh + e];
            if (scaled) logit[j] /= std::sqrt(static_cast<double>(dh));
            mx = std::max(mx, logit[j]);
          }
          for (double& l : logit) z += (l = std::exp(l - mx));
          for (std::size_t j = 0; j < N; ++j) {
            EXPECT_NEAR(out.attention[((b * H + h) * N + i) * N + j], logit[j] / z, 1e-13);
            for (std::size_t e = 0; e < dh; ++e)
              ctx[(b * N + i) * tok + h * dh + e] += logit[j] / z * v[(b * N + j) * tok + h * dh + e];
          }
        }
    auto o = oracle::matmul(ctx, ops::permute(st.get("csi.w"), {1, 0}).data(), B * N, tok, tok);
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += x[i];
    EXPECT_LT(max_abs_diff(out.features.data(), o), 1e-12);
  }
}

TEST(Csi, SensorPermutationEquivarianceIsExact) {
  ModelConfig cfg = ModelConfig::tiny();
  cfg.n_sensors = 5;
  std::mt19937_64 rng(16);
  ModelState st = init_model(cfg);
  fixtures::randomize(st, rng, -1, 1);
  const std::size_t N = 5, H = 2;
  Tensor x = oracle::random_tensor({3, N, cfg.token_dim()}, rng, -2, 2);
  const AttentionOutput ref = csi_attend(x, cfg, st);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<std::size_t> perm(N);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const AttentionOutput p = csi_attend(fixtures::permute_axis1(x, perm), cfg, st);
    const Tensor expect = fixtures::permute_axis1(ref.features, perm);
    for (std::size_t i = 0; i < expect.size(); ++i) ASSERT_EQ(p.features[i], expect[i]);
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t i = 0; i < N; ++i)
          for (std::size_t j = 0; j < N; ++j)
            ASSERT_EQ(p.attention[((b * H + h) * N + i) * N + j],
                      ref.attention[((b * H + h) * N + perm[i]) * N + perm[j]]);
  }
}

TEST(Classifier, ZeroWeightsAndMatvecOracle) {
  ModelConfig cfg = small_config();
  std::mt19937_64 rng(17);
  ModelState st = init_model(cfg);
  fixtures::randomize(st, rng);
  Tensor x = oracle::random_tensor({4, 3, 9}, rng);
  Tensor logits = classify_logits(x, st);
  ASSERT_EQ(logits.shape(), (Shape{4, 3}));
  const Tensor &w = st.get("fc.weight"), &b = st.get("fc.bias");
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      double acc = b[c];
      for (std::size_t k = 0; k < 27; ++k) acc += w[c * 27 + k] * x[i * 27 + k];
      EXPECT_NEAR(logits[i * 3 + c], acc, 1e-12);
    }
  fixtures::fill(st, "fc.weight", 0.0);
  Tensor z = classify_logits(x, st);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(z[i * 3 + c], b[c]);
}

TEST(Forward, OpportunityShapesAndDeterminism) {
  ModelConfig cfg;
  std::mt19937_64 rng(18);
  Tensor x = oracle::random_tensor({2, 5, 9, 24}, rng);
  const ForwardResult a = forward(x, cfg, init_model(cfg));
  const ForwardResult b = forward(x, cfg, init_model(cfg));
  EXPECT_EQ(a.logits.shape(), (Shape{2, 18}));
  ASSERT_TRUE(a.attention.has_value());
  EXPECT_EQ(a.attention->shape(), (Shape{2, 8, 5, 5}));
  for (std::size_t i = 0; i < a.logits.size(); ++i) EXPECT_EQ(a.logits[i], b.logits[i]);
}

TEST(Forward, AblationsChangeStructure) {
  ModelConfig cfg = small_config();
  std::mt19937_64 rng(19);
  Tensor x = oracle::random_tensor({2, 3, 2, 9}, rng);
  ModelConfig swapped = cfg;
  swapped.gta_before_csi = false;
  const ModelState st = init_model(cfg);
  const ForwardResult f1 = forward(x, cfg, st), f2 = forward(x, swapped, st);
  EXPECT_EQ(f2.logits.shape(), (Shape{2, 3}));
  EXPECT_GT(max_abs_diff(f1.logits.data(), f2.logits.data()), 0.0);

  ModelConfig bare = cfg;
  bare.enable_gta = false;
  bare.enable_csi = false;
  const ModelState sb = init_model(bare);
  EXPECT_FALSE(sb.contains("mamba.in_proj"));
  EXPECT_FALSE(sb.contains("csi.q"));
  const ForwardResult r0 = forward(x, bare, sb);
  EXPECT_FALSE(r0.attention.has_value());
  std::vector<double> v(x.data().begin(), x.data().end());
  for (std::size_t k = 0; k < 18; ++k) v[1 * 18 + k] += 1.0;  // sample 0, sensor 1
  const ForwardResult r1 = forward(Tensor::from(x.shape(), v), bare, sb);
  const std::size_t tok = bare.token_dim();
  for (std::size_t s = 0; s < 6; ++s)
    for (std::size_t k = 0; k < tok; ++k) {
      if (s == 1) continue;
      EXPECT_EQ(r0.sensor_features[s * tok + k], r1.sensor_features[s * tok + k])
          << "sensor features leaked across sensors";
    }
}

TEST(Forward, RejectsMismatchedInput) {
  ModelConfig cfg = ModelConfig::tiny();
  EXPECT_THROW(forward(Tensor::zeros({1, 2, 3, 8}), cfg, init_model(cfg)), ConfigError);
  ModelConfig bad = cfg;
  bad.heads = 5;
  EXPECT_THROW(init_model(bad), ConfigError);
}

TEST(Forward, GradientsOfEveryParameterOnTinyConfig) {
  for (bool gta : {true, false}) {
    for (bool before : {true, false}) {
      ModelConfig cfg = ModelConfig::tiny();
      cfg.enable_gta = gta;
      cfg.gta_before_csi = before;
      ModelState st = init_model(cfg);
      std::mt19937_64 rng(20);
      Tensor x = oracle::random_tensor({2, 2, 3, 9}, rng, -2, 2);
      const std::vector<int> labels{0, 2};
      std::vector<Tensor> params;
      for (const auto& p : st.params()) params.push_back(p.value);
      const GradCheckResult r = finite_diff_check(
          [&]() { return cross_entropy(forward(x, cfg, st).logits, labels); }, params);
      EXPECT_LT(r.max_rel_error, 1e-4) << "gta=" << gta << " before=" << before << " worst "
                                       << st.params()[r.worst_tensor].name;
    }
  }
}
