// tests/test_kernels.cpp

// Copyright 2026  The maskemb Authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <omp.h>

#include <cmath>
#include <random>

#include "maskemb/kernels.hpp"
#include "maskemb/ops.hpp"
#include "test_util.hpp"

namespace maskemb {
namespace {

using testing::random_tensor;

// Direct transcription of the padded-convolution definition.
std::vector<double> naive_conv(const std::vector<double> &x,
                               const std::vector<double> &w, std::size_t ci,
                               std::size_t co, std::size_t T, std::size_t K,
                               std::size_t dil) {
  std::vector<double> y(co * T, 0.0);
  const long half = static_cast<long>(K / 2);
  for (std::size_t c = 0; c < co; ++c)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t i = 0; i < ci; ++i)
        for (std::size_t k = 0; k < K; ++k) {
          long src = static_cast<long>(t) +
                     (static_cast<long>(k) - half) * static_cast<long>(dil);
          if (src < 0 || src >= static_cast<long>(T)) continue;
          y[c * T + t] += w[(c * ci + i) * K + k] * x[i * T + src];
        }
  return y;
}

TEST(Conv1dDilated, IdentityKernel) {
  Tensor x({1, 3}, {1, 2, 3});
  Tensor k({1, 1, 1}, {1});
  Tensor y = conv1d_dilated(x, k, 1);
  EXPECT_EQ(y.shape(), (Shape{1, 3}));
  EXPECT_EQ(std::vector<double>(y.values().begin(), y.values().end()),
            (std::vector<double>{1, 2, 3}));
}

TEST(Conv1dDilated, BoxKernelWithZeroPadding) {
  Tensor x({1, 3}, {1, 1, 1});
  Tensor k({1, 1, 3}, {1, 1, 1});
  Tensor y = conv1d_dilated(x, k, 1);
  EXPECT_EQ(std::vector<double>(y.values().begin(), y.values().end()),
            (std::vector<double>{2, 3, 2}));
}

TEST(Conv1dDilated, MatchesNaiveLoop) {
  std::mt19937_64 rng(11);
  for (std::size_t dil : {1u, 2u, 3u}) {
    Tensor x = random_tensor(rng, {4, 16});
    Tensor k = random_tensor(rng, {5, 4, 3});
    Tensor y = conv1d_dilated(x, k, dil);
    auto ref = naive_conv({x.values().begin(), x.values().end()},
                          {k.values().begin(), k.values().end()}, 4, 5, 16, 3, dil);
    for (std::size_t i = 0; i < ref.size(); ++i)
      EXPECT_NEAR(y.values()[i], ref[i], 1e-12);
  }
}

TEST(Conv1dDilated, ShapeErrorNamesAxis) {
  Tensor x({4, 16});
  Tensor k({5, 3, 3});
  try {
    conv1d_dilated(x, k, 1);
    FAIL();
  } catch (const ShapeError &e) {
    EXPECT_EQ(e.axis(), "in_channels");
  }
  EXPECT_THROW(conv1d_dilated(Tensor({4, 0}), Tensor({1, 4, 1}), 1), ShapeError);
}

TEST(Affine, HandExamples) {
  Tensor y = affine(Tensor({2}, {1, 2}), Tensor({2, 2}, {1, 0, 0, 1}),
                    Tensor({2}, {0, 0}));
  EXPECT_EQ(y.values()[0], 1.0);
  EXPECT_EQ(y.values()[1], 2.0);
  Tensor z = affine(Tensor({2}, {1, 1}), Tensor({1, 2}, {2, 3}), Tensor({1}, {1}));
  EXPECT_EQ(z.item(), 6.0);
  EXPECT_THROW(affine(Tensor({3}), Tensor({1, 2}), Tensor({1})), ShapeError);
}

TEST(Affine, MatchesNaiveLoop) {
  std::mt19937_64 rng(5);
  Tensor x = random_tensor(rng, {8});
  Tensor w = random_tensor(rng, {8, 8});
  Tensor b = random_tensor(rng, {8});
  Tensor y = affine(x, w, b);
  for (std::size_t e = 0; e < 8; ++e) {
    double acc = b.values()[e];
    for (std::size_t d = 0; d < 8; ++d) acc += w.at({e, d}) * x.values()[d];
    EXPECT_NEAR(y.values()[e], acc, 1e-12);
  }
}

TEST(Reductions, MatchNaiveLoop) {
  std::mt19937_64 rng(8);
  Tensor x = random_tensor(rng, {2, 3, 20});
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  EXPECT_NEAR(sum(x).item(), acc, 1e-12);
  std::vector<std::size_t> bounds{0, 7, 14, 20};
  Tensor seg = segment_means(x, bounds);
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t k = 0; k < 3; ++k) {
      double s = 0.0;
      for (std::size_t t = bounds[k]; t < bounds[k + 1]; ++t)
        s += x.values()[r * 20 + t];
      EXPECT_NEAR(seg.values()[r * 3 + k], s / double(bounds[k + 1] - bounds[k]),
                  1e-12);
    }
}

// Parallel kernels against their serial references, across thread counts.
class KernelParity : public ::testing::TestWithParam<int> {};

TEST_P(KernelParity, ConvForwardBackward) {
  kernels::set_num_threads(GetParam());
  std::mt19937_64 rng(21);
  kernels::ConvShape s{3, 5, 6, 17, 3, 2};
  Tensor x = random_tensor(rng, {3, 5, 17});
  Tensor w = random_tensor(rng, {6, 5, 3});
  Tensor b = random_tensor(rng, {6});
  Tensor dy = random_tensor(rng, {3, 6, 17});
  std::vector<double> y1(3 * 6 * 17), y2(y1.size());
  kernels::conv1d_forward(s, x.values(), w.values(), b.values(), y1);
  kernels::serial::conv1d_forward(s, x.values(), w.values(), b.values(), y2);
  for (std::size_t i = 0; i < y1.size(); ++i) EXPECT_NEAR(y1[i], y2[i], 1e-12);

  std::vector<double> dx1(x.numel()), dw1(w.numel()), db1(6);
  std::vector<double> dx2(x.numel()), dw2(w.numel()), db2(6);
  kernels::conv1d_backward(s, x.values(), w.values(), dy.values(), dx1, dw1, db1);
  kernels::serial::conv1d_backward(s, x.values(), w.values(), dy.values(), dx2,
                                   dw2, db2);
  for (std::size_t i = 0; i < dx1.size(); ++i) EXPECT_NEAR(dx1[i], dx2[i], 1e-12);
  for (std::size_t i = 0; i < dw1.size(); ++i) EXPECT_NEAR(dw1[i], dw2[i], 1e-12);
  for (std::size_t i = 0; i < db1.size(); ++i) EXPECT_NEAR(db1[i], db2[i], 1e-12);
  kernels::set_num_threads(1);
}

TEST_P(KernelParity, MomentsAndBatchNorm) {
  kernels::set_num_threads(GetParam());
  std::mt19937_64 rng(22);
  kernels::FrameShape s{4, 6, 25};
  Tensor x = random_tensor(rng, {4, 6, 25});
  std::vector<std::uint8_t> mask;
  for (int b = 0; b < 4; ++b) {
    auto m = testing::random_mask(rng, 25);
    mask.insert(mask.end(), m.begin(), m.end());
  }
  std::vector<double> m1(24), v1(24), m2(24), v2(24);
  std::vector<std::size_t> c1(4), c2(4);
  kernels::masked_moments(s, x.values(), mask, m1, v1, c1);
  kernels::serial::masked_moments(s, x.values(), mask, m2, v2, c2);
  EXPECT_EQ(c1, c2);
  for (std::size_t i = 0; i < 24; ++i) {
    EXPECT_NEAR(m1[i], m2[i], 1e-12);
    EXPECT_NEAR(v1[i], v2[i], 1e-12);
  }

  std::vector<double> pm1(6), pv1(6), pm2(6), pv2(6);
  std::size_t n1 = kernels::pooled_moments(s, x.values(), mask, pm1, pv1);
  std::size_t n2 = kernels::serial::pooled_moments(s, x.values(), mask, pm2, pv2);
  EXPECT_EQ(n1, n2);
  std::vector<double> inv(6), gamma(6), beta(6);
  for (std::size_t d = 0; d < 6; ++d) {
    EXPECT_NEAR(pm1[d], pm2[d], 1e-12);
    EXPECT_NEAR(pv1[d], pv2[d], 1e-12);
    inv[d] = 1.0 / std::sqrt(pv1[d] + 1e-5);
    gamma[d] = 1.0 + 0.1 * double(d);
    beta[d] = 0.05 * double(d);
  }
  std::vector<double> y1(x.numel()), xh1(x.numel()), y2(x.numel()), xh2(x.numel());
  kernels::batchnorm_apply(s, x.values(), pm1, inv, gamma, beta, y1, xh1);
  kernels::serial::batchnorm_apply(s, x.values(), pm1, inv, gamma, beta, y2, xh2);
  EXPECT_EQ(y1, y2);

  Tensor dy = random_tensor(rng, {4, 6, 25});
  for (bool batch_stats : {false, true}) {
    std::vector<double> dx1(x.numel()), dg1(6), db1(6);
    std::vector<double> dx2(x.numel()), dg2(6), db2(6);
    kernels::batchnorm_backward(s, mask, n1, batch_stats, xh1, inv, gamma,
                                dy.values(), dx1, dg1, db1);
    kernels::serial::batchnorm_backward(s, mask, n1, batch_stats, xh1, inv,
                                        gamma, dy.values(), dx2, dg2, db2);
    for (std::size_t i = 0; i < dx1.size(); ++i) EXPECT_NEAR(dx1[i], dx2[i], 1e-12);
    for (std::size_t d = 0; d < 6; ++d) {
      EXPECT_NEAR(dg1[d], dg2[d], 1e-12);
      EXPECT_NEAR(db1[d], db2[d], 1e-12);
    }
  }
  kernels::set_num_threads(1);
}

TEST_P(KernelParity, BitwiseStableAcrossThreadCounts) {
  std::mt19937_64 rng(23);
  kernels::ConvShape s{5, 4, 4, 30, 3, 1};
  Tensor x = random_tensor(rng, {5, 4, 30});
  Tensor w = random_tensor(rng, {4, 4, 3});
  Tensor dy = random_tensor(rng, {5, 4, 30});
  auto run = [&](int threads) {
    kernels::set_num_threads(threads);
    std::vector<double> dx(x.numel()), dw(w.numel()), db(4);
    kernels::conv1d_backward(s, x.values(), w.values(), dy.values(), dx, dw, db);
    dx.insert(dx.end(), dw.begin(), dw.end());
    dx.insert(dx.end(), db.begin(), db.end());
    return dx;
  };
  EXPECT_EQ(run(1), run(GetParam()));
  kernels::set_num_threads(1);
}

INSTANTIATE_TEST_SUITE_P(Threads, KernelParity, ::testing::Values(1, 2, 4));

}  // namespace
}  // namespace maskemb
