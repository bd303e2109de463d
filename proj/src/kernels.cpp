// src/kernels.cpp

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

#include "maskemb/kernels.hpp"

#include <malloc.h>
#include <omp.h>

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <vector>

namespace maskemb::kernels {

namespace {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using Map = Eigen::Map<RowMatrix>;

inline long signed_offset(std::size_t k, std::size_t kernel,
                          std::size_t dilation) {
  return (static_cast<long>(k) - static_cast<long>(kernel / 2)) *
         static_cast<long>(dilation);
}

inline bool selected(std::span<const std::uint8_t> mask, std::size_t b,
                     std::size_t frames, std::size_t t) {
  return mask.empty() || mask[b * frames + t] != 0;
}

// col[(i*K + k), t] = x[i, t + off(k)] or 0.
void im2col(const double *x, std::size_t channels, std::size_t frames,
            std::size_t kernel, std::size_t dilation, double *col) {
  const long T = static_cast<long>(frames);
  for (std::size_t i = 0; i < channels; ++i) {
    const double *row = x + i * frames;
    for (std::size_t k = 0; k < kernel; ++k) {
      double *out = col + (i * kernel + k) * frames;
      const long off = signed_offset(k, kernel, dilation);
      const long lo = std::clamp<long>(-off, 0, T);
      const long hi = std::clamp<long>(T - off, 0, T);
      std::fill(out, out + lo, 0.0);
      for (long t = lo; t < hi; ++t) out[t] = row[t + off];
      std::fill(out + hi, out + T, 0.0);
    }
  }
}

// dx[i, t + off(k)] += dcol[(i*K + k), t]
void col2im_add(const double *dcol, std::size_t channels, std::size_t frames,
                std::size_t kernel, std::size_t dilation, double *dx) {
  const long T = static_cast<long>(frames);
  for (std::size_t i = 0; i < channels; ++i) {
    double *row = dx + i * frames;
    for (std::size_t k = 0; k < kernel; ++k) {
      const double *in = dcol + (i * kernel + k) * frames;
      const long off = signed_offset(k, kernel, dilation);
      const long lo = std::clamp<long>(-off, 0, T);
      const long hi = std::clamp<long>(T - off, 0, T);
      for (long t = lo; t < hi; ++t) row[t + off] += in[t];
    }
  }
}

}  // namespace

void set_num_threads(int threads) {
  if (threads > 0) omp_set_num_threads(threads);
}

int num_threads() { return omp_get_max_threads(); }

void tune_allocator() {
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 256 << 20);
}

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
          std::size_t k, double alpha, const double *a, const double *b,
          double beta, double *c) {
  Map C(c, static_cast<long>(m), static_cast<long>(n));
  const long lm = static_cast<long>(m), ln = static_cast<long>(n),
             lk = static_cast<long>(k);
  if (beta == 0.0)
    C.setZero();
  else if (beta != 1.0)
    C *= beta;
  if (k == 0) return;
  if (!trans_a && !trans_b)
    C.noalias() += alpha * ConstMap(a, lm, lk) * ConstMap(b, lk, ln);
  else if (!trans_a && trans_b)
    C.noalias() +=
        alpha * ConstMap(a, lm, lk) * ConstMap(b, ln, lk).transpose();
  else if (trans_a && !trans_b)
    C.noalias() +=
        alpha * ConstMap(a, lk, lm).transpose() * ConstMap(b, lk, ln);
  else
    C.noalias() += alpha * ConstMap(a, lk, lm).transpose() *
                   ConstMap(b, ln, lk).transpose();
}

void conv1d_forward(const ConvShape &s, std::span<const double> x,
                    std::span<const double> w, std::span<const double> bias,
                    std::span<double> y) {
  const std::size_t T = s.frames, Ci = s.in_channels, Co = s.out_channels;
  const std::size_t ck = Ci * s.kernel;
  const long B = static_cast<long>(s.batch);
#pragma omp parallel
  {
    std::vector<double> col(s.kernel > 1 ? ck * T : 0);
#pragma omp for schedule(static)
    for (long b = 0; b < B; ++b) {
      const double *xb = x.data() + b * Ci * T;
      double *yb = y.data() + b * Co * T;
      const double *src = xb;
      if (s.kernel > 1) {
        im2col(xb, Ci, T, s.kernel, s.dilation, col.data());
        src = col.data();
      }
      gemm(false, false, Co, T, ck, 1.0, w.data(), src, 0.0, yb);
      if (!bias.empty())
        for (std::size_t o = 0; o < Co; ++o) {
          double *row = yb + o * T;
          for (std::size_t t = 0; t < T; ++t) row[t] += bias[o];
        }
    }
  }
}

void conv1d_backward(const ConvShape &s, std::span<const double> x,
                     std::span<const double> w, std::span<const double> dy,
                     std::span<double> dx, std::span<double> dw,
                     std::span<double> dbias) {
  const std::size_t T = s.frames, Ci = s.in_channels, Co = s.out_channels;
  const std::size_t ck = Ci * s.kernel;
  const long B = static_cast<long>(s.batch);
  // Per-item weight gradients, summed below in batch order.
  std::vector<double> dw_items(dw.empty() ? 0 : s.batch * Co * ck);
  std::vector<double> db_items(dbias.empty() ? 0 : s.batch * Co);
#pragma omp parallel
  {
    std::vector<double> col(s.kernel > 1 && !dw.empty() ? ck * T : 0);
    std::vector<double> dcol(s.kernel > 1 && !dx.empty() ? ck * T : 0);
#pragma omp for schedule(static)
    for (long b = 0; b < B; ++b) {
      const double *xb = x.data() + b * Ci * T;
      const double *dyb = dy.data() + b * Co * T;
      if (!dw.empty()) {
        const double *src = xb;
        if (s.kernel > 1) {
          im2col(xb, Ci, T, s.kernel, s.dilation, col.data());
          src = col.data();
        }
        gemm(false, true, Co, ck, T, 1.0, dyb, src, 0.0,
             dw_items.data() + b * Co * ck);
      }
      if (!dx.empty()) {
        double *dxb = dx.data() + b * Ci * T;
        if (s.kernel == 1) {
          gemm(true, false, Ci, T, Co, 1.0, w.data(), dyb, 1.0, dxb);
        } else {
          gemm(true, false, ck, T, Co, 1.0, w.data(), dyb, 0.0, dcol.data());
          col2im_add(dcol.data(), Ci, T, s.kernel, s.dilation, dxb);
        }
      }
      if (!dbias.empty())
        for (std::size_t o = 0; o < Co; ++o) {
          const double *row = dyb + o * T;
          double acc = 0.0;
          for (std::size_t t = 0; t < T; ++t) acc += row[t];
          db_items[b * Co + o] = acc;
        }
    }
  }
  for (std::size_t b = 0; b < s.batch; ++b) {
    if (!dw.empty()) {
      const double *src = dw_items.data() + b * Co * ck;
      for (std::size_t i = 0; i < Co * ck; ++i) dw[i] += src[i];
    }
    if (!dbias.empty())
      for (std::size_t o = 0; o < Co; ++o) dbias[o] += db_items[b * Co + o];
  }
}

void masked_moments(const FrameShape &s, std::span<const double> x,
                    std::span<const std::uint8_t> mask,
                    std::span<double> mean, std::span<double> var,
                    std::span<std::size_t> count) {
  const std::size_t T = s.frames, D = s.channels;
  for (std::size_t b = 0; b < s.batch; ++b) {
    std::size_t n = 0;
    for (std::size_t t = 0; t < T; ++t) n += selected(mask, b, T, t);
    count[b] = n;
  }
  const long items = static_cast<long>(s.batch * D);
#pragma omp parallel for schedule(static)
  for (long bd = 0; bd < items; ++bd) {
    const std::size_t b = static_cast<std::size_t>(bd) / D;
    const double *row = x.data() + bd * T;
    const std::size_t n = count[b];
    if (n == 0) {
      mean[bd] = 0.0;
      var[bd] = 0.0;
      continue;
    }
    double acc = 0.0;
    for (std::size_t t = 0; t < T; ++t)
      if (selected(mask, b, T, t)) acc += row[t];
    const double mu = acc / static_cast<double>(n);
    double sq = 0.0;
    for (std::size_t t = 0; t < T; ++t)
      if (selected(mask, b, T, t)) sq += (row[t] - mu) * (row[t] - mu);
    mean[bd] = mu;
    var[bd] = sq / static_cast<double>(n);
  }
}

std::size_t pooled_moments(const FrameShape &s, std::span<const double> x,
                           std::span<const std::uint8_t> mask,
                           std::span<double> mean, std::span<double> var) {
  const std::size_t T = s.frames, D = s.channels;
  std::size_t n = 0;
  for (std::size_t b = 0; b < s.batch; ++b)
    for (std::size_t t = 0; t < T; ++t) n += selected(mask, b, T, t);
  const long channels = static_cast<long>(D);
#pragma omp parallel for schedule(static)
  for (long d = 0; d < channels; ++d) {
    if (n == 0) {
      mean[d] = 0.0;
      var[d] = 0.0;
      continue;
    }
    double acc = 0.0;
    for (std::size_t b = 0; b < s.batch; ++b) {
      const double *row = x.data() + (b * D + d) * T;
      for (std::size_t t = 0; t < T; ++t)
        if (selected(mask, b, T, t)) acc += row[t];
    }
    const double mu = acc / static_cast<double>(n);
    double sq = 0.0;
    for (std::size_t b = 0; b < s.batch; ++b) {
      const double *row = x.data() + (b * D + d) * T;
      for (std::size_t t = 0; t < T; ++t)
        if (selected(mask, b, T, t)) sq += (row[t] - mu) * (row[t] - mu);
    }
    mean[d] = mu;
    var[d] = sq / static_cast<double>(n);
  }
  return n;
}

void batchnorm_apply(const FrameShape &s, std::span<const double> x,
                     std::span<const double> mean,
                     std::span<const double> inv_std,
                     std::span<const double> gamma,
                     std::span<const double> beta, std::span<double> y,
                     std::span<double> xhat) {
  const std::size_t T = s.frames, D = s.channels;
  const long channels = static_cast<long>(D);
#pragma omp parallel for schedule(static)
  for (long d = 0; d < channels; ++d) {
    for (std::size_t b = 0; b < s.batch; ++b) {
      const std::size_t off = (b * D + d) * T;
      for (std::size_t t = 0; t < T; ++t) {
        const double h = (x[off + t] - mean[d]) * inv_std[d];
        xhat[off + t] = h;
        y[off + t] = gamma[d] * h + beta[d];
      }
    }
  }
}

void batchnorm_backward(const FrameShape &s, std::span<const std::uint8_t> mask,
                        std::size_t count, bool batch_stats,
                        std::span<const double> xhat,
                        std::span<const double> inv_std,
                        std::span<const double> gamma,
                        std::span<const double> dy, std::span<double> dx,
                        std::span<double> dgamma, std::span<double> dbeta) {
  const std::size_t T = s.frames, D = s.channels;
  const long channels = static_cast<long>(D);
#pragma omp parallel for schedule(static)
  for (long d = 0; d < channels; ++d) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t b = 0; b < s.batch; ++b) {
      const std::size_t off = (b * D + d) * T;
      for (std::size_t t = 0; t < T; ++t) {
        sum_dy += dy[off + t];
        sum_dy_xhat += dy[off + t] * xhat[off + t];
      }
    }
    if (!dgamma.empty()) dgamma[d] += sum_dy_xhat;
    if (!dbeta.empty()) dbeta[d] += sum_dy;
    if (dx.empty()) continue;
    const double g = gamma[d], inv = inv_std[d];
    const double coef =
        batch_stats ? g * inv / static_cast<double>(count) : 0.0;
    for (std::size_t b = 0; b < s.batch; ++b) {
      const std::size_t off = (b * D + d) * T;
      for (std::size_t t = 0; t < T; ++t) {
        double v = g * inv * dy[off + t];
        if (batch_stats && selected(mask, b, T, t))
          v -= coef * (sum_dy + xhat[off + t] * sum_dy_xhat);
        dx[off + t] += v;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Serial reference versions.

namespace serial {

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
          std::size_t k, double alpha, const double *a, const double *b,
          double beta, double *c) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = trans_a ? a[p * m + i] : a[i * k + p];
        const double bv = trans_b ? b[j * k + p] : b[p * n + j];
        acc += av * bv;
      }
      c[i * n + j] = alpha * acc + (beta == 0.0 ? 0.0 : beta * c[i * n + j]);
    }
}

void conv1d_forward(const ConvShape &s, std::span<const double> x,
                    std::span<const double> w, std::span<const double> bias,
                    std::span<double> y) {
  const long T = static_cast<long>(s.frames);
  for (std::size_t b = 0; b < s.batch; ++b)
    for (std::size_t o = 0; o < s.out_channels; ++o)
      for (long t = 0; t < T; ++t) {
        double acc = bias.empty() ? 0.0 : bias[o];
        for (std::size_t i = 0; i < s.in_channels; ++i)
          for (std::size_t k = 0; k < s.kernel; ++k) {
            const long src = t + signed_offset(k, s.kernel, s.dilation);
            if (src < 0 || src >= T) continue;
            acc += w[(o * s.in_channels + i) * s.kernel + k] *
                   x[(b * s.in_channels + i) * s.frames + src];
          }
        y[(b * s.out_channels + o) * s.frames + t] = acc;
      }
}

void conv1d_backward(const ConvShape &s, std::span<const double> x,
                     std::span<const double> w, std::span<const double> dy,
                     std::span<double> dx, std::span<double> dw,
                     std::span<double> dbias) {
  const long T = static_cast<long>(s.frames);
  for (std::size_t b = 0; b < s.batch; ++b)
    for (std::size_t o = 0; o < s.out_channels; ++o)
      for (long t = 0; t < T; ++t) {
        const double g = dy[(b * s.out_channels + o) * s.frames + t];
        if (!dbias.empty()) dbias[o] += g;
        for (std::size_t i = 0; i < s.in_channels; ++i)
          for (std::size_t k = 0; k < s.kernel; ++k) {
            const long src = t + signed_offset(k, s.kernel, s.dilation);
            if (src < 0 || src >= T) continue;
            const std::size_t wi = (o * s.in_channels + i) * s.kernel + k;
            const std::size_t xi = (b * s.in_channels + i) * s.frames + src;
            if (!dw.empty()) dw[wi] += g * x[xi];
            if (!dx.empty()) dx[xi] += g * w[wi];
          }
      }
}

void masked_moments(const FrameShape &s, std::span<const double> x,
                    std::span<const std::uint8_t> mask,
                    std::span<double> mean, std::span<double> var,
                    std::span<std::size_t> count) {
  const std::size_t T = s.frames, D = s.channels;
  for (std::size_t b = 0; b < s.batch; ++b) {
    std::size_t n = 0;
    for (std::size_t t = 0; t < T; ++t) n += selected(mask, b, T, t);
    count[b] = n;
    for (std::size_t d = 0; d < D; ++d) {
      const double *row = x.data() + (b * D + d) * T;
      double acc = 0.0;
      for (std::size_t t = 0; t < T; ++t)
        if (selected(mask, b, T, t)) acc += row[t];
      const double mu = n ? acc / static_cast<double>(n) : 0.0;
      double sq = 0.0;
      for (std::size_t t = 0; t < T; ++t)
        if (selected(mask, b, T, t)) sq += (row[t] - mu) * (row[t] - mu);
      mean[b * D + d] = mu;
      var[b * D + d] = n ? sq / static_cast<double>(n) : 0.0;
    }
  }
}

std::size_t pooled_moments(const FrameShape &s, std::span<const double> x,
                           std::span<const std::uint8_t> mask,
                           std::span<double> mean, std::span<double> var) {
  const std::size_t T = s.frames, D = s.channels;
  std::size_t n = 0;
  for (std::size_t b = 0; b < s.batch; ++b)
    for (std::size_t t = 0; t < T; ++t) n += selected(mask, b, T, t);
  for (std::size_t d = 0; d < D; ++d) {
    double acc = 0.0;
    for (std::size_t b = 0; b < s.batch; ++b)
      for (std::size_t t = 0; t < T; ++t)
        if (selected(mask, b, T, t)) acc += x[(b * D + d) * T + t];
    const double mu = n ? acc / static_cast<double>(n) : 0.0;
    double sq = 0.0;
    for (std::size_t b = 0; b < s.batch; ++b)
      for (std::size_t t = 0; t < T; ++t)
        if (selected(mask, b, T, t)) {
          const double v = x[(b * D + d) * T + t] - mu;
          sq += v * v;
        }
    mean[d] = mu;
    var[d] = n ? sq / static_cast<double>(n) : 0.0;
  }
  return n;
}

void batchnorm_apply(const FrameShape &s, std::span<const double> x,
                     std::span<const double> mean,
                     std::span<const double> inv_std,
                     std::span<const double> gamma,
                     std::span<const double> beta, std::span<double> y,
                     std::span<double> xhat) {
  const std::size_t T = s.frames, D = s.channels;
  for (std::size_t b = 0; b < s.batch; ++b)
    for (std::size_t d = 0; d < D; ++d)
      for (std::size_t t = 0; t < T; ++t) {
        const std::size_t i = (b * D + d) * T + t;
        xhat[i] = (x[i] - mean[d]) * inv_std[d];
        y[i] = gamma[d] * xhat[i] + beta[d];
      }
}

void batchnorm_backward(const FrameShape &s, std::span<const std::uint8_t> mask,
                        std::size_t count, bool batch_stats,
                        std::span<const double> xhat,
                        std::span<const double> inv_std,
                        std::span<const double> gamma,
                        std::span<const double> dy, std::span<double> dx,
                        std::span<double> dgamma, std::span<double> dbeta) {
  const std::size_t T = s.frames, D = s.channels;
  for (std::size_t d = 0; d < D; ++d) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t b = 0; b < s.batch; ++b)
      for (std::size_t t = 0; t < T; ++t) {
        const std::size_t i = (b * D + d) * T + t;
        sum_dy += dy[i];
        sum_dy_xhat += dy[i] * xhat[i];
      }
    if (!dgamma.empty()) dgamma[d] += sum_dy_xhat;
    if (!dbeta.empty()) dbeta[d] += sum_dy;
    if (dx.empty()) continue;
    for (std::size_t b = 0; b < s.batch; ++b)
      for (std::size_t t = 0; t < T; ++t) {
        const std::size_t i = (b * D + d) * T + t;
        double v = gamma[d] * inv_std[d] * dy[i];
        if (batch_stats && selected(mask, b, T, t))
          v -= gamma[d] * inv_std[d] / static_cast<double>(count) *
               (sum_dy + xhat[i] * sum_dy_xhat);
        dx[i] += v;
      }
  }
}

}  // namespace serial
}  // namespace maskemb::kernels
