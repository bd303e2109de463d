// maskemb/kernels.hpp

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

// Raw numeric kernels behind the differentiable ops.
//
// Every kernel exists twice: the default (OpenMP-parallel, GEMM-backed where
// it pays off) and a plain serial loop in `kernels::serial`. The serial
// versions are the reference the parallel ones are tested and benchmarked
// against; the library itself only calls the parallel ones.
//
// Work is split over independent outputs (batch items or channels) and every
// reduction runs in a fixed order, so results are bitwise identical for any
// thread count.
//
// Layouts are row-major. Frame masks are flat [batch x frames] byte arrays;
// an empty mask span means "every frame selected". Backward kernels
// accumulate into their outputs; pass an empty span to skip one.

#ifndef MASKEMB_KERNELS_HPP_
#define MASKEMB_KERNELS_HPP_

#include <cstddef>
#include <cstdint>
#include <span>

namespace maskemb::kernels {

struct ConvShape {
  std::size_t batch = 1;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t frames = 1;
  std::size_t kernel = 1;
  std::size_t dilation = 1;
};

struct FrameShape {
  std::size_t batch = 1;
  std::size_t channels = 1;
  std::size_t frames = 1;
};

void set_num_threads(int threads);
int num_threads();

/// Keeps freed buffers in the process heap instead of returning them to the
/// system. Training allocates and frees the same large activations every
/// step, which otherwise turns into mmap/munmap churn.
void tune_allocator();

/// C[m x n] = alpha * op(A) * op(B) + beta * C, row-major.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
          std::size_t k, double alpha, const double *a, const double *b,
          double beta, double *c);

/// y[b,o,t] = bias[o] + sum_{i,k} w[o,i,k] * x[b,i,t + (k - K/2) * dilation],
/// zero outside [0, T).
void conv1d_forward(const ConvShape &s, std::span<const double> x,
                    std::span<const double> w, std::span<const double> bias,
                    std::span<double> y);

void conv1d_backward(const ConvShape &s, std::span<const double> x,
                     std::span<const double> w, std::span<const double> dy,
                     std::span<double> dx, std::span<double> dw,
                     std::span<double> dbias);

/// Per (batch, channel) mean and population variance over selected frames.
/// `count[b]` receives the number of selected frames of item b.
void masked_moments(const FrameShape &s, std::span<const double> x,
                    std::span<const std::uint8_t> mask,
                    std::span<double> mean, std::span<double> var,
                    std::span<std::size_t> count);

/// Per channel mean and population variance over the union of selected
/// frames of all batch items. Returns the number of selected frames.
std::size_t pooled_moments(const FrameShape &s, std::span<const double> x,
                           std::span<const std::uint8_t> mask,
                           std::span<double> mean, std::span<double> var);

/// y = gamma * (x - mean) * inv_std + beta on every frame; also writes the
/// normalized values to `xhat`.
void batchnorm_apply(const FrameShape &s, std::span<const double> x,
                     std::span<const double> mean,
                     std::span<const double> inv_std,
                     std::span<const double> gamma,
                     std::span<const double> beta, std::span<double> y,
                     std::span<double> xhat);

/// Backward of batchnorm_apply. When `batch_stats` is set the statistics
/// were taken over the `mask`-selected frames (`count` of them) and their
/// dependence on x is propagated; otherwise they are constants.
void batchnorm_backward(const FrameShape &s, std::span<const std::uint8_t> mask,
                        std::size_t count, bool batch_stats,
                        std::span<const double> xhat,
                        std::span<const double> inv_std,
                        std::span<const double> gamma,
                        std::span<const double> dy, std::span<double> dx,
                        std::span<double> dgamma, std::span<double> dbeta);

namespace serial {

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
          std::size_t k, double alpha, const double *a, const double *b,
          double beta, double *c);
void conv1d_forward(const ConvShape &s, std::span<const double> x,
                    std::span<const double> w, std::span<const double> bias,
                    std::span<double> y);
void conv1d_backward(const ConvShape &s, std::span<const double> x,
                     std::span<const double> w, std::span<const double> dy,
                     std::span<double> dx, std::span<double> dw,
                     std::span<double> dbias);
void masked_moments(const FrameShape &s, std::span<const double> x,
                    std::span<const std::uint8_t> mask,
                    std::span<double> mean, std::span<double> var,
                    std::span<std::size_t> count);
std::size_t pooled_moments(const FrameShape &s, std::span<const double> x,
                           std::span<const std::uint8_t> mask,
                           std::span<double> mean, std::span<double> var);
void batchnorm_apply(const FrameShape &s, std::span<const double> x,
                     std::span<const double> mean,
                     std::span<const double> inv_std,
                     std::span<const double> gamma,
                     std::span<const double> beta, std::span<double> y,
                     std::span<double> xhat);
void batchnorm_backward(const FrameShape &s, std::span<const std::uint8_t> mask,
                        std::size_t count, bool batch_stats,
                        std::span<const double> xhat,
                        std::span<const double> inv_std,
                        std::span<const double> gamma,
                        std::span<const double> dy, std::span<double> dx,
                        std::span<double> dgamma, std::span<double> dbeta);

}  // namespace serial
}  // namespace maskemb::kernels

#endif  // MASKEMB_KERNELS_HPP_
