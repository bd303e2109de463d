// maskemb/ops.hpp

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

// Differentiable operations. Each op computes its output eagerly and, when a
// tape is active and an input requires gradients, records its backward rule.
//
// Sequence tensors are [batch, channels, frames]. Ops taking frame masks
// accept one mask per batch item; an empty span selects every frame.

#ifndef MASKEMB_OPS_HPP_
#define MASKEMB_OPS_HPP_

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "maskemb/tensor.hpp"

namespace maskemb {

using FrameMask = std::vector<std::uint8_t>;

/// Flattens per-item masks into [batch x frames] bytes, checking lengths.
std::vector<std::uint8_t> flatten_masks(const char *op,
                                        std::span<const FrameMask> masks,
                                        std::size_t batch, std::size_t frames);

// Convolution and linear maps ------------------------------------------------

/// x [B, Ci, T], w [Co, Ci, K], optional bias [Co] -> [B, Co, T]; "same"
/// zero padding with the given dilation.
Tensor conv1d(const Tensor &x, const Tensor &w, std::size_t dilation = 1,
              const Tensor &bias = {});
/// Unbatched form: x [Ci, T] -> [Co, T].
Tensor conv1d_dilated(const Tensor &x, const Tensor &kernel,
                      std::size_t dilation);
/// x [B, D], w [E, D], optional b [E] -> [B, E].
Tensor linear(const Tensor &x, const Tensor &w, const Tensor &b = {});
/// x [D], w [E, D], b [E] -> [E].
Tensor affine(const Tensor &x, const Tensor &w, const Tensor &b);

// Elementwise -----------------------------------------------------------------

Tensor add(const Tensor &a, const Tensor &b);
Tensor mul(const Tensor &a, const Tensor &b);
Tensor scale(const Tensor &x, double factor);
Tensor relu(const Tensor &x);
Tensor sigmoid(const Tensor &x);
Tensor tanh(const Tensor &x);
/// sqrt(x) where x > floor, else 0 (with zero gradient).
Tensor sqrt_clamped(const Tensor &x, double floor);

// Shape -----------------------------------------------------------------------

Tensor reshape(const Tensor &x, Shape shape);
Tensor concat(const std::vector<Tensor> &parts, std::size_t axis);
Tensor slice(const Tensor &x, std::size_t axis, std::size_t begin,
             std::size_t end);
/// z [B, D] -> [B, D, frames], repeating along the last axis.
Tensor broadcast_frames(const Tensor &z, std::size_t frames);

// Reductions ------------------------------------------------------------------

Tensor sum(const Tensor &x);
/// sum_i weights[i] * x[i] with constant weights.
Tensor weighted_sum(const Tensor &x, std::span<const double> weights);

struct FrameMoments {
  Tensor mean;  // [B, D]
  Tensor var;   // [B, D], population variance
  std::vector<std::size_t> counts;
};

/// Mean and variance over the selected frames of each item. Throws
/// EmptyTargetMask when an item selects nothing.
FrameMoments frame_moments(const Tensor &x, std::span<const FrameMask> masks);

/// Segment means over [b_k, b_{k+1}) for boundaries b_0=0 < ... < b_K=T:
/// [B, D, T] -> [B, D, K].
Tensor segment_means(const Tensor &x, std::span<const std::size_t> boundaries);

/// y[b,d,t] = x[b,d,t] * s[b,d,k(t)] where k(t) is the segment holding t.
Tensor scale_segments(const Tensor &x, const Tensor &s,
                      std::span<const std::size_t> boundaries);

/// Softmax over frames of each (b, d) row, restricted to selected frames;
/// unselected frames get exactly zero weight.
Tensor masked_softmax_frames(const Tensor &logits,
                             std::span<const FrameMask> masks);

/// sum over selected t of alpha[b,d,t] * h[b,d,t] -> [B, D].
Tensor frame_weighted_sum(const Tensor &alpha, const Tensor &h,
                          std::span<const FrameMask> masks);

// Classification --------------------------------------------------------------

/// Rows scaled to unit L2 norm: [N, E] -> [N, E].
Tensor l2_normalize_rows(const Tensor &x);

/// Cosine matrix [B, N] -> logits: scale*cos(theta + margin) at each row's
/// label, scale*cos(theta) elsewhere. When theta + margin > pi the target
/// logit falls back to scale*(cos(theta) - margin*sin(margin)) to stay
/// monotonic in theta.
Tensor aam_logits(const Tensor &cosine, std::span<const std::size_t> labels,
                  double margin, double scale);

/// Mean softmax cross-entropy of [B, N] logits.
Tensor cross_entropy(const Tensor &logits, std::span<const std::size_t> labels);

}  // namespace maskemb

#endif  // MASKEMB_OPS_HPP_
