// maskemb/guided_layers.hpp

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

// Squeeze-and-excitation, CAM++ context-aware masking, batch normalization
// and attentive statistics pooling, each in a standard and a target-masked
// ("guided") form.
//
// All layers take batched sequences [B, D, T] and one frame mask per batch
// item. An empty mask span selects the standard form; a non-empty span
// restricts the global statistics to each item's selected frames.

#ifndef MASKEMB_GUIDED_LAYERS_HPP_
#define MASKEMB_GUIDED_LAYERS_HPP_

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "maskemb/ops.hpp"
#include "maskemb/random.hpp"
#include "maskemb/tensor.hpp"

namespace maskemb {

using MaskSpan = std::span<const FrameMask>;

struct SEParams {
  Tensor w3;  // [D/r, D]
  Tensor b3;  // [D/r]
  Tensor w4;  // [D, D/r]
  Tensor b4;  // [D]
  std::size_t r = 4;

  static SEParams init(std::size_t channels, std::size_t r, Rng &rng);
  static SEParams zeros(std::size_t channels, std::size_t r);
  std::size_t channels() const { return w4.dim(0); }
  void validate() const;
  void collect(const std::string &prefix, std::vector<NamedTensor> &out) const;
};

struct BNParams {
  Tensor gamma;  // [D]
  Tensor beta;   // [D]
  double eps = 1e-5;
  double momentum = 0.1;
  std::vector<double> running_mean;
  std::vector<double> running_var;
  bool running_initialized = false;

  static BNParams init(std::size_t channels);
  std::size_t channels() const { return gamma.numel(); }
  /// Running mean 0 and variance 1, usable for inference before training.
  void init_running_stats();
  void collect(const std::string &prefix, std::vector<NamedTensor> &out) const;
};

struct SegmentPlan {
  std::vector<std::size_t> boundaries;  // 0 = t_0 < t_1 < ... < t_K = T

  /// Consecutive segments of `length` frames; the last may be shorter.
  static SegmentPlan fixed(std::size_t frames, std::size_t length = 10);
  std::size_t segments() const { return boundaries.size() - 1; }
  std::size_t frames() const { return boundaries.back(); }
  /// Throws ShapeError unless the plan strictly increases from 0 to T.
  void validate(std::size_t frames) const;
};

struct PoolParams {
  Tensor w1;  // [A, 3D]
  Tensor b1;  // [A]
  Tensor w2;  // [D, A]; no bias, the softmax over frames cancels it

  static PoolParams init(std::size_t channels, std::size_t attention, Rng &rng);
  static PoolParams zeros(std::size_t channels, std::size_t attention);
  std::size_t channels() const { return w2.dim(0); }
  void collect(const std::string &prefix, std::vector<NamedTensor> &out) const;
};

/// Pointwise (1x1) convolution with a [Co, Ci] weight over [B, Ci, T].
Tensor pointwise(const Tensor &x, const Tensor &w, const Tensor &b = {});

/// Mean and population variance over selected frames, [B, D] each.
FrameMoments masked_moments(const Tensor &x, MaskSpan masks);

struct SEOutput {
  Tensor y;  // [B, D, T]
  Tensor s;  // [B, D]
};

SEOutput se_block_forward(const Tensor &x, const SEParams &params,
                          MaskSpan masks = {});

struct CamOutput {
  Tensor y;  // [B, D, T]
  Tensor z;  // [B, D] global statistic
  Tensor s;  // [B, D, K]
};

using Transform = std::function<Tensor(const Tensor &)>;

/// CAM++ masking: y = g(x) with segment k scaled by
/// s_k = sigmoid(W4 relu(W3 (z + z_k) + b3) + b4). Segment means z_k are
/// never masked; z is the (masked) global mean.
CamOutput campp_mask_forward(const Tensor &x, const SEParams &params,
                             const Transform &g, const SegmentPlan &plan,
                             MaskSpan masks = {});

enum class BNMode { kTrain, kInfer };

struct BNOutput {
  Tensor y;
  std::vector<double> mean;  // statistics used for normalization
  std::vector<double> var;
  std::size_t count = 0;     // frames the statistics came from (train)
};

/// Train mode normalizes every frame with statistics over the union of the
/// items' selected frames and updates the running statistics. Infer mode
/// uses the running statistics and ignores masks.
BNOutput batchnorm_forward(const Tensor &x, BNParams &params, MaskSpan masks,
                           BNMode mode);

/// Channel- and context-dependent attentive statistics pooling over the
/// selected frames: [B, D, T] -> [B, 2D] holding [mean; std].
Tensor attentive_stats_pool(const Tensor &h, const PoolParams &params,
                            MaskSpan masks = {});

}  // namespace maskemb

#endif  // MASKEMB_GUIDED_LAYERS_HPP_
