// src/guided_layers.cpp

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

#include "maskemb/guided_layers.hpp"

#include <cmath>

#include "maskemb/kernels.hpp"

namespace maskemb {

namespace {

Tensor fan_in_uniform(Rng &rng, Shape shape, std::size_t fan_in) {
  return uniform_tensor(rng, std::move(shape),
                        1.0 / std::sqrt(static_cast<double>(fan_in)));
}

Tensor zeros_param(Shape shape) { return Tensor::zeros(std::move(shape), true); }

void require_batch(const char *op, const Tensor &x, std::size_t channels) {
  if (!x.defined() || x.rank() != 3)
    throw ShapeError(op, "expected a [B, D, T] sequence");
  if (x.dim(1) != channels) throw ShapeError(op, "channels", channels, x.dim(1));
  if (x.dim(2) == 0) throw ShapeError(op, "frames", 1, 0);
}

}  // namespace

// ---------------------------------------------------------------------------

SEParams SEParams::init(std::size_t channels, std::size_t r, Rng &rng) {
  if (r == 0 || channels < r || channels % r != 0)
    throw ConfigError("SEParams: channels " + std::to_string(channels) +
                      " must be a positive multiple of r=" + std::to_string(r));
  const std::size_t hidden = channels / r;
  SEParams p;
  p.r = r;
  p.w3 = fan_in_uniform(rng, {hidden, channels}, channels);
  p.b3 = zeros_param({hidden});
  p.w4 = fan_in_uniform(rng, {channels, hidden}, hidden);
  p.b4 = zeros_param({channels});
  return p;
}

SEParams SEParams::zeros(std::size_t channels, std::size_t r) {
  if (r == 0 || channels < r || channels % r != 0)
    throw ConfigError("SEParams: channels must be a positive multiple of r");
  const std::size_t hidden = channels / r;
  return SEParams{zeros_param({hidden, channels}), zeros_param({hidden}),
                  zeros_param({channels, hidden}), zeros_param({channels}), r};
}

void SEParams::validate() const {
  const std::size_t D = w4.dim(0), H = w3.dim(0);
  if (w3.dim(1) != D || w4.dim(1) != H || b3.numel() != H || b4.numel() != D)
    throw ShapeError("SEParams", "inconsistent parameter shapes");
  if (r == 0 || D != H * r) throw ShapeError("SEParams", "D must equal r * (D/r)");
}

void SEParams::collect(const std::string &prefix,
                       std::vector<NamedTensor> &out) const {
  out.emplace_back(prefix + ".w3", w3);
  out.emplace_back(prefix + ".b3", b3);
  out.emplace_back(prefix + ".w4", w4);
  out.emplace_back(prefix + ".b4", b4);
}

BNParams BNParams::init(std::size_t channels) {
  BNParams p;
  p.gamma = Tensor(Shape{channels}, std::vector<double>(channels, 1.0), true);
  p.beta = zeros_param({channels});
  p.running_mean.assign(channels, 0.0);
  p.running_var.assign(channels, 1.0);
  return p;
}

void BNParams::init_running_stats() {
  running_mean.assign(channels(), 0.0);
  running_var.assign(channels(), 1.0);
  running_initialized = true;
}

void BNParams::collect(const std::string &prefix,
                       std::vector<NamedTensor> &out) const {
  out.emplace_back(prefix + ".gamma", gamma);
  out.emplace_back(prefix + ".beta", beta);
}

SegmentPlan SegmentPlan::fixed(std::size_t frames, std::size_t length) {
  if (frames == 0 || length == 0)
    throw ShapeError("SegmentPlan", "frames and segment length must be positive");
  SegmentPlan p;
  for (std::size_t t = 0; t < frames; t += length) p.boundaries.push_back(t);
  p.boundaries.push_back(frames);
  return p;
}

void SegmentPlan::validate(std::size_t frames) const {
  if (boundaries.size() < 2 || boundaries.front() != 0 ||
      boundaries.back() != frames)
    throw ShapeError("SegmentPlan", "boundaries must run from 0 to T=" +
                                        std::to_string(frames));
  for (std::size_t k = 1; k < boundaries.size(); ++k)
    if (boundaries[k] <= boundaries[k - 1])
      throw ShapeError("SegmentPlan", "boundaries must strictly increase");
}

PoolParams PoolParams::init(std::size_t channels, std::size_t attention,
                            Rng &rng) {
  PoolParams p;
  p.w1 = fan_in_uniform(rng, {attention, 3 * channels}, 3 * channels);
  p.b1 = zeros_param({attention});
  p.w2 = fan_in_uniform(rng, {channels, attention}, attention);
  return p;
}

PoolParams PoolParams::zeros(std::size_t channels, std::size_t attention) {
  return PoolParams{zeros_param({attention, 3 * channels}), zeros_param({attention}),
                    zeros_param({channels, attention})};
}

void PoolParams::collect(const std::string &prefix,
                         std::vector<NamedTensor> &out) const {
  out.emplace_back(prefix + ".w1", w1);
  out.emplace_back(prefix + ".b1", b1);
  out.emplace_back(prefix + ".w2", w2);
}

// ---------------------------------------------------------------------------

Tensor pointwise(const Tensor &x, const Tensor &w, const Tensor &b) {
  if (!w.defined() || w.rank() != 2)
    throw ShapeError("pointwise", "weight must be [Co, Ci]");
  return conv1d(x, reshape(w, {w.dim(0), w.dim(1), 1}), 1, b);
}

FrameMoments masked_moments(const Tensor &x, MaskSpan masks) {
  return frame_moments(x, masks);
}

SEOutput se_block_forward(const Tensor &x, const SEParams &params,
                          MaskSpan masks) {
  params.validate();
  require_batch("se_block_forward", x, params.channels());
  Tensor z = frame_moments(x, masks).mean;
  Tensor a = relu(linear(z, params.w3, params.b3));
  Tensor s = sigmoid(linear(a, params.w4, params.b4));
  return SEOutput{mul(x, broadcast_frames(s, x.dim(2))), s};
}

CamOutput campp_mask_forward(const Tensor &x, const SEParams &params,
                             const Transform &g, const SegmentPlan &plan,
                             MaskSpan masks) {
  params.validate();
  require_batch("campp_mask_forward", x, params.channels());
  plan.validate(x.dim(2));
  Tensor gx = g ? g(x) : x;
  if (gx.shape() != x.shape())
    throw ShapeError("campp_mask_forward", "transform must preserve [B, D, T]");
  Tensor z = frame_moments(x, masks).mean;
  Tensor zk = segment_means(x, plan.boundaries);
  Tensor u = add(zk, broadcast_frames(z, plan.segments()));
  Tensor a = relu(pointwise(u, params.w3, params.b3));
  Tensor s = sigmoid(pointwise(a, params.w4, params.b4));
  return CamOutput{scale_segments(gx, s, plan.boundaries), z, s};
}

BNOutput batchnorm_forward(const Tensor &x, BNParams &params, MaskSpan masks,
                           BNMode mode) {
  const std::size_t D = params.channels();
  require_batch("batchnorm_forward", x, D);
  if (!(params.eps > 0.0)) throw ConfigError("batchnorm_forward: eps must be > 0");
  const kernels::FrameShape s{x.dim(0), D, x.dim(2)};
  std::vector<std::uint8_t> flat =
      mode == BNMode::kTrain ? flatten_masks("batchnorm_forward", masks, s.batch, s.frames)
                             : std::vector<std::uint8_t>{};
  BNOutput out;
  out.mean.resize(D);
  out.var.resize(D);
  if (mode == BNMode::kTrain) {
    out.count = kernels::pooled_moments(s, x.values(), flat, out.mean, out.var);
    if (out.count == 0) throw EmptyTargetMask("batchnorm_forward");
    if (out.count < 2)
      throw Error("batchnorm_forward: train mode needs at least 2 selected "
                  "frames, got " + std::to_string(out.count));
    const double m = params.momentum;
    for (std::size_t d = 0; d < D; ++d) {
      params.running_mean[d] = (1.0 - m) * params.running_mean[d] + m * out.mean[d];
      params.running_var[d] = (1.0 - m) * params.running_var[d] + m * out.var[d];
    }
    params.running_initialized = true;
  } else {
    if (!params.running_initialized)
      throw Error("batchnorm_forward: inference before any training update; "
                  "call init_running_stats() first");
    out.mean = params.running_mean;
    out.var = params.running_var;
  }
  std::vector<double> inv(D);
  for (std::size_t d = 0; d < D; ++d) inv[d] = 1.0 / std::sqrt(out.var[d] + params.eps);

  out.y = Tensor(x.shape());
  std::vector<double> xhat(x.numel());
  kernels::batchnorm_apply(s, x.values(), out.mean, inv, params.gamma.values(),
                           params.beta.values(), out.y.mutable_values(), xhat);
  if (should_record({&x, &params.gamma, &params.beta})) {
    active_tape()->record(
        {x, params.gamma, params.beta}, out.y,
        [s, flat = std::move(flat), count = out.count,
         train = mode == BNMode::kTrain, xhat = std::move(xhat),
         inv = std::move(inv), xi = x.impl(), gi = params.gamma.impl(),
         bi = params.beta.impl(), yi = out.y.impl()] {
          std::span<double> dx, dg, db;
          if (xi->requires_grad) dx = xi->ensure_grad();
          if (gi->requires_grad) dg = gi->ensure_grad();
          if (bi->requires_grad) db = bi->ensure_grad();
          kernels::batchnorm_backward(s, flat, count, train, xhat, inv, gi->data,
                                      yi->grad, dx, dg, db);
        });
  }
  return out;
}

Tensor attentive_stats_pool(const Tensor &h, const PoolParams &params,
                            MaskSpan masks) {
  const std::size_t D = params.channels();
  require_batch("attentive_stats_pool", h, D);
  const std::size_t T = h.dim(2);
  FrameMoments m = frame_moments(h, masks);
  Tensor ctx = concat({h, broadcast_frames(m.mean, T),
                       broadcast_frames(sqrt_clamped(m.var, 1e-12), T)},
                      1);
  Tensor logits =
      pointwise(tanh(pointwise(ctx, params.w1, params.b1)), params.w2);
  Tensor alpha = masked_softmax_frames(logits, masks);
  Tensor mu = frame_weighted_sum(alpha, h, masks);
  Tensor m2 = frame_weighted_sum(alpha, mul(h, h), masks);
  Tensor sigma = sqrt_clamped(add(m2, scale(mul(mu, mu), -1.0)), 1e-12);
  return concat({mu, sigma}, 1);
}

}  // namespace maskemb
