// src/ops.cpp

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

#include "maskemb/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "maskemb/kernels.hpp"

namespace maskemb {

namespace {

using ImplPtr = std::shared_ptr<detail::TensorImpl>;

// Gradient buffer of an input, or nullptr when it does not need one.
inline double *grad_ptr(const ImplPtr &impl) {
  return impl->requires_grad ? impl->ensure_grad().data() : nullptr;
}

void require_rank(const char *op, const Tensor &t, std::size_t rank) {
  if (!t.defined()) throw ShapeError(op, "undefined tensor");
  if (t.rank() != rank)
    throw ShapeError(op, "expected rank " + std::to_string(rank) + ", got " +
                             shape_string(t.shape()));
}

void require_same_shape(const char *op, const Tensor &a, const Tensor &b) {
  if (a.shape() != b.shape())
    throw ShapeError(op, "operand shapes differ: " + shape_string(a.shape()) +
                             " vs " + shape_string(b.shape()));
}

void check_boundaries(const char *op, std::span<const std::size_t> bounds,
                      std::size_t frames) {
  if (bounds.size() < 2 || bounds.front() != 0 || bounds.back() != frames)
    throw ShapeError(op, "segment boundaries must run from 0 to T=" +
                             std::to_string(frames));
  for (std::size_t k = 1; k < bounds.size(); ++k)
    if (bounds[k] <= bounds[k - 1])
      throw ShapeError(op, "segment boundaries must strictly increase");
}

template <class F>
Tensor unary(const Tensor &x, F &&forward_and_derivative) {
  // forward_and_derivative(x) -> {y, dy/dx}
  Tensor y(x.shape());
  const bool record = should_record({&x});
  std::vector<double> deriv(record ? x.numel() : 0);
  auto xv = x.values();
  auto yv = y.mutable_values();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    auto [v, d] = forward_and_derivative(xv[i]);
    yv[i] = v;
    if (record) deriv[i] = d;
  }
  if (record) {
    active_tape()->record(
        {x}, y, [xi = x.impl(), yi = y.impl(), deriv = std::move(deriv)] {
          double *gx = grad_ptr(xi);
          if (!gx) return;
          for (std::size_t i = 0; i < deriv.size(); ++i)
            gx[i] += deriv[i] * yi->grad[i];
        });
  }
  return y;
}

}  // namespace

std::vector<std::uint8_t> flatten_masks(const char *op,
                                        std::span<const FrameMask> masks,
                                        std::size_t batch, std::size_t frames) {
  if (masks.empty()) return {};
  if (masks.size() != batch) throw ShapeError(op, "mask batch", batch, masks.size());
  std::vector<std::uint8_t> flat;
  flat.reserve(batch * frames);
  for (const FrameMask &m : masks) {
    if (m.size() != frames) throw ShapeError(op, "mask frames", frames, m.size());
    for (std::uint8_t v : m) flat.push_back(v ? 1 : 0);
  }
  return flat;
}

// ---------------------------------------------------------------------------

Tensor conv1d(const Tensor &x, const Tensor &w, std::size_t dilation,
              const Tensor &bias) {
  require_rank("conv1d", x, 3);
  require_rank("conv1d", w, 3);
  if (dilation == 0) throw ShapeError("conv1d", "dilation must be positive");
  if (w.dim(1) != x.dim(1))
    throw ShapeError("conv1d", "in_channels", w.dim(1), x.dim(1));
  if (x.dim(2) == 0) throw ShapeError("conv1d", "frames", 1, 0);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != w.dim(0)))
    throw ShapeError("conv1d", "bias", w.dim(0), bias.numel());
  kernels::ConvShape s{x.dim(0), x.dim(1), w.dim(0), x.dim(2), w.dim(2),
                       dilation};
  Tensor y({s.batch, s.out_channels, s.frames});
  kernels::conv1d_forward(s, x.values(), w.values(),
                          bias.defined() ? bias.values()
                                         : std::span<const double>{},
                          y.mutable_values());
  if (should_record({&x, &w, &bias})) {
    active_tape()->record(
        {x, w, bias}, y,
        [s, xi = x.impl(), wi = w.impl(),
         bi = bias.defined() ? bias.impl() : ImplPtr{}, yi = y.impl()] {
          std::span<double> dx, dw, db;
          if (xi->requires_grad) dx = xi->ensure_grad();
          if (wi->requires_grad) dw = wi->ensure_grad();
          if (bi && bi->requires_grad) db = bi->ensure_grad();
          kernels::conv1d_backward(s, xi->data, wi->data, yi->grad, dx, dw, db);
        });
  }
  return y;
}

Tensor conv1d_dilated(const Tensor &x, const Tensor &kernel,
                      std::size_t dilation) {
  require_rank("conv1d_dilated", x, 2);
  Tensor y = conv1d(reshape(x, {1, x.dim(0), x.dim(1)}), kernel, dilation);
  return reshape(y, {y.dim(1), y.dim(2)});
}

Tensor linear(const Tensor &x, const Tensor &w, const Tensor &b) {
  require_rank("linear", x, 2);
  require_rank("linear", w, 2);
  if (w.dim(1) != x.dim(1)) throw ShapeError("linear", "input", w.dim(1), x.dim(1));
  if (b.defined() && (b.rank() != 1 || b.dim(0) != w.dim(0)))
    throw ShapeError("linear", "bias", w.dim(0), b.numel());
  const std::size_t B = x.dim(0), D = x.dim(1), E = w.dim(0);
  Tensor y({B, E});
  kernels::gemm(false, true, B, E, D, 1.0, x.values().data(),
                w.values().data(), 0.0, y.mutable_values().data());
  if (b.defined()) {
    auto yv = y.mutable_values();
    auto bv = b.values();
    for (std::size_t i = 0; i < B; ++i)
      for (std::size_t e = 0; e < E; ++e) yv[i * E + e] += bv[e];
  }
  if (should_record({&x, &w, &b})) {
    active_tape()->record(
        {x, w, b}, y,
        [B, D, E, xi = x.impl(), wi = w.impl(),
         bi = b.defined() ? b.impl() : ImplPtr{}, yi = y.impl()] {
          const double *g = yi->grad.data();
          if (double *gx = grad_ptr(xi))
            kernels::gemm(false, false, B, D, E, 1.0, g, wi->data.data(), 1.0,
                          gx);
          if (double *gw = grad_ptr(wi))
            kernels::gemm(true, false, E, D, B, 1.0, g, xi->data.data(), 1.0,
                          gw);
          if (bi)
            if (double *gb = grad_ptr(bi))
              for (std::size_t i = 0; i < B; ++i)
                for (std::size_t e = 0; e < E; ++e) gb[e] += g[i * E + e];
        });
  }
  return y;
}

Tensor affine(const Tensor &x, const Tensor &w, const Tensor &b) {
  require_rank("affine", x, 1);
  Tensor y = linear(reshape(x, {1, x.dim(0)}), w, b);
  return reshape(y, {y.dim(1)});
}

// ---------------------------------------------------------------------------

Tensor add(const Tensor &a, const Tensor &b) {
  require_same_shape("add", a, b);
  Tensor y(a.shape());
  auto av = a.values(), bv = b.values();
  auto yv = y.mutable_values();
  for (std::size_t i = 0; i < yv.size(); ++i) yv[i] = av[i] + bv[i];
  if (should_record({&a, &b})) {
    active_tape()->record({a, b}, y, [ai = a.impl(), bi = b.impl(), yi = y.impl()] {
      const auto &g = yi->grad;
      if (double *ga = grad_ptr(ai))
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      if (double *gb = grad_ptr(bi))
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    });
  }
  return y;
}

Tensor mul(const Tensor &a, const Tensor &b) {
  require_same_shape("mul", a, b);
  Tensor y(a.shape());
  auto av = a.values(), bv = b.values();
  auto yv = y.mutable_values();
  for (std::size_t i = 0; i < yv.size(); ++i) yv[i] = av[i] * bv[i];
  if (should_record({&a, &b})) {
    active_tape()->record({a, b}, y, [ai = a.impl(), bi = b.impl(), yi = y.impl()] {
      const auto &g = yi->grad;
      if (double *ga = grad_ptr(ai))
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bi->data[i];
      if (double *gb = grad_ptr(bi))
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ai->data[i];
    });
  }
  return y;
}

Tensor scale(const Tensor &x, double factor) {
  return unary(x, [factor](double v) { return std::pair{v * factor, factor}; });
}

Tensor relu(const Tensor &x) {
  return unary(x, [](double v) {
    return v > 0.0 ? std::pair{v, 1.0} : std::pair{0.0, 0.0};
  });
}

Tensor sigmoid(const Tensor &x) {
  return unary(x, [](double v) {
    const double s = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                              : std::exp(v) / (1.0 + std::exp(v));
    return std::pair{s, s * (1.0 - s)};
  });
}

Tensor tanh(const Tensor &x) {
  return unary(x, [](double v) {
    const double t = std::tanh(v);
    return std::pair{t, 1.0 - t * t};
  });
}

Tensor sqrt_clamped(const Tensor &x, double floor) {
  return unary(x, [floor](double v) {
    if (v > floor) {
      const double r = std::sqrt(v);
      return std::pair{r, 0.5 / r};
    }
    return std::pair{0.0, 0.0};
  });
}

// ---------------------------------------------------------------------------

Tensor reshape(const Tensor &x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw ShapeError("reshape", "cannot view " + shape_string(x.shape()) +
                                    " as " + shape_string(shape));
  Tensor y(std::move(shape), std::vector<double>(x.values().begin(),
                                                 x.values().end()));
  if (should_record({&x})) {
    active_tape()->record({x}, y, [xi = x.impl(), yi = y.impl()] {
      if (double *gx = grad_ptr(xi))
        for (std::size_t i = 0; i < yi->grad.size(); ++i) gx[i] += yi->grad[i];
    });
  }
  return y;
}

namespace {
struct AxisSplit {
  std::size_t outer = 1, inner = 1;
};
AxisSplit split_axis(const Shape &shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}
}  // namespace

Tensor concat(const std::vector<Tensor> &parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat", "no inputs");
  const Shape &ref = parts.front().shape();
  if (axis >= ref.size()) throw ShapeError("concat", "axis out of range");
  Shape out_shape = ref;
  out_shape[axis] = 0;
  for (const Tensor &p : parts) {
    if (p.rank() != ref.size()) throw ShapeError("concat", "rank", ref.size(), p.rank());
    for (std::size_t i = 0; i < ref.size(); ++i)
      if (i != axis && p.dim(i) != ref[i])
        throw ShapeError("concat", "axis " + std::to_string(i), ref[i], p.dim(i));
    out_shape[axis] += p.dim(axis);
  }
  const AxisSplit sp = split_axis(ref, axis);
  Tensor y(out_shape);
  auto yv = y.mutable_values();
  const std::size_t out_stride = out_shape[axis] * sp.inner;
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Tensor &p : parts) {
    offsets.push_back(off);
    const std::size_t len = p.dim(axis) * sp.inner;
    auto pv = p.values();
    for (std::size_t o = 0; o < sp.outer; ++o)
      std::copy_n(pv.begin() + o * len, len, yv.begin() + o * out_stride + off);
    off += len;
  }
  std::vector<const Tensor *> ptrs;
  for (const Tensor &p : parts) ptrs.push_back(&p);
  bool record = false;
  if (active_tape())
    for (const Tensor *p : ptrs) record = record || p->requires_grad();
  if (record) {
    std::vector<ImplPtr> impls;
    std::vector<std::size_t> lens;
    for (const Tensor &p : parts) {
      impls.push_back(p.impl());
      lens.push_back(p.dim(axis) * sp.inner);
    }
    active_tape()->record(
        parts, y,
        [impls, lens, offsets, outer = sp.outer, out_stride, yi = y.impl()] {
          for (std::size_t j = 0; j < impls.size(); ++j) {
            double *g = grad_ptr(impls[j]);
            if (!g) continue;
            for (std::size_t o = 0; o < outer; ++o) {
              const double *src = yi->grad.data() + o * out_stride + offsets[j];
              double *dst = g + o * lens[j];
              for (std::size_t i = 0; i < lens[j]; ++i) dst[i] += src[i];
            }
          }
        });
  }
  return y;
}

Tensor slice(const Tensor &x, std::size_t axis, std::size_t begin,
             std::size_t end) {
  if (axis >= x.rank()) throw ShapeError("slice", "axis out of range");
  if (begin >= end || end > x.dim(axis))
    throw ShapeError("slice", "bad range [" + std::to_string(begin) + ", " +
                                  std::to_string(end) + ") on axis of size " +
                                  std::to_string(x.dim(axis)));
  const AxisSplit sp = split_axis(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  Tensor y(out_shape);
  const std::size_t in_stride = x.dim(axis) * sp.inner;
  const std::size_t len = (end - begin) * sp.inner;
  const std::size_t off = begin * sp.inner;
  auto xv = x.values();
  auto yv = y.mutable_values();
  for (std::size_t o = 0; o < sp.outer; ++o)
    std::copy_n(xv.begin() + o * in_stride + off, len, yv.begin() + o * len);
  if (should_record({&x})) {
    active_tape()->record(
        {x}, y, [xi = x.impl(), yi = y.impl(), outer = sp.outer, in_stride, len, off] {
          double *g = grad_ptr(xi);
          if (!g) return;
          for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t i = 0; i < len; ++i)
              g[o * in_stride + off + i] += yi->grad[o * len + i];
        });
  }
  return y;
}

Tensor broadcast_frames(const Tensor &z, std::size_t frames) {
  require_rank("broadcast_frames", z, 2);
  const std::size_t rows = z.numel();
  Tensor y({z.dim(0), z.dim(1), frames});
  auto zv = z.values();
  auto yv = y.mutable_values();
  for (std::size_t r = 0; r < rows; ++r)
    std::fill_n(yv.begin() + r * frames, frames, zv[r]);
  if (should_record({&z})) {
    active_tape()->record({z}, y, [zi = z.impl(), yi = y.impl(), rows, frames] {
      double *g = grad_ptr(zi);
      if (!g) return;
      for (std::size_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (std::size_t t = 0; t < frames; ++t) acc += yi->grad[r * frames + t];
        g[r] += acc;
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------

Tensor sum(const Tensor &x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  Tensor y = Tensor::scalar(acc);
  if (should_record({&x})) {
    active_tape()->record({x}, y, [xi = x.impl(), yi = y.impl()] {
      double *g = grad_ptr(xi);
      if (!g) return;
      for (std::size_t i = 0; i < xi->data.size(); ++i) g[i] += yi->grad[0];
    });
  }
  return y;
}

Tensor weighted_sum(const Tensor &x, std::span<const double> weights) {
  if (weights.size() != x.numel())
    throw ShapeError("weighted_sum", "weights", x.numel(), weights.size());
  double acc = 0.0;
  auto xv = x.values();
  for (std::size_t i = 0; i < xv.size(); ++i) acc += weights[i] * xv[i];
  Tensor y = Tensor::scalar(acc);
  if (should_record({&x})) {
    active_tape()->record(
        {x}, y,
        [xi = x.impl(), yi = y.impl(),
         w = std::vector<double>(weights.begin(), weights.end())] {
          double *g = grad_ptr(xi);
          if (!g) return;
          for (std::size_t i = 0; i < w.size(); ++i) g[i] += w[i] * yi->grad[0];
        });
  }
  return y;
}

FrameMoments frame_moments(const Tensor &x, std::span<const FrameMask> masks) {
  require_rank("frame_moments", x, 3);
  const kernels::FrameShape s{x.dim(0), x.dim(1), x.dim(2)};
  std::vector<std::uint8_t> flat =
      flatten_masks("frame_moments", masks, s.batch, s.frames);
  FrameMoments m{Tensor({s.batch, s.channels}), Tensor({s.batch, s.channels}),
                 std::vector<std::size_t>(s.batch)};
  kernels::masked_moments(s, x.values(), flat, m.mean.mutable_values(),
                          m.var.mutable_values(), m.counts);
  for (std::size_t c : m.counts)
    if (c == 0) throw EmptyTargetMask("frame_moments");
  if (should_record({&x})) {
    // One node per output; the mean term cancels out of the variance rule.
    active_tape()->record({x}, m.mean, [s, flat, counts = m.counts,
                                        xi = x.impl(), mi = m.mean.impl()] {
      double *gx = grad_ptr(xi);
      if (!gx) return;
      for (std::size_t b = 0; b < s.batch; ++b) {
        const double inv_n = 1.0 / static_cast<double>(counts[b]);
        for (std::size_t d = 0; d < s.channels; ++d) {
          const std::size_t bd = b * s.channels + d;
          const double gm = mi->grad[bd] * inv_n;
          for (std::size_t t = 0; t < s.frames; ++t) {
            if (!flat.empty() && !flat[b * s.frames + t]) continue;
            gx[bd * s.frames + t] += gm;
          }
        }
      }
    });
    active_tape()->record({x}, m.var, [s, flat, counts = m.counts,
                                       xi = x.impl(), vi = m.var.impl(),
                                       mi = m.mean.impl()] {
      double *gx = grad_ptr(xi);
      if (!gx) return;
      for (std::size_t b = 0; b < s.batch; ++b) {
        const double inv_n = 1.0 / static_cast<double>(counts[b]);
        for (std::size_t d = 0; d < s.channels; ++d) {
          const std::size_t bd = b * s.channels + d;
          const double gv = 2.0 * vi->grad[bd] * inv_n;
          const double mu = mi->data[bd];
          for (std::size_t t = 0; t < s.frames; ++t) {
            if (!flat.empty() && !flat[b * s.frames + t]) continue;
            const std::size_t i = bd * s.frames + t;
            gx[i] += gv * (xi->data[i] - mu);
          }
        }
      }
    });
  }
  return m;
}

Tensor segment_means(const Tensor &x, std::span<const std::size_t> boundaries) {
  require_rank("segment_means", x, 3);
  const std::size_t T = x.dim(2), rows = x.dim(0) * x.dim(1);
  check_boundaries("segment_means", boundaries, T);
  const std::size_t K = boundaries.size() - 1;
  Tensor y({x.dim(0), x.dim(1), K});
  auto xv = x.values();
  auto yv = y.mutable_values();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < K; ++k) {
      double acc = 0.0;
      for (std::size_t t = boundaries[k]; t < boundaries[k + 1]; ++t)
        acc += xv[r * T + t];
      yv[r * K + k] = acc / static_cast<double>(boundaries[k + 1] - boundaries[k]);
    }
  if (should_record({&x})) {
    active_tape()->record(
        {x}, y,
        [xi = x.impl(), yi = y.impl(), rows, T, K,
         b = std::vector<std::size_t>(boundaries.begin(), boundaries.end())] {
          double *g = grad_ptr(xi);
          if (!g) return;
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t k = 0; k < K; ++k) {
              const double v =
                  yi->grad[r * K + k] / static_cast<double>(b[k + 1] - b[k]);
              for (std::size_t t = b[k]; t < b[k + 1]; ++t) g[r * T + t] += v;
            }
        });
  }
  return y;
}

Tensor scale_segments(const Tensor &x, const Tensor &s,
                      std::span<const std::size_t> boundaries) {
  require_rank("scale_segments", x, 3);
  require_rank("scale_segments", s, 3);
  const std::size_t T = x.dim(2), rows = x.dim(0) * x.dim(1);
  check_boundaries("scale_segments", boundaries, T);
  const std::size_t K = boundaries.size() - 1;
  if (s.dim(0) != x.dim(0)) throw ShapeError("scale_segments", "batch", x.dim(0), s.dim(0));
  if (s.dim(1) != x.dim(1)) throw ShapeError("scale_segments", "channels", x.dim(1), s.dim(1));
  if (s.dim(2) != K) throw ShapeError("scale_segments", "segments", K, s.dim(2));
  Tensor y(x.shape());
  auto xv = x.values(), sv = s.values();
  auto yv = y.mutable_values();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < K; ++k) {
      const double f = sv[r * K + k];
      for (std::size_t t = boundaries[k]; t < boundaries[k + 1]; ++t)
        yv[r * T + t] = xv[r * T + t] * f;
    }
  if (should_record({&x, &s})) {
    active_tape()->record(
        {x, s}, y,
        [xi = x.impl(), si = s.impl(), yi = y.impl(), rows, T, K,
         b = std::vector<std::size_t>(boundaries.begin(), boundaries.end())] {
          double *gx = grad_ptr(xi);
          double *gs = grad_ptr(si);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t k = 0; k < K; ++k) {
              const double f = si->data[r * K + k];
              double acc = 0.0;
              for (std::size_t t = b[k]; t < b[k + 1]; ++t) {
                const double g = yi->grad[r * T + t];
                if (gx) gx[r * T + t] += g * f;
                acc += g * xi->data[r * T + t];
              }
              if (gs) gs[r * K + k] += acc;
            }
        });
  }
  return y;
}

Tensor masked_softmax_frames(const Tensor &logits,
                             std::span<const FrameMask> masks) {
  require_rank("masked_softmax_frames", logits, 3);
  const std::size_t B = logits.dim(0), D = logits.dim(1), T = logits.dim(2);
  std::vector<std::uint8_t> flat =
      flatten_masks("masked_softmax_frames", masks, B, T);
  auto sel = [&flat, T](std::size_t b, std::size_t t) {
    return flat.empty() || flat[b * T + t] != 0;
  };
  for (std::size_t b = 0; b < B; ++b) {
    bool any = false;
    for (std::size_t t = 0; t < T && !any; ++t) any = sel(b, t);
    if (!any) throw EmptyTargetMask("masked_softmax_frames");
  }
  Tensor y(logits.shape());
  auto lv = logits.values();
  auto yv = y.mutable_values();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t d = 0; d < D; ++d) {
      const std::size_t row = (b * D + d) * T;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t t = 0; t < T; ++t)
        if (sel(b, t)) mx = std::max(mx, lv[row + t]);
      double z = 0.0;
      for (std::size_t t = 0; t < T; ++t)
        if (sel(b, t)) {
          yv[row + t] = std::exp(lv[row + t] - mx);
          z += yv[row + t];
        }
      for (std::size_t t = 0; t < T; ++t)
        yv[row + t] = sel(b, t) ? yv[row + t] / z : 0.0;
    }
  if (should_record({&logits})) {
    active_tape()->record({logits}, y, [li = logits.impl(), yi = y.impl(), B, D, T, flat] {
      double *g = grad_ptr(li);
      if (!g) return;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t d = 0; d < D; ++d) {
          const std::size_t row = (b * D + d) * T;
          double dot = 0.0;
          for (std::size_t t = 0; t < T; ++t)
            dot += yi->data[row + t] * yi->grad[row + t];
          for (std::size_t t = 0; t < T; ++t) {
            if (!flat.empty() && !flat[b * T + t]) continue;
            g[row + t] += yi->data[row + t] * (yi->grad[row + t] - dot);
          }
        }
    });
  }
  return y;
}

Tensor frame_weighted_sum(const Tensor &alpha, const Tensor &h,
                          std::span<const FrameMask> masks) {
  require_rank("frame_weighted_sum", h, 3);
  require_same_shape("frame_weighted_sum", alpha, h);
  const std::size_t B = h.dim(0), D = h.dim(1), T = h.dim(2);
  std::vector<std::uint8_t> flat = flatten_masks("frame_weighted_sum", masks, B, T);
  Tensor y({B, D});
  auto av = alpha.values(), hv = h.values();
  auto yv = y.mutable_values();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t d = 0; d < D; ++d) {
      const std::size_t row = (b * D + d) * T;
      double acc = 0.0;
      for (std::size_t t = 0; t < T; ++t)
        if (flat.empty() || flat[b * T + t]) acc += av[row + t] * hv[row + t];
      yv[b * D + d] = acc;
    }
  if (should_record({&alpha, &h})) {
    active_tape()->record(
        {alpha, h}, y, [ai = alpha.impl(), hi = h.impl(), yi = y.impl(), B, D, T, flat] {
          double *ga = grad_ptr(ai);
          double *gh = grad_ptr(hi);
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t d = 0; d < D; ++d) {
              const std::size_t row = (b * D + d) * T;
              const double g = yi->grad[b * D + d];
              for (std::size_t t = 0; t < T; ++t) {
                if (!flat.empty() && !flat[b * T + t]) continue;
                if (ga) ga[row + t] += g * hi->data[row + t];
                if (gh) gh[row + t] += g * ai->data[row + t];
              }
            }
        });
  }
  return y;
}

// ---------------------------------------------------------------------------

Tensor l2_normalize_rows(const Tensor &x) {
  require_rank("l2_normalize_rows", x, 2);
  const std::size_t N = x.dim(0), E = x.dim(1);
  Tensor y(x.shape());
  std::vector<double> norms(N);
  auto xv = x.values();
  auto yv = y.mutable_values();
  for (std::size_t n = 0; n < N; ++n) {
    double sq = 0.0;
    for (std::size_t e = 0; e < E; ++e) sq += xv[n * E + e] * xv[n * E + e];
    norms[n] = std::max(std::sqrt(sq), 1e-12);
    for (std::size_t e = 0; e < E; ++e) yv[n * E + e] = xv[n * E + e] / norms[n];
  }
  if (should_record({&x})) {
    active_tape()->record({x}, y, [xi = x.impl(), yi = y.impl(), N, E, norms] {
      double *g = grad_ptr(xi);
      if (!g) return;
      for (std::size_t n = 0; n < N; ++n) {
        double dot = 0.0;
        for (std::size_t e = 0; e < E; ++e)
          dot += yi->data[n * E + e] * yi->grad[n * E + e];
        for (std::size_t e = 0; e < E; ++e)
          g[n * E + e] +=
              (yi->grad[n * E + e] - yi->data[n * E + e] * dot) / norms[n];
      }
    });
  }
  return y;
}

Tensor aam_logits(const Tensor &cosine, std::span<const std::size_t> labels,
                  double margin, double scale) {
  require_rank("aam_logits", cosine, 2);
  const std::size_t B = cosine.dim(0), N = cosine.dim(1);
  if (labels.size() != B) throw ShapeError("aam_logits", "labels", B, labels.size());
  for (std::size_t l : labels)
    if (l >= N) throw ShapeError("aam_logits", "label " + std::to_string(l) +
                                                   " out of range");
  const double cos_m = std::cos(margin), sin_m = std::sin(margin);
  const double threshold = std::cos(std::numbers::pi - margin);
  const double fallback = margin * sin_m;
  Tensor y(cosine.shape());
  std::vector<double> target_deriv(B);
  auto cv = cosine.values();
  auto yv = y.mutable_values();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t n = 0; n < N; ++n) {
      const double c = std::clamp(cv[b * N + n], -1.0, 1.0);
      if (n != labels[b]) {
        yv[b * N + n] = scale * c;
        continue;
      }
      const double s = std::sqrt(std::max(0.0, 1.0 - c * c));
      if (c > threshold) {
        yv[b * N + n] = scale * (c * cos_m - s * sin_m);
        target_deriv[b] = scale * (cos_m + sin_m * c / std::max(s, 1e-12));
      } else {
        yv[b * N + n] = scale * (c - fallback);
        target_deriv[b] = scale;
      }
    }
  if (should_record({&cosine})) {
    std::vector<std::size_t> lab(labels.begin(), labels.end());
    active_tape()->record(
        {cosine}, y, [ci = cosine.impl(), yi = y.impl(), B, N, scale, lab, target_deriv] {
          double *g = grad_ptr(ci);
          if (!g) return;
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t n = 0; n < N; ++n) {
              const double c = ci->data[b * N + n];
              if (c < -1.0 || c > 1.0) continue;  // clamped
              const double d = n == lab[b] ? target_deriv[b] : scale;
              g[b * N + n] += d * yi->grad[b * N + n];
            }
        });
  }
  return y;
}

Tensor cross_entropy(const Tensor &logits, std::span<const std::size_t> labels) {
  require_rank("cross_entropy", logits, 2);
  const std::size_t B = logits.dim(0), N = logits.dim(1);
  if (labels.size() != B) throw ShapeError("cross_entropy", "labels", B, labels.size());
  std::vector<double> probs(B * N);
  auto lv = logits.values();
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    if (labels[b] >= N)
      throw ShapeError("cross_entropy", "label " + std::to_string(labels[b]) +
                                            " out of range");
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t n = 0; n < N; ++n) mx = std::max(mx, lv[b * N + n]);
    double z = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      probs[b * N + n] = std::exp(lv[b * N + n] - mx);
      z += probs[b * N + n];
    }
    for (std::size_t n = 0; n < N; ++n) probs[b * N + n] /= z;
    total += (std::log(z) + mx) - lv[b * N + labels[b]];
  }
  Tensor y = Tensor::scalar(total / static_cast<double>(B));
  if (should_record({&logits})) {
    std::vector<std::size_t> lab(labels.begin(), labels.end());
    active_tape()->record({logits}, y, [li = logits.impl(), yi = y.impl(), B, N,
                                        probs = std::move(probs), lab] {
      double *g = grad_ptr(li);
      if (!g) return;
      const double scale_b = yi->grad[0] / static_cast<double>(B);
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t n = 0; n < N; ++n)
          g[b * N + n] +=
              scale_b * (probs[b * N + n] - (n == lab[b] ? 1.0 : 0.0));
    });
  }
  return y;
}

}  // namespace maskemb
