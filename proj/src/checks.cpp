// src/checks.cpp

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

#include "maskemb/checks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <sstream>

#include "maskemb/encoders.hpp"
#include "maskemb/guided_layers.hpp"
#include "maskemb/random.hpp"
#include "maskemb/synth.hpp"
#include "maskemb/training.hpp"

namespace maskemb {

Json to_json(const CheckResult &r) {
  return Json{{"property", r.property}, {"cases", r.cases},
              {"worst", r.worst},       {"tolerance", r.tolerance},
              {"seconds", r.seconds},   {"passed", r.passed()},
              {"detail", r.detail}};
}

namespace {

using Clock = std::chrono::steady_clock;

// Accumulates one property over its randomized cases.
class Tally {
 public:
  Tally(std::string property, double tolerance) : start_(Clock::now()) {
    r_.property = std::move(property);
    r_.tolerance = tolerance;
  }
  void observe(std::size_t index, double deviation, bool ok = true,
               const std::string &what = "") {
    ++r_.cases;
    if (std::isnan(deviation)) deviation = INFINITY;
    r_.worst = std::max(r_.worst, deviation);
    if (r_.detail.empty() && (!ok || deviation > r_.tolerance)) {
      std::ostringstream os;
      os << "case " << index << ": deviation " << deviation;
      if (!what.empty()) os << " (" << what << ")";
      r_.detail = os.str();
    }
  }
  CheckResult finish() {
    r_.seconds = std::chrono::duration<double>(Clock::now() - start_).count();
    return r_;
  }

 private:
  CheckResult r_;
  Clock::time_point start_;
};

Tensor normal_tensor(Rng &rng, Shape shape, double scale, bool requires_grad) {
  std::vector<double> v(shape_numel(shape));
  for (double &x : v) x = scale * rng.normal();
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

// At least one selected frame and, when `keep_one_off`, one unselected.
FrameMask random_mask(Rng &rng, std::size_t frames, bool keep_one_off) {
  FrameMask m(frames);
  for (auto &b : m) b = rng.bernoulli(0.55) ? 1 : 0;
  const std::size_t on = rng.index(frames);
  m[on] = 1;
  if (keep_one_off && frames > 1 &&
      std::count(m.begin(), m.end(), 1) == static_cast<std::ptrdiff_t>(frames))
    m[(on + 1 + rng.index(frames - 1)) % frames] = 0;
  return m;
}

std::vector<FrameMask> random_masks(Rng &rng, std::size_t B, std::size_t T,
                                    bool keep_one_off) {
  std::vector<FrameMask> m;
  for (std::size_t b = 0; b < B; ++b) m.push_back(random_mask(rng, T, keep_one_off));
  return m;
}

std::vector<double> positive_weights(Rng &rng, std::size_t n) {
  std::vector<double> w(n);
  for (double &x : w) x = rng.uniform(0.5, 1.5);
  return w;
}

SEParams random_se(Rng &rng, std::size_t D, std::size_t r) {
  return SEParams{normal_tensor(rng, {D / r, D}, 0.5, true),
                  normal_tensor(rng, {D / r}, 0.5, true),
                  normal_tensor(rng, {D, D / r}, 0.5, true),
                  normal_tensor(rng, {D}, 0.5, true), r};
}

PoolParams random_pool(Rng &rng, std::size_t D, std::size_t A) {
  return PoolParams{normal_tensor(rng, {A, 3 * D}, 0.4, true),
                    normal_tensor(rng, {A}, 0.4, true),
                    normal_tensor(rng, {D, A}, 0.4, true)};
}

BNParams random_bn(Rng &rng, std::size_t D) {
  BNParams p = BNParams::init(D);
  std::vector<double> g(D);
  for (double &v : g) v = 1.0 + 0.3 * rng.normal();
  p.gamma = Tensor({D}, g, true);
  p.beta = normal_tensor(rng, {D}, 0.5, true);
  for (std::size_t d = 0; d < D; ++d) {
    p.running_mean[d] = 0.5 * rng.normal();
    p.running_var[d] = rng.uniform(0.5, 2.0);
  }
  p.running_initialized = true;
  return p;
}

struct Dims {
  std::size_t B, D, T;
};

Dims random_dims(Rng &rng) {
  return {1 + rng.index(3), 4 * (1 + rng.index(3)), 6 + rng.index(25)};
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return INFINITY;
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

bool bitwise_equal(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

// Adds noise to every unselected frame.
Tensor perturb_masked_out(Rng &rng, const Tensor &x,
                          const std::vector<FrameMask> &masks) {
  Tensor y = x.detach();
  const std::size_t B = x.dim(0), D = x.dim(1), T = x.dim(2);
  auto v = y.mutable_values();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t d = 0; d < D; ++d)
      for (std::size_t t = 0; t < T; ++t)
        if (!masks[b][t]) v[(b * D + d) * T + t] += 3.0 * rng.normal();
  return y;
}

Transform random_transform(Rng &rng, std::size_t D, Tensor *kernel) {
  *kernel = normal_tensor(rng, {D, D, 3}, 0.3, true);
  const std::size_t dilation = 1 + rng.index(2);
  Tensor w = *kernel;
  return [w, dilation](const Tensor &in) { return conv1d(in, w, dilation); };
}

// Fourth-order central differences keep the roundoff floor well below the
// tolerance for elements with small gradients.
double fd_check(const std::function<Tensor()> &loss_fn,
                std::vector<NamedTensor> params, double step = 1e-4) {
  return finite_difference_check(loss_fn, std::move(params), step, 1e-12,
                                 Stencil::kCentral4);
}

double min_abs(const Tensor &t) {
  double m = INFINITY;
  for (double v : t.values()) m = std::min(m, std::abs(v));
  return m;
}

// Distance of the excitation ReLU inputs from their kink. Gradient cases
// are redrawn when a perturbation could cross it.
double se_kink_distance(const Tensor &x, const SEParams &p,
                        const std::vector<FrameMask> &m) {
  NoGradScope no_grad;
  return min_abs(linear(masked_moments(x, m).mean, p.w3, p.b3));
}

double cam_kink_distance(const Tensor &x, const SEParams &p,
                         const SegmentPlan &plan, const std::vector<FrameMask> &m) {
  NoGradScope no_grad;
  Tensor u = add(segment_means(x, plan.boundaries),
                 broadcast_frames(masked_moments(x, m).mean, plan.segments()));
  return min_abs(pointwise(u, p.w3, p.b3));
}

constexpr double kKinkMargin = 1e-2;

SegmentPlan random_plan(Rng &rng, std::size_t T) {
  return SegmentPlan::fixed(T, 3 + rng.index(6));
}

}  // namespace

std::vector<CheckResult> reduction_suite(std::size_t cases, std::uint64_t seed) {
  const double tol = 1e-12;
  std::vector<CheckResult> out;
  Rng rng(seed);
  {
    Tally tally("reduction.se", tol);
    for (std::size_t i = 0; i < cases; ++i) {
      const Dims s = random_dims(rng);
      SEParams p = random_se(rng, s.D, 4);
      Tensor x = normal_tensor(rng, {s.B, s.D, s.T}, 1.0, false);
      std::vector<FrameMask> ones(s.B, FrameMask(s.T, 1));
      auto g = se_block_forward(x, p, ones);
      auto u = se_block_forward(x, p);
      tally.observe(i, std::max(max_abs_diff(g.y.values(), u.y.values()),
                                max_abs_diff(g.s.values(), u.s.values())));
    }
    out.push_back(tally.finish());
  }
  {
    Tally tally("reduction.campp", tol);
    for (std::size_t i = 0; i < cases; ++i) {
      const Dims s = random_dims(rng);
      SEParams p = random_se(rng, s.D, 4);
      Tensor kernel;
      Transform g = random_transform(rng, s.D, &kernel);
      SegmentPlan plan = random_plan(rng, s.T);
      Tensor x = normal_tensor(rng, {s.B, s.D, s.T}, 1.0, false);
      std::vector<FrameMask> ones(s.B, FrameMask(s.T, 1));
      auto a = campp_mask_forward(x, p, g, plan, ones);
      auto b = campp_mask_forward(x, p, g, plan);
      tally.observe(i, std::max({max_abs_diff(a.y.values(), b.y.values()),
                                 max_abs_diff(a.z.values(), b.z.values()),
                                 max_abs_diff(a.s.values(), b.s.values())}));
    }
    out.push_back(tally.finish());
  }
  {
    Tally tally("reduction.batchnorm", tol);
    for (std::size_t i = 0; i < cases; ++i) {
      const Dims s = random_dims(rng);
      BNParams p = random_bn(rng, s.D), q = p;
      Tensor x = normal_tensor(rng, {s.B, s.D, s.T}, 1.0, false);
      std::vector<FrameMask> ones(s.B, FrameMask(s.T, 1));
      auto a = batchnorm_forward(x, p, ones, BNMode::kTrain);
      auto b = batchnorm_forward(x, q, {}, BNMode::kTrain);
      tally.observe(i, std::max({max_abs_diff(a.y.values(), b.y.values()),
                                 max_abs_diff(a.mean, b.mean),
                                 max_abs_diff(a.var, b.var),
                                 max_abs_diff(p.running_mean, q.running_mean),
                                 max_abs_diff(p.running_var, q.running_var)}));
    }
    out.push_back(tally.finish());
  }
  {
    Tally tally("reduction.pooling", tol);
    for (std::size_t i = 0; i < cases; ++i) {
      const Dims s = random_dims(rng);
      PoolParams p = random_pool(rng, s.D, s.D / 2);
      Tensor h = normal_tensor(rng, {s.B, s.D, s.T}, 1.0, false);
      std::vector<FrameMask> ones(s.B, FrameMask(s.T, 1));
      tally.observe(i, max_abs_diff(attentive_stats_pool(h, p, ones).values(),
                                    attentive_stats_pool(h, p).values()));
    }
    out.push_back(tally.finish());
  }
  return out;
}

std::vector<CheckResult> masked_independence_suite(std::size_t cases,
                                                   std::uint64_t seed) {
  std::vector<CheckResult> out;
  Rng rng(seed);
  {
    Tally tally("masked.se_weights", 0.0);
    for (std::size_t i = 0; i < cases; ++i) {
      const Dims s = random_dims(rng);
      SEParams p = random_se(rng, s.D, 4);
      Tensor x = normal_tensor(rng, {s.B, s.D, s.T}, 1.0, false);
      auto m = random_masks(rng, s.B, s.T, true);
      auto a = se_block_forward(x, p, m).s;
      auto b = se_block_forward(perturb_masked_out(rng, x, m), p, m).s;
      tally.observe(i, max_abs_diff(a.values(), b.values()),
                    bitwise_equal(a.values(), b.values()), "not bitwise equal");
    }
    out.push_back(tally.finish());
  }
  {
    Tally tally("masked.campp_global", 0.0);
    for (std::size_t i = 0; i < cases; ++i) {
      const Dims s = random_dims(rng);
      SEParams p = random_se(rng, s.D, 4);
      Tensor kernel;
      Transform g = random_transform(rng, s.D, &kernel);
      SegmentPlan plan = random_plan(rng, s.T);
      Tensor x = normal_tensor(rng, {s.B, s.D, s.T}, 1.0, false);
      auto m = random_masks(rng, s.B, s.T, true);
      auto a = campp_mask_forward(x, p, g, plan, m).z;
      auto b = campp_mask_forward(perturb_masked_out(rng, x, m), p, g, plan, m).z;
      tally.observe(i, max_abs_diff(a.values(), b.values()),
                    bitwise_equal(a.values(), b.values()), "not bitwise equal");
    }
    out.push_back(tally.finish());
  }
  {
    Tally tally("masked.batchnorm_stats", 0.0);
    for (std::size_t i = 0; i < cases; ++i) {
      const Dims s = random_dims(rng);
      BNParams p = random_bn(rng, s.D), q = p;
      Tensor x = normal_tensor(rng, {s.B, s.D, s.T}, 1.0, false);
      auto m = random_masks(rng, s.B, s.T, true);
      auto a = batchnorm_forward(x, p, m, BNMode::kTrain);
      auto b = batchnorm_forward(perturb_masked_out(rng, x, m), q, m, BNMode::kTrain);
      const bool same = bitwise_equal(a.mean, b.mean) && bitwise_equal(a.var, b.var) &&
                        a.count == b.count &&
                        bitwise_equal(p.running_mean, q.running_mean) &&
                        bitwise_equal(p.running_var, q.running_var);
      tally.observe(i, std::max(max_abs_diff(a.mean, b.mean), max_abs_diff(a.var, b.var)),
                    same, "not bitwise equal");
    }
    out.push_back(tally.finish());
  }
  {
    Tally tally("masked.pooling", 0.0);
    for (std::size_t i = 0; i < cases; ++i) {
      const Dims s = random_dims(rng);
      PoolParams p = random_pool(rng, s.D, s.D / 2);
      Tensor h = normal_tensor(rng, {s.B, s.D, s.T}, 1.0, false);
      auto m = random_masks(rng, s.B, s.T, true);
      auto a = attentive_stats_pool(h, p, m);
      auto b = attentive_stats_pool(perturb_masked_out(rng, h, m), p, m);
      tally.observe(i, max_abs_diff(a.values(), b.values()),
                    bitwise_equal(a.values(), b.values()), "not bitwise equal");
    }
    out.push_back(tally.finish());
  }
  return out;
}

std::vector<CheckResult> gradient_suite(std::size_t cases, std::uint64_t seed) {
  const double tol = 1e-4;
  std::vector<CheckResult> out;
  Rng rng(seed);
  auto run = [&](const char *name,
                 const std::function<double(std::size_t, bool)> &one_case) {
    Tally tally(name, tol);
    for (std::size_t i = 0; i < cases; ++i) {
      const bool guided = i % 2 == 1;
      tally.observe(i, one_case(i, guided), true, guided ? "guided" : "standard");
    }
    out.push_back(tally.finish());
  };

  run("gradient.conv1d", [&](std::size_t, bool) {
    const Dims s = random_dims(rng);
    const std::size_t K = 1 + 2 * rng.index(3), dilation = 1 + rng.index(3);
    Tensor x = normal_tensor(rng, {s.B, s.D, s.T}, 1.0, true);
    Tensor w = normal_tensor(rng, {s.D / 2, s.D, K}, 0.5, true);
    Tensor b = normal_tensor(rng, {s.D / 2}, 0.5, true);
    auto wt = positive_weights(rng, s.B * (s.D / 2) * s.T);
    return fd_check(
        [&] { return weighted_sum(conv1d(x, w, dilation, b), wt); },
        {{"x", x}, {"w", w}, {"b", b}});
  });
  run("gradient.linear", [&](std::size_t, bool) {
    const std::size_t B = 1 + rng.index(4), D = 2 + rng.index(8), E = 2 + rng.index(8);
    Tensor x = normal_tensor(rng, {B, D}, 1.0, true);
    Tensor w = normal_tensor(rng, {E, D}, 0.5, true);
    Tensor b = normal_tensor(rng, {E}, 0.5, true);
    auto wt = positive_weights(rng, B * E);
    return fd_check(
        [&] {
          Tensor y = linear(x, w, b);
          return weighted_sum(mul(y, y), wt);
        },
        {{"x", x}, {"w", w}, {"b", b}});
  });
  run("gradient.se", [&](std::size_t, bool guided) {
    Dims s;
    SEParams p;
    Tensor x;
    std::vector<FrameMask> m;
    do {
      s = random_dims(rng);
      p = random_se(rng, s.D, 4);
      x = normal_tensor(rng, {s.B, s.D, s.T}, 1.0, true);
      m = guided ? random_masks(rng, s.B, s.T, false) : std::vector<FrameMask>{};
    } while (se_kink_distance(x, p, m) < kKinkMargin);
    auto wt = positive_weights(rng, x.numel());
    std::vector<NamedTensor> params{{"x", x}};
    p.collect("se", params);
    return fd_check(
        [&] { return weighted_sum(se_block_forward(x, p, m).y, wt); }, params);
  });
  run("gradient.campp", [&](std::size_t, bool guided) {
    Dims s;
    SEParams p;
    Tensor kernel, x;
    Transform g;
    SegmentPlan plan;
    std::vector<FrameMask> m;
    do {
      s = random_dims(rng);
      p = random_se(rng, s.D, 4);
      g = random_transform(rng, s.D, &kernel);
      plan = random_plan(rng, s.T);
      x = normal_tensor(rng, {s.B, s.D, s.T}, 1.0, true);
      m = guided ? random_masks(rng, s.B, s.T, false) : std::vector<FrameMask>{};
    } while (cam_kink_distance(x, p, plan, m) < kKinkMargin);
    auto wt = positive_weights(rng, x.numel());
    std::vector<NamedTensor> params{{"x", x}, {"g", kernel}};
    p.collect("cam", params);
    return fd_check(
        [&] { return weighted_sum(campp_mask_forward(x, p, g, plan, m).y, wt); },
        params);
  });
  for (BNMode mode : {BNMode::kTrain, BNMode::kInfer}) {
    run(mode == BNMode::kTrain ? "gradient.batchnorm_train" : "gradient.batchnorm_infer",
        [&](std::size_t, bool guided) {
          const Dims s = random_dims(rng);
          BNParams p = random_bn(rng, s.D);
          Tensor x = normal_tensor(rng, {s.B, s.D, s.T}, 1.0, true);
          auto m = guided ? random_masks(rng, s.B, s.T, false) : std::vector<FrameMask>{};
          auto wt = positive_weights(rng, x.numel());
          std::vector<NamedTensor> params{{"x", x}};
          p.collect("bn", params);
          // A squared readout; a linear one cancels exactly through the
          // train-mode normalization. The layer is smooth, so a wider step
          // lowers the roundoff of the larger loss.
          return fd_check(
              [&] {
                Tensor y = batchnorm_forward(x, p, m, mode).y;
                return weighted_sum(mul(y, y), wt);
              },
              params, 1e-3);
        });
  }
  run("gradient.pooling", [&](std::size_t, bool guided) {
    const Dims s = random_dims(rng);
    PoolParams p = random_pool(rng, s.D, s.D / 2);
    Tensor h = normal_tensor(rng, {s.B, s.D, s.T}, 1.0, true);
    auto m = guided ? random_masks(rng, s.B, s.T, false) : std::vector<FrameMask>{};
    auto wt = positive_weights(rng, s.B * 2 * s.D);
    std::vector<NamedTensor> params{{"h", h}};
    p.collect("pool", params);
    return fd_check(
        [&] { return weighted_sum(attentive_stats_pool(h, p, m), wt); }, params);
  });
  run("gradient.aam_loss", [&](std::size_t i, bool) {
    const std::size_t B = 2 + rng.index(4), E = 3 + rng.index(6), N = 2 + rng.index(5);
    std::vector<std::size_t> labels(B);
    for (auto &l : labels) l = rng.index(N);
    AAMHead head;
    head.margin = rng.uniform(0.0, 0.5);
    Tensor e;
    if (i % 4 == 3) {
      // Training scale with rows near a common direction, which keeps the
      // softmax away from saturation.
      head.scale = 30.0;
      Tensor common = normal_tensor(rng, {E}, 1.0, false);
      auto near = [&](std::size_t n) {
        std::vector<double> v(n * E);
        for (std::size_t k = 0; k < v.size(); ++k)
          v[k] = common.values()[k % E] + 0.05 * rng.normal();
        return Tensor({n, E}, v, true);
      };
      e = near(B);
      head.weight = near(N);
    } else {
      head.scale = rng.uniform(1.0, 8.0);
      e = normal_tensor(rng, {B, E}, 1.0, true);
      head.weight = normal_tensor(rng, {N, E}, 1.0, true);
    }
    return fd_check([&] { return aam_softmax_loss(e, labels, head); },
                                   {{"embeddings", e}, {"weight", head.weight}});
  });
  return out;
}

CheckResult m_invariance_check(std::size_t mixtures, std::uint64_t seed,
                               const std::vector<double> &m_values) {
  Tally tally("invariance.pointwise_proposed", 1e-10);
  SynthConfig sc;
  Synthesizer synth(sc);
  const auto bank = synth_speaker_bank(seed, 8, sc);
  ModelConfig mc = ModelConfig::preset("proposed");
  mc.input_dim = sc.n_mels;
  mc.pointwise_only = true;
  Model model = build_model(mc, seed);
  Rng rng(seed ^ 0x5eedULL);
  for (auto &[name, bn] : model.batchnorms()) {
    for (auto &v : bn->running_mean) v = 0.2 * rng.normal();
    for (auto &v : bn->running_var) v = rng.uniform(0.5, 2.0);
    bn->running_initialized = true;
  }
  std::size_t made = 0, attempts = 0;
  while (made < mixtures) {
    if (++attempts > 20 * mixtures + 100)
      throw Error("m_invariance_check: could not draw mixtures with non-target-only frames");
    const std::size_t n = 2 + rng.index(3);
    std::vector<std::size_t> idx(bank.size());
    for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k;
    rng.shuffle(idx);
    std::vector<const SyntheticSpeaker *> spk;
    for (std::size_t k = 0; k < n; ++k) spk.push_back(&bank[idx[k]]);
    const OverlapBucket bucket = kAllBuckets[rng.index(kAllBuckets.size())];
    Mixture mix;
    try {
      mix = synth_mixture(synth, spk, bucket, MixtureOptions{}, rng);
    } catch (const Error &) {
      continue;
    }
    const ActivityMask mask = mix.mask();
    if (nontarget_only_runs(mask).empty()) continue;
    const Tensor ref = extract_embedding(model, mix.features, &mask);
    double worst = 0.0;
    bool edited = true;
    for (double m : m_values) {
      const Mixture scaled = scale_nontarget_duration(mix, m);
      if (m == 0.0 && scaled.frames() >= mix.frames()) edited = false;
      const ActivityMask sm = scaled.mask();
      const Tensor e = extract_embedding(model, scaled.features, &sm);
      worst = std::max(worst, max_abs_diff(e.values(), ref.values()));
    }
    tally.observe(made, worst, edited, "m = 0 did not remove frames");
    ++made;
  }
  return tally.finish();
}

}  // namespace maskemb
