// src/evaluation.cpp

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

#include "maskemb/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <iomanip>
#include <map>
#include <mutex>
#include <numeric>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include "maskemb/error.hpp"

namespace maskemb {

double cosine_score(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("cosine_score", "length", a.size(), b.size());
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) throw Error("cosine_score: zero vector");
  return std::clamp(ab / (std::sqrt(aa) * std::sqrt(bb)), -1.0, 1.0);
}

// EER -----------------------------------------------------------------------------

EerResult compute_eer(std::span<const TrialScore> scores) {
  std::vector<std::pair<double, bool>> s;
  s.reserve(scores.size());
  std::size_t npos = 0;
  for (const TrialScore &t : scores) {
    if (!std::isfinite(t.score)) throw NumericError("compute_eer: non-finite score");
    s.emplace_back(t.score, t.same);
    npos += t.same;
  }
  const std::size_t nneg = s.size() - npos;
  if (npos == 0 || nneg == 0)
    throw Error("compute_eer: both same and different trials are required");
  std::sort(s.begin(), s.end());

  // Operating point j accepts every score >= the j-th distinct value.
  std::vector<double> values, far, frr;
  std::size_t pos_below = 0, neg_below = 0;
  for (std::size_t i = 0; i < s.size();) {
    const double v = s[i].first;
    values.push_back(v);
    frr.push_back(static_cast<double>(pos_below) / static_cast<double>(npos));
    far.push_back(static_cast<double>(nneg - neg_below) / static_cast<double>(nneg));
    for (; i < s.size() && s[i].first == v; ++i) (s[i].second ? pos_below : neg_below)++;
  }
  frr.push_back(1.0);
  far.push_back(0.0);
  const std::size_t k = values.size();
  auto threshold = [&](std::size_t j) {
    if (j == 0) return values[0] - 1.0;
    if (j == k) return values[k - 1] + 1.0;
    return 0.5 * (values[j - 1] + values[j]);
  };
  for (std::size_t j = 1; j <= k; ++j) {
    const double d = frr[j] - far[j];
    if (d < 0.0) continue;
    if (d == 0.0) return {far[j], threshold(j)};
    const double d0 = frr[j - 1] - far[j - 1];
    const double a = -d0 / (d - d0);
    return {far[j - 1] + a * (far[j] - far[j - 1]),
            threshold(j - 1) + a * (threshold(j) - threshold(j - 1))};
  }
  throw Error("compute_eer: no crossing");  // unreachable: the last point has d = 1
}

BootstrapResult bootstrap_compare(std::span<const TrialScore> a,
                                  std::span<const TrialScore> b,
                                  std::size_t n_resamples, std::uint64_t seed) {
  if (a.size() != b.size())
    throw Error("bootstrap_compare: systems scored different numbers of trials");
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < b.size(); ++i)
    if (!index.emplace(b[i].id, i).second)
      throw Error("bootstrap_compare: duplicate trial id '" + b[i].id + "'");
  std::vector<TrialScore> bb(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto it = index.find(a[i].id);
    if (it == index.end())
      throw Error("bootstrap_compare: trial '" + a[i].id + "' missing from system B");
    if (b[it->second].same != a[i].same)
      throw Error("bootstrap_compare: labels disagree on trial '" + a[i].id + "'");
    bb[i] = b[it->second];
  }
  BootstrapResult r;
  r.observed = compute_eer(a).eer - compute_eer(bb).eer;
  r.resamples = n_resamples;
  if (r.observed == 0.0) return r;

  Rng rng(seed);
  const std::size_t n = a.size();
  std::vector<TrialScore> ra(n), rb(n);
  std::size_t flips = 0;
  for (std::size_t k = 0; k < n_resamples; ++k) {
    for (int attempt = 0;; ++attempt) {
      if (attempt == 1000)
        throw Error("bootstrap_compare: could not draw a two-class resample");
      std::size_t pos = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = rng.index(n);
        ra[i] = a[j];
        rb[i] = bb[j];
        pos += a[j].same;
      }
      if (pos > 0 && pos < n) break;
    }
    const double d = compute_eer(ra).eer - compute_eer(rb).eer;
    if (!(d * r.observed > 0.0)) ++flips;
  }
  r.p_value = static_cast<double>(flips) / static_cast<double>(n_resamples);
  return r;
}

// Trials ----------------------------------------------------------------------------

TrialInfo SynthTrialSource::info(std::size_t i) const {
  const Trial &t = set_.trials.at(i);
  return {t.id, t.same, t.bucket ? bucket_name(*t.bucket) : std::string()};
}

Mixture SynthTrialSource::enrollment(std::size_t i) const {
  return set_.enrollment(synth_, bank_, set_.trials.at(i));
}

Mixture SynthTrialSource::test(std::size_t i) const {
  return set_.test(synth_, bank_, set_.trials.at(i));
}

Tensor embed(Model &model, const Mixture &mix) {
  if (!model.config.any_guided()) return extract_embedding(model, mix.features, nullptr);
  const ActivityMask mask = mix.mask();
  return extract_embedding(model, mix.features, &mask);
}

namespace {

// Runs fn(k) for k in [0, n) in parallel and rethrows the first failure.
template <class Fn>
void parallel_for(std::size_t n, Fn fn) {
  std::exception_ptr error;
  std::mutex mu;
#pragma omp parallel for schedule(dynamic)
  for (long k = 0; k < static_cast<long>(n); ++k) {
    try {
      fn(static_cast<std::size_t>(k));
    } catch (...) {
      std::lock_guard<std::mutex> lock(mu);
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
}

std::vector<double> as_vector(const Tensor &t) {
  return {t.values().begin(), t.values().end()};
}

}  // namespace

std::vector<TrialScore> score_trials(
    Model &model, const TrialSource &source,
    const std::function<Mixture(const Mixture &)> &transform,
    const std::vector<std::size_t> &subset) {
  std::vector<std::size_t> idx = subset;
  if (idx.empty())
    for (std::size_t i = 0; i < source.size(); ++i) idx.push_back(i);
  std::vector<TrialScore> out(idx.size());
  parallel_for(idx.size(), [&](std::size_t k) {
    const TrialInfo info = source.info(idx[k]);
    const Tensor e = embed(model, source.enrollment(idx[k]));
    const Mixture test = source.test(idx[k]);
    const Tensor t = embed(model, transform ? transform(test) : test);
    out[k] = {info.id, cosine_score(e.values(), t.values()), info.same, info.bucket};
  });
  return out;
}

std::vector<BucketEer> eer_by_bucket(std::span<const TrialScore> scores) {
  auto row = [](const std::string &name, const std::vector<TrialScore> &s) {
    BucketEer r{name, std::nullopt, s.size()};
    const auto pos = std::count_if(s.begin(), s.end(), [](auto &t) { return t.same; });
    if (pos > 0 && static_cast<std::size_t>(pos) < s.size()) r.eer = compute_eer(s);
    return r;
  };
  std::vector<BucketEer> rows{
      row("all", std::vector<TrialScore>(scores.begin(), scores.end()))};
  for (OverlapBucket b : kAllBuckets) {
    std::vector<TrialScore> s;
    for (const TrialScore &t : scores)
      if (t.bucket == bucket_name(b)) s.push_back(t);
    if (!s.empty()) rows.push_back(row(bucket_name(b), s));
  }
  return rows;
}

namespace {

std::string cell(const std::optional<double> &v) {
  if (!v) return "n/a";
  std::ostringstream os;
  os << std::setprecision(10) << *v;
  return os.str();
}

}  // namespace

void write_eer_csv(std::ostream &out, std::span<const BucketEer> rows) {
  out << "bucket,eer,threshold,trials\n";
  for (const BucketEer &r : rows)
    out << '"' << r.bucket << "\"," << cell(r.eer ? std::optional(r.eer->eer) : std::nullopt)
        << ',' << cell(r.eer ? std::optional(r.eer->threshold) : std::nullopt) << ','
        << r.trials << '\n';
}

// Sweep -----------------------------------------------------------------------------

namespace {

SweepCell summarize(const std::string &bucket, double m,
                    const std::vector<TrialScore> &s) {
  SweepCell c{bucket, m, std::nullopt, std::nullopt, s.size()};
  double sum = 0.0;
  std::size_t same = 0;
  for (const TrialScore &t : s)
    if (t.same) {
      sum += t.score;
      ++same;
    }
  if (same > 0) c.mean_cosine = sum / static_cast<double>(same);
  if (same > 0 && same < s.size()) c.eer = compute_eer(s).eer;
  return c;
}

}  // namespace

SweepResult sweep_nontarget_duration(Model &model, const TrialSource &source,
                                     std::span<const double> m_values) {
  for (double m : m_values)
    if (!(m >= 0.0) || !std::isfinite(m))
      throw Error("sweep_nontarget_duration: m values must be finite and >= 0");
  SweepResult r;
  const std::size_t n = source.size();
  std::vector<std::uint8_t> ok(n, 0);
  std::vector<std::vector<double>> enroll(n);
  std::vector<TrialInfo> info(n);
  parallel_for(n, [&](std::size_t i) {
    info[i] = source.info(i);
    if (nontarget_only_runs(source.test(i).mask()).empty()) return;
    ok[i] = 1;
    enroll[i] = as_vector(embed(model, source.enrollment(i)));
  });
  for (std::size_t i = 0; i < n; ++i)
    if (ok[i]) r.eligible.push_back(i);

  std::vector<std::string> buckets;
  for (OverlapBucket b : kAllBuckets)
    if (std::any_of(info.begin(), info.end(),
                    [&](const TrialInfo &t) { return t.bucket == bucket_name(b); }))
      buckets.push_back(bucket_name(b));

  std::vector<std::vector<SweepCell>> per_bucket(buckets.size());
  for (double m : m_values) {
    std::vector<TrialScore> scores(r.eligible.size());
    parallel_for(r.eligible.size(), [&](std::size_t k) {
      const std::size_t i = r.eligible[k];
      const Tensor t = embed(model, scale_nontarget_duration(source.test(i), m));
      scores[k] = {info[i].id, cosine_score(enroll[i], t.values()), info[i].same,
                   info[i].bucket};
    });
    r.overall.push_back(summarize("all", m, scores));
    for (std::size_t b = 0; b < buckets.size(); ++b) {
      std::vector<TrialScore> s;
      for (const TrialScore &t : scores)
        if (t.bucket == buckets[b]) s.push_back(t);
      per_bucket[b].push_back(summarize(buckets[b], m, s));
    }
  }
  for (auto &cells : per_bucket)
    r.by_bucket.insert(r.by_bucket.end(), cells.begin(), cells.end());
  return r;
}

void write_sweep_csv(std::ostream &out, const SweepResult &r) {
  out << "m,mean_cosine,eer\n";
  for (const SweepCell &c : r.overall)
    out << c.m << ',' << cell(c.mean_cosine) << ',' << cell(c.eer) << '\n';
}

void write_sweep_bucket_csv(std::ostream &out, const SweepResult &r) {
  out << "bucket,m,mean_cosine,eer,trials\n";
  for (const SweepCell &c : r.by_bucket)
    out << '"' << c.bucket << "\"," << c.m << ',' << cell(c.mean_cosine) << ','
        << cell(c.eer) << ',' << c.trials << '\n';
}

// Diarization -----------------------------------------------------------------------

std::vector<std::size_t> ahc_cluster(const std::vector<std::vector<double>> &items,
                                     double threshold) {
  const std::size_t n = items.size();
  std::vector<std::size_t> owner(n);
  for (std::size_t i = 0; i < n; ++i) owner[i] = i;
  if (n == 0) return owner;
  std::vector<std::vector<double>> d(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < i; ++j)
      d[i][j] = d[j][i] = 1.0 - cosine_score(items[i], items[j]);
  std::vector<std::size_t> size(n, 1);
  std::vector<bool> alive(n, true);
  for (std::size_t merges = 0; merges + 1 < n; ++merges) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t a = n, b = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (!alive[i]) continue;
      for (std::size_t j = i + 1; j < n; ++j)
        if (alive[j] && d[i][j] < best) {
          best = d[i][j];
          a = i;
          b = j;
        }
    }
    if (!(best < threshold)) break;
    // Average linkage update, b folded into a.
    for (std::size_t k = 0; k < n; ++k) {
      if (!alive[k] || k == a || k == b) continue;
      d[a][k] = d[k][a] =
          (static_cast<double>(size[a]) * d[a][k] + static_cast<double>(size[b]) * d[b][k]) /
          static_cast<double>(size[a] + size[b]);
    }
    size[a] += size[b];
    alive[b] = false;
    for (std::size_t &o : owner)
      if (o == b) o = a;
  }
  std::map<std::size_t, std::size_t> relabel;
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto it = relabel.emplace(owner[i], relabel.size()).first;
    labels[i] = it->second;
  }
  return labels;
}

namespace {

struct LocalItem {
  std::size_t begin = 0, end = 0;  // window frames
  FrameMask active;                // over the window
  std::vector<double> embedding;
};

struct DiarFrames {
  std::size_t frames = 0;
  double shift = 0.01;
  std::string recording;
  std::vector<LocalItem> items;
};

std::vector<std::pair<std::size_t, std::size_t>> window_spans(std::size_t T, std::size_t W,
                                                              std::size_t S) {
  std::vector<std::pair<std::size_t, std::size_t>> w;
  if (T <= W) return {{0, T}};
  for (std::size_t s = 0; s + W < T; s += S) w.emplace_back(s, s + W);
  if (w.back().second != T) w.emplace_back(T - W, T);
  return w;
}

FeatureSequence gather_frames(const FeatureSequence &f, const std::vector<std::size_t> &cols) {
  const std::size_t F = f.num_bins(), T = f.num_frames();
  std::vector<double> v(F * cols.size());
  const auto x = f.frames.values();
  for (std::size_t b = 0; b < F; ++b)
    for (std::size_t k = 0; k < cols.size(); ++k) v[b * cols.size() + k] = x[b * T + cols[k]];
  FeatureSequence out = f;
  out.frames = Tensor({F, cols.size()}, std::move(v));
  return out;
}

DiarFrames local_items(Model &model, const Mixture &rec, const DiarConfig &config) {
  if (!(config.window_s > 0) || !(config.shift_s > 0))
    throw ConfigError("diarization: window and shift must be positive");
  DiarFrames out;
  out.frames = rec.frames();
  out.shift = rec.features.frame_shift_s;
  out.recording = rec.annotation.recording;
  const std::size_t T = out.frames;
  const auto W = static_cast<std::size_t>(std::lround(config.window_s / out.shift));
  const auto S = std::max<std::size_t>(1, std::lround(config.shift_s / out.shift));
  std::vector<FrameMask> spk;
  for (const SpeakerTurns &s : rec.annotation.speakers)
    spk.push_back(rasterize_speaker(s, T, out.shift));
  const bool guided = model.config.any_guided();

  struct Job {
    std::size_t begin, end, speaker;
  };
  std::vector<Job> jobs;
  for (auto [b, e] : window_spans(T, std::max<std::size_t>(W, 1), S))
    for (std::size_t k = 0; k < spk.size(); ++k) {
      const auto n = std::count(spk[k].begin() + b, spk[k].begin() + e, 1);
      if (n > 0 && static_cast<std::size_t>(n) >= config.min_frames) jobs.push_back({b, e, k});
    }
  out.items.resize(jobs.size());
  parallel_for(jobs.size(), [&](std::size_t j) {
    const Job &job = jobs[j];
    const std::size_t L = job.end - job.begin;
    LocalItem &item = out.items[j];
    item.begin = job.begin;
    item.end = job.end;
    ActivityMask mask{FrameMask(L, 0), FrameMask(L, 0)};
    for (std::size_t t = 0; t < L; ++t)
      for (std::size_t k = 0; k < spk.size(); ++k)
        if (spk[k][job.begin + t]) (k == job.speaker ? mask.target : mask.nontarget)[t] = 1;
    item.active = mask.target;
    Tensor e;
    if (guided) {
      std::vector<std::size_t> cols(L);
      for (std::size_t t = 0; t < L; ++t) cols[t] = job.begin + t;
      e = extract_embedding(model, gather_frames(rec.features, cols), &mask);
    } else {
      // Frames where the speaker is alone; all of its frames when there are
      // none.
      std::vector<std::size_t> alone, all;
      for (std::size_t t = 0; t < L; ++t) {
        if (!mask.target[t]) continue;
        all.push_back(job.begin + t);
        if (!mask.nontarget[t]) alone.push_back(job.begin + t);
      }
      e = extract_embedding(model, gather_frames(rec.features, alone.empty() ? all : alone),
                            nullptr);
    }
    item.embedding = as_vector(e);
  });
  return out;
}

DiarHypothesis cluster_and_stitch(const DiarFrames &df, double threshold) {
  std::vector<std::vector<double>> embs;
  for (const LocalItem &it : df.items) embs.push_back(it.embedding);
  const std::vector<std::size_t> cluster = ahc_cluster(embs, threshold);
  const std::size_t C =
      cluster.empty() ? 0 : *std::max_element(cluster.begin(), cluster.end()) + 1;
  const std::size_t T = df.frames;

  // Cluster centroids, then each window's local speakers go to distinct
  // clusters by maximum total cosine.
  std::vector<std::vector<double>> centroid(C);
  for (std::size_t i = 0; i < embs.size(); ++i) {
    auto &c = centroid[cluster[i]];
    if (c.empty()) c.assign(embs[i].size(), 0.0);
    const double norm = std::sqrt(std::inner_product(embs[i].begin(), embs[i].end(),
                                                     embs[i].begin(), 0.0));
    for (std::size_t k = 0; k < c.size(); ++k) c[k] += embs[i][k] / norm;
  }
  std::map<std::pair<std::size_t, std::size_t>, std::vector<std::size_t>> windows;
  for (std::size_t i = 0; i < df.items.size(); ++i)
    windows[{df.items[i].begin, df.items[i].end}].push_back(i);
  std::vector<long> label(df.items.size(), -1);
  for (const auto &[span, members] : windows) {
    std::vector<std::vector<double>> w;
    for (std::size_t i : members) {
      w.emplace_back();
      for (std::size_t c = 0; c < C; ++c)
        w.back().push_back(2.0 + cosine_score(embs[i], centroid[c]));
    }
    const std::vector<long> assigned = max_weight_assignment(w);
    for (std::size_t k = 0; k < members.size(); ++k) label[members[k]] = assigned[k];
  }

  std::vector<std::vector<std::size_t>> votes(C, std::vector<std::size_t>(T, 0));
  std::vector<std::size_t> speakers(T, 0);
  for (std::size_t i = 0; i < df.items.size(); ++i) {
    if (label[i] < 0) continue;
    const LocalItem &it = df.items[i];
    for (std::size_t t = it.begin; t < it.end; ++t)
      votes[static_cast<std::size_t>(label[i])][t] += it.active[t - it.begin];
  }
  for (const auto &[span, members] : windows)
    for (std::size_t t = span.first; t < span.second; ++t) {
      std::size_t n = 0;
      for (std::size_t i : members) n += df.items[i].active[t - span.first];
      speakers[t] = std::max(speakers[t], n);
    }

  std::vector<FrameMask> hyp(C, FrameMask(T, 0));
  std::vector<std::size_t> order(C);
  for (std::size_t t = 0; t < T; ++t) {
    if (speakers[t] == 0) continue;
    for (std::size_t c = 0; c < C; ++c) order[c] = c;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return votes[a][t] > votes[b][t]; });
    for (std::size_t k = 0; k < std::min(speakers[t], C); ++k)
      if (votes[order[k]][t] > 0) hyp[order[k]][t] = 1;
  }

  // Contiguous labels in order of first activity.
  std::vector<std::pair<std::size_t, std::size_t>> first;
  for (std::size_t c = 0; c < C; ++c) {
    const auto it = std::find(hyp[c].begin(), hyp[c].end(), 1);
    if (it != hyp[c].end()) first.emplace_back(it - hyp[c].begin(), c);
  }
  std::sort(first.begin(), first.end());
  DiarHypothesis h;
  h.clusters = first.size();
  h.turns.recording = df.recording;
  h.turns.duration_s = static_cast<double>(T) * df.shift;
  for (std::size_t k = 0; k < first.size(); ++k) {
    SpeakerTurns &s = h.turns.add_speaker(std::to_string(k));
    const FrameMask &m = hyp[first[k].second];
    for (std::size_t t = 0; t < T;) {
      if (!m[t]) {
        ++t;
        continue;
      }
      std::size_t e = t;
      while (e < T && m[e]) ++e;
      s.intervals.push_back({static_cast<double>(t) * df.shift, static_cast<double>(e) * df.shift});
      t = e;
    }
  }
  return h;
}

}  // namespace

DiarHypothesis run_diarization(Model &model, const Mixture &recording,
                               const DiarConfig &config) {
  return cluster_and_stitch(local_items(model, recording, config), config.ahc_threshold);
}

double calibrate_ahc_threshold(Model &model, const std::vector<Mixture> &recordings,
                               DiarConfig config, std::span<const double> candidates) {
  if (candidates.empty() || recordings.empty())
    throw Error("calibrate_ahc_threshold: need candidates and recordings");
  std::vector<DiarFrames> frames;
  for (const Mixture &r : recordings) frames.push_back(local_items(model, r, config));
  std::vector<double> mean(candidates.size(), 0.0);
  for (std::size_t c = 0; c < candidates.size(); ++c)
    for (std::size_t r = 0; r < recordings.size(); ++r)
      mean[c] += compute_der(recordings[r].annotation,
                             cluster_and_stitch(frames[r], candidates[c]).turns)
                     .der /
                 static_cast<double>(recordings.size());
  const double best = *std::min_element(mean.begin(), mean.end());
  // Middle of the longest run of best candidates.
  std::size_t run_start = 0, run_len = 0, best_start = 0, best_len = 0;
  for (std::size_t c = 0; c < mean.size(); ++c) {
    if (mean[c] == best) {
      if (run_len == 0) run_start = c;
      if (++run_len > best_len) {
        best_len = run_len;
        best_start = run_start;
      }
    } else {
      run_len = 0;
    }
  }
  return candidates[best_start + (best_len - 1) / 2];
}

// DER -------------------------------------------------------------------------------

std::vector<long> max_weight_assignment(const std::vector<std::vector<double>> &w) {
  const std::size_t rows = w.size(), cols = rows ? w[0].size() : 0;
  const std::size_t n = std::max(rows, cols);
  std::vector<long> out(rows, -1);
  if (n == 0) return out;
  double top = 0.0;
  for (const auto &r : w) {
    if (r.size() != cols) throw ShapeError("max_weight_assignment", "ragged matrix");
    for (double x : r) top = std::max(top, x);
  }
  auto cost = [&](std::size_t i, std::size_t j) {
    return (i < rows && j < cols ? top - w[i][j] : top);
  };
  // Hungarian method on the padded square cost matrix (1-based potentials).
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  for (std::size_t j = 1; j <= n; ++j)
    if (p[j] - 1 < rows && j - 1 < cols) out[p[j] - 1] = static_cast<long>(j - 1);
  return out;
}

namespace {

bool active_at(const SpeakerTurns &s, double t) {
  for (const Interval &i : s.intervals)
    if (i.onset <= t && t < i.offset) return true;
  return false;
}

}  // namespace

DerResult compute_der(const ActivityAnnotation &ref, const ActivityAnnotation &hyp) {
  std::vector<double> cuts;
  for (const auto *a : {&ref, &hyp})
    for (const SpeakerTurns &s : a->speakers)
      for (const Interval &i : s.intervals) {
        if (!(i.offset >= i.onset)) throw FormatError("compute_der: reversed interval");
        cuts.push_back(i.onset);
        cuts.push_back(i.offset);
      }
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

  const std::size_t R = ref.speakers.size(), H = hyp.speakers.size();
  struct Segment {
    double dur;
    std::vector<bool> r, h;
  };
  std::vector<Segment> segs;
  std::vector<std::vector<double>> overlap(R, std::vector<double>(H, 0.0));
  for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
    const double mid = 0.5 * (cuts[k] + cuts[k + 1]);
    Segment s{cuts[k + 1] - cuts[k], std::vector<bool>(R), std::vector<bool>(H)};
    for (std::size_t i = 0; i < R; ++i) s.r[i] = active_at(ref.speakers[i], mid);
    for (std::size_t j = 0; j < H; ++j) s.h[j] = active_at(hyp.speakers[j], mid);
    for (std::size_t i = 0; i < R; ++i)
      for (std::size_t j = 0; j < H; ++j)
        if (s.r[i] && s.h[j]) overlap[i][j] += s.dur;
    segs.push_back(std::move(s));
  }
  const std::vector<long> map =
      H ? max_weight_assignment(overlap) : std::vector<long>(R, -1);

  DerResult d;
  for (const Segment &s : segs) {
    std::size_t nr = 0, nh = 0, correct = 0;
    for (std::size_t i = 0; i < R; ++i) {
      nr += s.r[i];
      if (s.r[i] && map[i] >= 0 && s.h[static_cast<std::size_t>(map[i])]) ++correct;
    }
    for (std::size_t j = 0; j < H; ++j) nh += s.h[j];
    d.reference += s.dur * static_cast<double>(nr);
    if (nr > nh) d.missed += s.dur * static_cast<double>(nr - nh);
    if (nh > nr) d.false_alarm += s.dur * static_cast<double>(nh - nr);
    d.confusion += s.dur * static_cast<double>(std::min(nr, nh) - correct);
  }
  if (!(d.reference > 0.0)) throw Error("compute_der: reference has no speech");
  d.der = (d.missed + d.false_alarm + d.confusion) / d.reference;
  return d;
}

}  // namespace maskemb
