// src/synth.cpp

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

#include "maskemb/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "maskemb/error.hpp"

namespace maskemb {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kPauseLevel = -10.0;

struct Formant {
  double center, height, width;
};

double db_to_log(double db) { return db * std::log(10.0) / 10.0; }

std::size_t uniform_size(Rng &rng, std::size_t lo, std::size_t hi) {
  return lo + rng.index(hi - lo + 1);
}

// Runs of ones in a mask, as [begin, end).
std::vector<std::pair<std::size_t, std::size_t>> runs_of(const FrameMask &m) {
  std::vector<std::pair<std::size_t, std::size_t>> runs;
  for (std::size_t t = 0; t < m.size();) {
    if (!m[t]) {
      ++t;
      continue;
    }
    std::size_t e = t;
    while (e < m.size() && m[e]) ++e;
    runs.emplace_back(t, e);
    t = e;
  }
  return runs;
}

ActivityAnnotation annotation_from_masks(const std::string &recording,
                                         const std::vector<std::string> &ids,
                                         const std::vector<FrameMask> &masks,
                                         std::size_t frames, double shift) {
  ActivityAnnotation a;
  a.recording = recording;
  a.duration_s = static_cast<double>(frames) * shift;
  for (std::size_t s = 0; s < ids.size(); ++s) {
    SpeakerTurns &turns = a.add_speaker(ids[s]);
    for (auto [b, e] : runs_of(masks[s]))
      turns.intervals.push_back(
          {static_cast<double>(b) * shift, static_cast<double>(e) * shift});
  }
  return a;
}

std::vector<Interval> merged(std::vector<Interval> v) {
  std::sort(v.begin(), v.end(),
            [](const Interval &a, const Interval &b) { return a.onset < b.onset; });
  std::vector<Interval> out;
  for (const Interval &i : v) {
    if (!out.empty() && i.onset <= out.back().offset)
      out.back().offset = std::max(out.back().offset, i.offset);
    else
      out.push_back(i);
  }
  return out;
}

double random_envelope_coefficient(Rng &rng, double scale, std::size_t j) {
  return rng.normal() * scale / std::sqrt(static_cast<double>(j));
}

std::vector<double> cosine_shape(std::span<const double> coef, std::size_t F) {
  std::vector<double> v(F, 0.0);
  for (std::size_t f = 0; f < F; ++f) {
    const double u = (static_cast<double>(f) + 0.5) / static_cast<double>(F);
    for (std::size_t j = 0; j < coef.size(); ++j)
      v[f] += coef[j] * std::cos(kPi * static_cast<double>(j + 1) * u);
  }
  return v;
}

}  // namespace

// Config ----------------------------------------------------------------------

void SynthConfig::validate() const {
  if (n_mels < 2) throw ConfigError("synth.n_mels must be >= 2");
  if (!(frame_shift_s > 0)) throw ConfigError("synth.frame_shift_s must be > 0");
  if (basis < 1) throw ConfigError("synth.basis must be >= 1");
  if (phones < 2) throw ConfigError("synth.phones must be >= 2");
  if (phone_min_frames < 1 || phone_max_frames < phone_min_frames)
    throw ConfigError("synth.phone_min_frames/phone_max_frames out of order");
  if (envelope_scale < 0 || session_scale < 0 || frame_noise < 0 ||
      ripple_depth < 0 || modulation_depth < 0 || gain_db < 0 ||
      min_envelope_distance < 0)
    throw ConfigError("synth: scales must be non-negative");
  if (!(pause_probability >= 0 && pause_probability < 1))
    throw ConfigError("synth.pause_probability must be in [0, 1)");
  if (!(warp_range >= 0 && warp_range < 0.5))
    throw ConfigError("synth.warp_range must be in [0, 0.5)");
}

Json to_json(const SynthConfig &c) {
  return Json{{"n_mels", c.n_mels},
              {"frame_shift_s", c.frame_shift_s},
              {"basis", c.basis},
              {"envelope_scale", c.envelope_scale},
              {"min_envelope_distance", c.min_envelope_distance},
              {"session_scale", c.session_scale},
              {"phones", c.phones},
              {"phone_scale", c.phone_scale},
              {"pause_probability", c.pause_probability},
              {"warp_range", c.warp_range},
              {"phone_seed", c.phone_seed},
              {"phone_min_frames", c.phone_min_frames},
              {"phone_max_frames", c.phone_max_frames},
              {"ripple_depth", c.ripple_depth},
              {"modulation_depth", c.modulation_depth},
              {"frame_noise", c.frame_noise},
              {"noise_floor", c.noise_floor},
              {"noise_snr_db", c.noise_snr_db},
              {"gain_db", c.gain_db},
              {"mean_normalize", c.mean_normalize}};
}

SynthConfig synth_config_from_json(const Json &j, SynthConfig c) {
  StrictReader r(j, "synth");
  r.get("n_mels", c.n_mels);
  r.get("frame_shift_s", c.frame_shift_s);
  r.get("basis", c.basis);
  r.get("envelope_scale", c.envelope_scale);
  r.get("min_envelope_distance", c.min_envelope_distance);
  r.get("session_scale", c.session_scale);
  r.get("phones", c.phones);
  r.get("phone_scale", c.phone_scale);
  r.get("pause_probability", c.pause_probability);
  r.get("warp_range", c.warp_range);
  r.get("phone_seed", c.phone_seed);
  r.get("phone_min_frames", c.phone_min_frames);
  r.get("phone_max_frames", c.phone_max_frames);
  r.get("ripple_depth", c.ripple_depth);
  r.get("modulation_depth", c.modulation_depth);
  r.get("frame_noise", c.frame_noise);
  r.get("noise_floor", c.noise_floor);
  r.get("noise_snr_db", c.noise_snr_db);
  r.get("gain_db", c.gain_db);
  r.get("mean_normalize", c.mean_normalize);
  r.finish();
  c.validate();
  return c;
}

// Speakers --------------------------------------------------------------------

double envelope_distance(const SyntheticSpeaker &a, const SyntheticSpeaker &b) {
  if (a.envelope.size() != b.envelope.size())
    throw ShapeError("envelope_distance", "envelope", a.envelope.size(),
                     b.envelope.size());
  double s = 0.0;
  for (std::size_t f = 0; f < a.envelope.size(); ++f) {
    const double d = a.envelope[f] - b.envelope[f];
    s += d * d;
  }
  return std::sqrt(s);
}

std::vector<SyntheticSpeaker> synth_speaker_bank(std::uint64_t seed,
                                                 std::size_t n_speakers,
                                                 const SynthConfig &config) {
  config.validate();
  Rng rng(seed);
  std::vector<SyntheticSpeaker> bank;
  bank.reserve(n_speakers);
  constexpr std::size_t kMaxDraws = 1000;
  for (std::size_t i = 0; i < n_speakers; ++i) {
    bool accepted = false;
    for (std::size_t draw = 0; draw < kMaxDraws && !accepted; ++draw) {
      SyntheticSpeaker s;
      char id[32];
      std::snprintf(id, sizeof id, "spk%04zu", i);
      s.id = id;
      std::vector<double> coef(config.basis);
      for (std::size_t j = 0; j < coef.size(); ++j)
        coef[j] = random_envelope_coefficient(rng, config.envelope_scale, j + 1);
      s.envelope = cosine_shape(coef, config.n_mels);
      s.f0_hz = 85.0 * std::exp(rng.uniform() * std::log(250.0 / 85.0));
      s.ripple_depth = config.ripple_depth * rng.uniform(0.5, 1.5);
      s.modulation_hz = rng.uniform(3.0, 6.0);
      s.warp = 1.0 + rng.uniform(-config.warp_range, config.warp_range);
      s.phone_rate = rng.uniform(0.8, 1.25);
      s.seed = rng.next();
      accepted = std::all_of(bank.begin(), bank.end(), [&](const auto &o) {
        return envelope_distance(s, o) >= config.min_envelope_distance;
      });
      if (accepted) bank.push_back(std::move(s));
    }
    if (!accepted)
      throw Error("synth_speaker_bank: could not place speaker " +
                  std::to_string(i) + " at min_envelope_distance " +
                  std::to_string(config.min_envelope_distance));
  }
  return bank;
}

// Buckets ---------------------------------------------------------------------

std::string bucket_name(OverlapBucket b) {
  switch (b) {
    case OverlapBucket::k0: return "0";
    case OverlapBucket::k0to25: return "(0,25)";
    case OverlapBucket::k25to50: return "[25,50)";
    case OverlapBucket::k50to75: return "[50,75)";
    case OverlapBucket::k75to100: return "[75,100)";
    case OverlapBucket::k100: return "100";
  }
  return "?";
}

OverlapBucket parse_bucket(const std::string &name) {
  for (OverlapBucket b : kAllBuckets)
    if (bucket_name(b) == name) return b;
  throw ConfigError("unknown overlap bucket '" + name + "'");
}

namespace {
constexpr double kRatioTol = 1e-9;
}

bool bucket_contains(OverlapBucket b, double r) {
  switch (b) {
    case OverlapBucket::k0: return r <= kRatioTol;
    case OverlapBucket::k0to25: return r > kRatioTol && r < 0.25 - kRatioTol;
    case OverlapBucket::k25to50: return r >= 0.25 - kRatioTol && r < 0.5 - kRatioTol;
    case OverlapBucket::k50to75: return r >= 0.5 - kRatioTol && r < 0.75 - kRatioTol;
    case OverlapBucket::k75to100:
      return r >= 0.75 - kRatioTol && r < 1.0 - kRatioTol;
    case OverlapBucket::k100: return r >= 1.0 - kRatioTol;
  }
  return false;
}

OverlapBucket bucket_of(double ratio) {
  for (OverlapBucket b : kAllBuckets)
    if (bucket_contains(b, ratio)) return b;
  throw Error("bucket_of: ratio " + std::to_string(ratio) + " out of [0, 1]");
}

// Mixtures --------------------------------------------------------------------

ActivityMask Mixture::mask() const { return mask_for(target_id); }

ActivityMask Mixture::mask_for(const std::string &speaker) const {
  return rasterize_activities(annotation, speaker, frames(),
                              features.frame_shift_s);
}

double overlap_ratio(const ActivityAnnotation &annotation,
                     const std::string &target_id) {
  const SpeakerTurns *target = annotation.find(target_id);
  if (target == nullptr)
    throw Error("overlap_ratio: unknown target '" + target_id + "'");
  std::vector<Interval> others;
  for (const SpeakerTurns &s : annotation.speakers)
    if (s.id != target_id)
      others.insert(others.end(), s.intervals.begin(), s.intervals.end());
  others = merged(std::move(others));
  const std::vector<Interval> mine = merged(target->intervals);
  double total = 0.0, covered = 0.0;
  for (const Interval &i : mine) {
    total += i.offset - i.onset;
    for (const Interval &o : others) {
      const double lo = std::max(i.onset, o.onset);
      const double hi = std::min(i.offset, o.offset);
      if (hi > lo) covered += hi - lo;
    }
  }
  if (total <= 0.0)
    throw EmptyTargetMask("overlap_ratio: target '" + target_id + "'");
  return covered / total;
}

Synthesizer::Synthesizer(SynthConfig config) : config_(std::move(config)) {
  config_.validate();
  LogMelConfig mel;
  mel.n_mels = static_cast<int>(config_.n_mels);
  mel_hz_ = mel_center_frequencies(mel);

  // Phone 0 is a pause; the rest carry three formant peaks each, stored as
  // a dense shape over a fine normalized-frequency grid.
  Rng rng(config_.phone_seed);
  constexpr std::size_t kGrid = 512;
  phones_.assign(config_.phones, std::vector<double>(kGrid, kPauseLevel));
  for (std::size_t p = 1; p < config_.phones; ++p) {
    std::vector<Formant> formants;
    for (std::size_t k = 0; k < 3; ++k)
      formants.push_back({rng.uniform(0.05 + 0.22 * k, 0.27 + 0.22 * k),
                          config_.phone_scale * rng.uniform(0.6, 1.4),
                          rng.uniform(0.015, 0.05)});
    const double tilt = rng.uniform(-1.5, 0.5);
    for (std::size_t g = 0; g < kGrid; ++g) {
      const double u = (static_cast<double>(g) + 0.5) / kGrid;
      double v = tilt * u;
      for (const Formant &fm : formants) {
        const double z = (u - fm.center) / fm.width;
        v += fm.height * std::exp(-0.5 * z * z);
      }
      phones_[p][g] = v;
    }
  }
}

std::vector<double> Synthesizer::utterance_energy(const SyntheticSpeaker &spk,
                                                  std::size_t frames,
                                                  Rng &rng) const {
  const std::size_t F = config_.n_mels;
  if (spk.envelope.size() != F)
    throw ShapeError("Synthesizer::utterance_energy", "envelope", F,
                     spk.envelope.size());
  std::vector<double> coef(config_.basis);
  for (std::size_t j = 0; j < coef.size(); ++j)
    coef[j] = random_envelope_coefficient(rng, config_.session_scale, j + 1);
  const std::vector<double> session = cosine_shape(coef, F);
  const double gain = db_to_log(rng.uniform(-config_.gain_db, config_.gain_db));
  const double f0 = spk.f0_hz * rng.uniform(0.95, 1.05);
  const double phase = rng.uniform(0.0, 2.0 * kPi);
  const double shift = config_.frame_shift_s;

  // Phone sequence.
  std::vector<std::size_t> phone(frames);
  for (std::size_t t = 0; t < frames;) {
    const std::size_t p = rng.bernoulli(config_.pause_probability)
                              ? 0
                              : 1 + rng.index(config_.phones - 1);
    const double len = static_cast<double>(uniform_size(
                           rng, config_.phone_min_frames, config_.phone_max_frames)) *
                       spk.phone_rate;
    const std::size_t n = std::max<std::size_t>(1, std::lround(len));
    for (std::size_t i = 0; i < n && t < frames; ++i) phone[t++] = p;
  }

  const std::size_t grid = phones_[0].size();
  std::vector<double> out(F * frames);
  for (std::size_t t = 0; t < frames; ++t) {
    const double time = static_cast<double>(t) * shift;
    const double mod = config_.modulation_depth *
                       std::sin(2.0 * kPi * spk.modulation_hz * time + phase);
    const double f0_t = f0 * (1.0 + 0.03 * std::sin(2.0 * kPi * 0.7 * time + phase));
    const bool pause = phone[t] == 0;
    for (std::size_t f = 0; f < F; ++f) {
      double v;
      if (pause) {
        v = kPauseLevel;
      } else {
        const double u = (static_cast<double>(f) + 0.5) / static_cast<double>(F);
        const double warped = std::min(u / spk.warp, 1.0 - 0.5 / grid);
        const auto g = static_cast<std::size_t>(warped * static_cast<double>(grid));
        const double ripple = spk.ripple_depth * std::exp(-mel_hz_[f] / 1000.0) *
                              std::cos(2.0 * kPi * mel_hz_[f] / f0_t);
        v = spk.envelope[f] + session[f] + gain + mod + phones_[phone[t]][g] +
            ripple;
      }
      v += config_.frame_noise * rng.normal();
      out[f * frames + t] = std::exp(v);
    }
  }
  return out;
}

Mixture Synthesizer::render(const std::vector<const SyntheticSpeaker *> &speakers,
                            const std::vector<Placement> &placements,
                            std::size_t total, std::size_t target,
                            Rng &rng) const {
  const std::size_t F = config_.n_mels;
  if (total == 0) throw Error("Synthesizer::render: zero frames");
  if (target >= speakers.size())
    throw Error("Synthesizer::render: target index out of range");
  std::vector<double> energy(F * total, 0.0);
  std::vector<FrameMask> active(speakers.size(), FrameMask(total, 0));
  double speech_power = 0.0;
  std::size_t speech_cells = 0;
  for (const Placement &pl : placements) {
    if (pl.speaker >= speakers.size() || pl.length == 0 ||
        pl.onset + pl.length > total)
      throw Error("Synthesizer::render: placement outside the mixture");
    const std::vector<double> e = utterance_energy(*speakers[pl.speaker], pl.length, rng);
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t t = 0; t < pl.length; ++t) {
        const double x = e[f * pl.length + t];
        energy[f * total + pl.onset + t] += x;
        speech_power += x;
        ++speech_cells;
      }
    for (std::size_t t = 0; t < pl.length; ++t) active[pl.speaker][pl.onset + t] = 1;
  }

  // Background: constant floor plus pink noise at the configured SNR.
  const double floor = std::exp(config_.noise_floor);
  const double noise_power =
      speech_cells ? speech_power / speech_cells *
                         std::pow(10.0, -config_.noise_snr_db / 10.0)
                   : 0.0;
  double pink_mean = 0.0;
  for (double hz : mel_hz_) pink_mean += 1.0 / hz;
  pink_mean /= static_cast<double>(F);
  std::vector<double> feats(F * total);
  for (std::size_t f = 0; f < F; ++f) {
    const double pink = noise_power * (1.0 / mel_hz_[f]) / pink_mean;
    for (std::size_t t = 0; t < total; ++t) {
      const double n = pink * std::exp(0.5 * rng.normal());
      feats[f * total + t] = std::log(energy[f * total + t] + floor + n);
    }
  }
  if (config_.mean_normalize) {
    for (std::size_t f = 0; f < F; ++f) {
      double m = 0.0;
      for (std::size_t t = 0; t < total; ++t) m += feats[f * total + t];
      m /= static_cast<double>(total);
      for (std::size_t t = 0; t < total; ++t) feats[f * total + t] -= m;
    }
  }

  Mixture mix;
  mix.features.frames = Tensor({F, total}, std::move(feats));
  mix.features.frame_shift_s = config_.frame_shift_s;
  std::vector<std::string> ids;
  for (const SyntheticSpeaker *s : speakers) ids.push_back(s->id);
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (ids[i] == ids[j])
        throw Error("Synthesizer::render: speaker '" + ids[i] + "' listed twice");
  mix.annotation = annotation_from_masks(mix.id, ids, active, total,
                                         config_.frame_shift_s);
  mix.target_id = ids[target];
  if (std::find(active[target].begin(), active[target].end(), 1) !=
      active[target].end())
    mix.overlap_ratio = overlap_ratio(mix.annotation, mix.target_id);
  return mix;
}

Mixture Synthesizer::single(const SyntheticSpeaker &speaker, std::size_t frames,
                            Rng &rng) const {
  return render({&speaker}, {{0, 0, frames}}, frames, 0, rng);
}

std::vector<double> Synthesizer::waveform(const SyntheticSpeaker &spk,
                                          std::size_t samples, Rng &rng) const {
  const double sr = kSampleRate;
  const double f0 = spk.f0_hz * rng.uniform(0.95, 1.05);
  const std::size_t harmonics = static_cast<std::size_t>(7600.0 / f0);
  // Harmonic amplitudes follow the envelope at the nearest mel center.
  std::vector<double> amp(harmonics);
  std::vector<double> phase(harmonics);
  for (std::size_t h = 0; h < harmonics; ++h) {
    const double hz = f0 * static_cast<double>(h + 1);
    std::size_t best = 0;
    for (std::size_t f = 1; f < mel_hz_.size(); ++f)
      if (std::abs(mel_hz_[f] - hz) < std::abs(mel_hz_[best] - hz)) best = f;
    amp[h] = std::exp(0.5 * spk.envelope[best]);
    phase[h] = rng.uniform(0.0, 2.0 * kPi);
  }
  double norm = 0.0;
  for (double a : amp) norm += a;
  std::vector<double> out(samples);
  for (std::size_t n = 0; n < samples; ++n) {
    const double t = static_cast<double>(n) / sr;
    const double env = 0.6 + 0.4 * std::sin(2.0 * kPi * spk.modulation_hz * t);
    double v = 0.0;
    for (std::size_t h = 0; h < harmonics; ++h)
      v += amp[h] * std::sin(2.0 * kPi * f0 * static_cast<double>(h + 1) * t + phase[h]);
    out[n] = 0.5 * env * v / norm;
  }
  return out;
}

namespace {

std::size_t overlap_frames(std::size_t a0, std::size_t a1, std::size_t b0,
                           std::size_t b1) {
  const std::size_t lo = std::max(a0, b0), hi = std::min(a1, b1);
  return hi > lo ? hi - lo : 0;
}

bool onsets_separated(const std::vector<Placement> &p, std::size_t min_gap) {
  for (std::size_t i = 0; i < p.size(); ++i)
    for (std::size_t j = 0; j < i; ++j) {
      const std::size_t d =
          p[i].onset > p[j].onset ? p[i].onset - p[j].onset : p[j].onset - p[i].onset;
      if (d < min_gap) return false;
    }
  return true;
}

// Inclusive overlap-frame range for a target of `len` frames.
std::pair<std::size_t, std::size_t> overlap_range(OverlapBucket b, std::size_t len) {
  auto ceil_q = [len](std::size_t q) { return (q * len + 3) / 4; };
  switch (b) {
    case OverlapBucket::k0: return {0, 0};
    case OverlapBucket::k0to25: return {1, ceil_q(1) - 1};
    case OverlapBucket::k25to50: return {ceil_q(1), ceil_q(2) - 1};
    case OverlapBucket::k50to75: return {ceil_q(2), ceil_q(3) - 1};
    case OverlapBucket::k75to100: return {ceil_q(3), len - 1};
    case OverlapBucket::k100: return {len, len};
  }
  return {1, 0};
}

}  // namespace

Mixture synth_mixture(const Synthesizer &synth,
                      const std::vector<const SyntheticSpeaker *> &speakers,
                      OverlapBucket bucket, const MixtureOptions &opt, Rng &rng) {
  const std::size_t n = speakers.size();
  if (n < 1 || n > 4)
    throw Error("synth_mixture: expected 1 to 4 speakers, got " + std::to_string(n));
  if (n == 1 && bucket != OverlapBucket::k0)
    throw Error("synth_mixture: bucket " + bucket_name(bucket) +
                " needs at least one interferer");
  if (opt.clip_min_frames < 1 || opt.clip_max_frames < opt.clip_min_frames)
    throw ConfigError("synth_mixture: bad clip length range");

  for (std::size_t attempt = 0; attempt < opt.max_attempts; ++attempt) {
    std::vector<std::size_t> len(n);
    for (auto &l : len) l = uniform_size(rng, opt.clip_min_frames, opt.clip_max_frames);
    const auto [olo, ohi] = overlap_range(bucket, len[0]);
    if (olo > ohi) continue;
    const std::size_t o = olo + rng.index(ohi - olo + 1);

    // Work on a wide canvas and trim afterwards.
    std::size_t span = 0;
    for (std::size_t l : len) span += l + opt.gap_max_frames;
    const std::size_t a = span;
    std::vector<Placement> pl(n);
    pl[0] = {0, a, len[0]};
    const std::size_t tend = a + len[0];
    std::size_t next = 1;
    bool ok = true;
    if (o > 0) {
      const bool split = n >= 3 && o >= 2 && rng.bernoulli(0.5);
      if (split) {
        // Head and tail overlaps from two interferers.
        const std::size_t lo1 = o > len[2] ? o - len[2] : 1;
        const std::size_t hi1 = std::min(o - 1, len[1]);
        if (lo1 > hi1) {
          ok = false;
        } else {
          const std::size_t o1 = lo1 + rng.index(hi1 - lo1 + 1), o2 = o - o1;
          pl[1] = {1, a + o1 - len[1], len[1]};
          pl[2] = {2, tend - o2, len[2]};
          next = 3;
        }
      } else {
        std::vector<std::size_t> starts;
        for (std::size_t s = a - len[1]; s <= tend; ++s)
          if (overlap_frames(s, s + len[1], a, tend) == o) starts.push_back(s);
        if (starts.empty()) {
          ok = false;
        } else {
          pl[1] = {1, starts[rng.index(starts.size())], len[1]};
          next = 2;
        }
      }
    }
    if (!ok) continue;
    for (std::size_t i = next; i < n; ++i) {
      const std::size_t gap = rng.index(opt.gap_max_frames + 1);
      const std::size_t onset =
          rng.bernoulli(0.5) ? a - gap - len[i] : tend + gap;
      pl[i] = {i, onset, len[i]};
    }
    if (!onsets_separated(pl, opt.shift_min_frames)) continue;
    std::size_t covered = 0;
    for (std::size_t t = a; t < tend; ++t)
      for (std::size_t i = 1; i < n; ++i)
        if (t >= pl[i].onset && t < pl[i].onset + pl[i].length) {
          ++covered;
          break;
        }
    if (covered != o) continue;

    std::size_t first = pl[0].onset, last = 0;
    for (const Placement &p : pl) {
      first = std::min(first, p.onset);
      last = std::max(last, p.onset + p.length);
    }
    for (Placement &p : pl) p.onset -= first;
    return synth.render(speakers, pl, last - first, 0, rng);
  }
  throw Error("synth_mixture: could not realize bucket " + bucket_name(bucket) +
              " with " + std::to_string(n) + " speakers in " +
              std::to_string(opt.max_attempts) + " attempts");
}

Mixture synth_training_mixture(const Synthesizer &synth,
                               const std::vector<const SyntheticSpeaker *> &speakers,
                               std::size_t total, const MixtureOptions &opt,
                               Rng &rng) {
  const std::size_t n = speakers.size();
  if (n < 1 || n > 4)
    throw Error("synth_training_mixture: expected 1 to 4 speakers");
  const std::size_t hi = std::min(opt.clip_max_frames, total);
  if (opt.clip_min_frames < 1 || opt.clip_min_frames > hi)
    throw ConfigError("synth_training_mixture: clips do not fit in " +
                      std::to_string(total) + " frames");
  for (std::size_t attempt = 0; attempt < opt.max_attempts; ++attempt) {
    // Onsets are drawn in a random speaker order, each at least
    // shift_min_frames after the previous one.
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);
    std::vector<Placement> pl(n);
    std::size_t earliest = 0;
    bool ok = true;
    for (std::size_t k = 0; k < n && ok; ++k) {
      const std::size_t l = uniform_size(rng, opt.clip_min_frames, hi);
      if (earliest > total - l) {
        ok = false;
        break;
      }
      // Leave room for the clips still to come.
      const std::size_t room = (n - 1 - k) * opt.shift_min_frames;
      const std::size_t latest =
          std::max(earliest, total - l > room ? total - l - room : 0);
      const std::size_t onset = uniform_size(rng, earliest, latest);
      pl[order[k]] = {order[k], onset, l};
      earliest = onset + opt.shift_min_frames;
    }
    if (ok && onsets_separated(pl, opt.shift_min_frames))
      return synth.render(speakers, pl, total, 0, rng);
  }
  throw Error("synth_training_mixture: onset separation infeasible");
}

// Non-target duration scaling -------------------------------------------------

std::vector<std::pair<std::size_t, std::size_t>> nontarget_only_runs(
    const ActivityMask &mask) {
  FrameMask only(mask.frames());
  for (std::size_t t = 0; t < only.size(); ++t)
    only[t] = !mask.target[t] && mask.nontarget[t];
  return runs_of(only);
}

namespace {

std::vector<std::size_t> scaling_map(const ActivityMask &mask, double m) {
  if (!(m >= 0.0) || !std::isfinite(m))
    throw Error("scale_nontarget_duration: m must be a finite value >= 0");
  const auto runs = nontarget_only_runs(mask);
  if (runs.empty() && m != 1.0)
    throw Error("scale_nontarget_duration: no non-target-only frames to scale");
  std::vector<std::size_t> src;
  std::size_t r = 0;
  for (std::size_t t = 0; t < mask.frames();) {
    if (r < runs.size() && t == runs[r].first) {
      const std::size_t len = runs[r].second - runs[r].first;
      const auto out = static_cast<std::size_t>(
          std::ceil(m * static_cast<double>(len) - 1e-9));
      for (std::size_t i = 0; i < out; ++i) src.push_back(t + i % len);
      t = runs[r].second;
      ++r;
    } else {
      src.push_back(t++);
    }
  }
  return src;
}

FrameMask gather(const FrameMask &m, const std::vector<std::size_t> &src) {
  FrameMask out(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = m[src[i]];
  return out;
}

}  // namespace

ActivityMask scale_nontarget_mask(const ActivityMask &mask, double m) {
  const auto src = scaling_map(mask, m);
  return {gather(mask.target, src), gather(mask.nontarget, src)};
}

Mixture scale_nontarget_duration(const Mixture &mix, double m) {
  const ActivityMask mask = mix.mask();
  const auto src = scaling_map(mask, m);
  const std::size_t F = mix.features.num_bins(), T = mix.frames();
  const std::size_t T2 = src.size();
  const std::span<const double> x = mix.features.frames.values();
  std::vector<double> y(F * T2);
  for (std::size_t f = 0; f < F; ++f)
    for (std::size_t i = 0; i < T2; ++i) y[f * T2 + i] = x[f * T + src[i]];

  const double shift = mix.features.frame_shift_s;
  std::vector<std::string> ids;
  std::vector<FrameMask> masks;
  for (const SpeakerTurns &s : mix.annotation.speakers) {
    ids.push_back(s.id);
    masks.push_back(gather(rasterize_speaker(s, T, shift), src));
  }
  Mixture out;
  out.id = mix.id;
  out.features = mix.features;
  out.features.frames = Tensor({F, T2}, std::move(y));
  out.annotation = annotation_from_masks(mix.annotation.recording, ids, masks, T2, shift);
  out.target_id = mix.target_id;
  out.overlap_ratio = overlap_ratio(out.annotation, out.target_id);
  return out;
}

// Conversations ---------------------------------------------------------------

Mixture synth_conversation(const Synthesizer &synth,
                           const std::vector<const SyntheticSpeaker *> &speakers,
                           const ConversationOptions &opt, Rng &rng) {
  if (speakers.size() < 2)
    throw Error("synth_conversation: needs at least two speakers");
  if (opt.turn_min_frames < 1 || opt.turn_max_frames < opt.turn_min_frames)
    throw ConfigError("synth_conversation: bad turn length range");
  std::vector<Placement> pl;
  std::size_t t = 0, prev = speakers.size();
  std::vector<bool> spoke(speakers.size(), false);
  while (t < opt.total_frames) {
    // Unheard speakers go first so everyone talks.
    std::size_t s = prev;
    for (std::size_t i = 0; i < speakers.size(); ++i)
      if (!spoke[i] && i != prev) {
        s = i;
        break;
      }
    while (s == prev) s = rng.index(speakers.size());
    std::size_t start = t;
    if (!pl.empty() && rng.bernoulli(opt.overlap_probability)) {
      const std::size_t back =
          1 + rng.index(std::min(opt.overlap_max_frames, pl.back().length - 1));
      start = t - std::min(back, t);
    } else if (!pl.empty()) {
      start = t + rng.index(30);
    }
    if (start >= opt.total_frames) break;
    std::size_t len = uniform_size(rng, opt.turn_min_frames, opt.turn_max_frames);
    len = std::min(len, opt.total_frames - start);
    pl.push_back({s, start, len});
    spoke[s] = true;
    prev = s;
    t = start + len;
  }
  Mixture mix = synth.render(speakers, pl, opt.total_frames, 0, rng);
  mix.target_id.clear();
  mix.overlap_ratio = 0.0;
  return mix;
}

// Trials ----------------------------------------------------------------------

namespace {

std::string protocol_name(Protocol p) {
  return p == Protocol::kOneVsOne ? "one-vs-one" : "one-vs-many";
}

}  // namespace

Json to_json(const TrialConfig &c) {
  Json w = Json::array();
  for (double x : c.bucket_weights) w.push_back(x);
  return Json{{"n_trials", c.n_trials},
              {"protocol", protocol_name(c.protocol)},
              {"interferers", c.interferers},
              {"bucket_weights", w},
              {"enroll_frames", c.enroll_frames},
              {"clip_min_frames", c.mixture.clip_min_frames},
              {"clip_max_frames", c.mixture.clip_max_frames},
              {"shift_min_frames", c.mixture.shift_min_frames},
              {"gap_max_frames", c.mixture.gap_max_frames}};
}

TrialConfig trial_config_from_json(const Json &j, TrialConfig c) {
  StrictReader r(j, "trials");
  r.get("n_trials", c.n_trials);
  std::string protocol = protocol_name(c.protocol);
  r.get("protocol", protocol);
  if (protocol == "one-vs-one")
    c.protocol = Protocol::kOneVsOne;
  else if (protocol == "one-vs-many")
    c.protocol = Protocol::kOneVsMany;
  else
    throw ConfigError("trials.protocol: unknown '" + protocol + "'");
  r.get("interferers", c.interferers);
  r.get("bucket_weights", c.bucket_weights);
  r.get("enroll_frames", c.enroll_frames);
  r.get("clip_min_frames", c.mixture.clip_min_frames);
  r.get("clip_max_frames", c.mixture.clip_max_frames);
  r.get("shift_min_frames", c.mixture.shift_min_frames);
  r.get("gap_max_frames", c.mixture.gap_max_frames);
  r.finish();
  return c;
}

std::array<std::size_t, 6> bucket_counts(const std::array<double, 6> &w,
                                         std::size_t n) {
  double total = 0.0;
  for (double x : w) {
    if (!(x >= 0.0)) throw ConfigError("bucket weights must be non-negative");
    total += x;
  }
  if (!(total > 0.0)) throw ConfigError("bucket weights sum to zero");
  std::array<std::size_t, 6> counts{};
  std::array<double, 6> rem{};
  std::size_t assigned = 0;
  for (std::size_t b = 0; b < 6; ++b) {
    const double exact = static_cast<double>(n) * w[b] / total;
    counts[b] = static_cast<std::size_t>(std::floor(exact));
    rem[b] = exact - static_cast<double>(counts[b]);
    assigned += counts[b];
  }
  while (assigned < n) {
    std::size_t best = 0;
    for (std::size_t b = 1; b < 6; ++b)
      if (rem[b] > rem[best]) best = b;
    ++counts[best];
    rem[best] = -1.0;
    ++assigned;
  }
  return counts;
}

TrialSet build_trial_set(const std::vector<SyntheticSpeaker> &bank,
                         const TrialConfig &config, std::uint64_t seed) {
  const bool many = config.protocol == Protocol::kOneVsMany;
  const std::size_t need = many ? config.interferers + 2 : 2;
  if (bank.size() < need)
    throw ConfigError("build_trial_set: needs at least " + std::to_string(need) +
                      " speakers, bank has " + std::to_string(bank.size()));
  if (many && (config.interferers < 1 || config.interferers > 3))
    throw ConfigError("build_trial_set: interferers must be 1 to 3");
  Rng rng(seed);
  std::vector<std::optional<OverlapBucket>> buckets;
  if (many) {
    const auto counts = bucket_counts(config.bucket_weights, config.n_trials);
    for (std::size_t b = 0; b < 6; ++b)
      buckets.insert(buckets.end(), counts[b], kAllBuckets[b]);
  } else {
    buckets.assign(config.n_trials, std::nullopt);
  }
  TrialSet set;
  set.config = config;
  for (std::size_t i = 0; i < buckets.size(); ++i) {
    Trial tr;
    char id[32];
    std::snprintf(id, sizeof id, "trial%05zu", i);
    tr.id = id;
    tr.same = i % 2 == 0;
    tr.bucket = buckets[i];
    tr.enroll_speaker = rng.index(bank.size());
    tr.test_target = tr.enroll_speaker;
    while (!tr.same && tr.test_target == tr.enroll_speaker)
      tr.test_target = rng.index(bank.size());
    if (many) {
      while (tr.interferers.size() < config.interferers) {
        const std::size_t s = rng.index(bank.size());
        if (s == tr.enroll_speaker || s == tr.test_target ||
            std::find(tr.interferers.begin(), tr.interferers.end(), s) !=
                tr.interferers.end())
          continue;
        tr.interferers.push_back(s);
      }
    }
    tr.enroll_seed = rng.next();
    tr.test_seed = rng.next();
    set.trials.push_back(std::move(tr));
  }
  return set;
}

Mixture TrialSet::enrollment(const Synthesizer &synth,
                             const std::vector<SyntheticSpeaker> &bank,
                             const Trial &trial) const {
  Rng rng(trial.enroll_seed);
  Mixture m = synth.single(bank.at(trial.enroll_speaker), config.enroll_frames, rng);
  m.id = trial.id + "-enroll";
  m.annotation.recording = m.id;
  return m;
}

Mixture TrialSet::test(const Synthesizer &synth,
                       const std::vector<SyntheticSpeaker> &bank,
                       const Trial &trial) const {
  Rng rng(trial.test_seed);
  Mixture m;
  if (!trial.bucket) {
    const std::size_t len = uniform_size(rng, config.mixture.clip_min_frames,
                                         config.mixture.clip_max_frames);
    m = synth.single(bank.at(trial.test_target), len, rng);
  } else {
    std::vector<const SyntheticSpeaker *> spk{&bank.at(trial.test_target)};
    for (std::size_t s : trial.interferers) spk.push_back(&bank.at(s));
    m = synth_mixture(synth, spk, *trial.bucket, config.mixture, rng);
  }
  m.id = trial.id + "-test";
  m.annotation.recording = m.id;
  return m;
}

}  // namespace maskemb
