// maskemb/synth.hpp

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

// Synthetic speakers, utterances and overlapped mixtures in the log-mel
// feature domain, the non-target-duration scaling probe, and trial sets.
//
// All times are whole frames (10 ms), so annotations rasterize exactly.

#ifndef MASKEMB_SYNTH_HPP_
#define MASKEMB_SYNTH_HPP_

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "maskemb/features.hpp"
#include "maskemb/json_util.hpp"
#include "maskemb/random.hpp"

namespace maskemb {

struct SynthConfig {
  std::size_t n_mels = 80;
  double frame_shift_s = 0.010;
  std::size_t basis = 10;            // cosine terms per spectral shape
  double envelope_scale = 1.0;       // speaker envelope coefficient std
  double min_envelope_distance = 3.0;
  double session_scale = 0.25;       // per-utterance channel variation
  std::size_t phones = 32;
  double phone_scale = 2.5;         // formant peak height
  double pause_probability = 0.12;
  double warp_range = 0.12;          // speaker formant scaling, +/-
  std::uint64_t phone_seed = 1234;
  std::size_t phone_min_frames = 4;
  std::size_t phone_max_frames = 14;
  double ripple_depth = 0.8;         // harmonic ripple, log units
  double modulation_depth = 0.6;     // syllabic energy modulation, log units
  double frame_noise = 0.25;         // iid log-domain jitter
  double noise_floor = -4.0;         // log energy of the background floor
  double noise_snr_db = 30.0;        // pink noise relative to speech power
  double gain_db = 3.0;              // per-clip level spread (+/-)
  bool mean_normalize = false;       // per-bin mean over the whole recording

  void validate() const;
};

Json to_json(const SynthConfig &c);
SynthConfig synth_config_from_json(const Json &j, SynthConfig base = {});

struct SyntheticSpeaker {
  std::string id;
  std::vector<double> envelope;  // per mel bin
  double f0_hz = 120.0;
  double ripple_depth = 0.5;
  double modulation_hz = 4.0;
  double warp = 1.0;         // formant frequency scaling
  double phone_rate = 1.0;   // phone duration scaling
  std::uint64_t seed = 0;
};

/// Deterministic bank; pairwise envelope L2 distance is at least
/// `config.min_envelope_distance`. Throws Error when bounded retries fail.
std::vector<SyntheticSpeaker> synth_speaker_bank(std::uint64_t seed,
                                                 std::size_t n_speakers,
                                                 const SynthConfig &config = {});

double envelope_distance(const SyntheticSpeaker &a, const SyntheticSpeaker &b);

enum class OverlapBucket { k0, k0to25, k25to50, k50to75, k75to100, k100 };
constexpr std::array<OverlapBucket, 6> kAllBuckets{
    OverlapBucket::k0,      OverlapBucket::k0to25,   OverlapBucket::k25to50,
    OverlapBucket::k50to75, OverlapBucket::k75to100, OverlapBucket::k100};

std::string bucket_name(OverlapBucket b);
OverlapBucket parse_bucket(const std::string &name);
bool bucket_contains(OverlapBucket b, double ratio);
OverlapBucket bucket_of(double ratio);

struct Placement {
  std::size_t speaker = 0;  // index into the speaker list
  std::size_t onset = 0;    // frames
  std::size_t length = 0;   // frames
};

struct Mixture {
  std::string id = "mix";
  FeatureSequence features;
  ActivityAnnotation annotation;
  std::string target_id;
  double overlap_ratio = 0.0;

  std::size_t frames() const { return features.num_frames(); }
  ActivityMask mask() const;
  ActivityMask mask_for(const std::string &speaker) const;
};

/// Fraction of the target's active time during which some other speaker is
/// active, from the annotation.
double overlap_ratio(const ActivityAnnotation &annotation,
                     const std::string &target_id);

struct MixtureOptions {
  std::size_t clip_min_frames = 150;
  std::size_t clip_max_frames = 300;
  std::size_t shift_min_frames = 50;  // onset separation between clips
  std::size_t gap_max_frames = 50;    // spacing of clips outside the target
  std::size_t max_attempts = 200;
};

class Synthesizer {
 public:
  explicit Synthesizer(SynthConfig config = {});
  const SynthConfig &config() const { return config_; }

  /// Linear-energy spectrogram [F, frames] of one utterance.
  std::vector<double> utterance_energy(const SyntheticSpeaker &speaker,
                                       std::size_t frames, Rng &rng) const;

  /// Mixes placed utterances over `total` frames: energies add, plus the
  /// noise floor, then log and (optionally) per-bin mean normalization.
  Mixture render(const std::vector<const SyntheticSpeaker *> &speakers,
                 const std::vector<Placement> &placements, std::size_t total,
                 std::size_t target, Rng &rng) const;

  /// Clean single-speaker sequence (target mask all ones).
  Mixture single(const SyntheticSpeaker &speaker, std::size_t frames,
                 Rng &rng) const;

  /// Time-domain rendering of one speaker (harmonics of f0 shaped by the
  /// envelope), for exercising the waveform front-end.
  std::vector<double> waveform(const SyntheticSpeaker &speaker,
                               std::size_t samples, Rng &rng) const;

 private:
  SynthConfig config_;
  std::vector<std::vector<double>> phones_;
  std::vector<double> mel_hz_;
};

/// Mixture of 1-4 speakers (speakers[0] is the target) whose overlap ratio
/// falls in `bucket`. Clip onsets differ by at least shift_min_frames.
/// Throws Error when the bucket is infeasible after bounded retries.
Mixture synth_mixture(const Synthesizer &synth,
                      const std::vector<const SyntheticSpeaker *> &speakers,
                      OverlapBucket bucket, const MixtureOptions &options,
                      Rng &rng);

/// Fixed-length training mixture: every speaker gets one clip inside
/// [0, total), onsets at least shift_min_frames apart.
Mixture synth_training_mixture(const Synthesizer &synth,
                               const std::vector<const SyntheticSpeaker *> &speakers,
                               std::size_t total, const MixtureOptions &options,
                               Rng &rng);

/// Maximal runs [begin, end) of frames with q_target = 0 and q_nontarget = 1.
std::vector<std::pair<std::size_t, std::size_t>> nontarget_only_runs(
    const ActivityMask &mask);

/// Deletes (m = 0), keeps (m = 1) or tiles to ceil(m * len) frames every
/// maximal non-target-only run; target frames are untouched and the
/// annotation is retimed. Throws Error for m < 0 or when there is no such
/// run and m != 1.
Mixture scale_nontarget_duration(const Mixture &mix, double m);

/// Applies the same frame edit to a mask directly.
ActivityMask scale_nontarget_mask(const ActivityMask &mask, double m);

/// Multi-speaker conversation for diarization: alternating turns with
/// occasional overlaps; no designated target.
struct ConversationOptions {
  std::size_t total_frames = 3000;
  std::size_t turn_min_frames = 150;
  std::size_t turn_max_frames = 400;
  double overlap_probability = 0.3;
  std::size_t overlap_max_frames = 80;
};

Mixture synth_conversation(const Synthesizer &synth,
                           const std::vector<const SyntheticSpeaker *> &speakers,
                           const ConversationOptions &options, Rng &rng);

// Trials ----------------------------------------------------------------------

enum class Protocol { kOneVsOne, kOneVsMany };

struct TrialConfig {
  std::size_t n_trials = 300;
  Protocol protocol = Protocol::kOneVsMany;
  std::size_t interferers = 3;
  std::array<double, 6> bucket_weights{1, 1, 1, 1, 1, 1};
  std::size_t enroll_frames = 300;
  MixtureOptions mixture;
};

Json to_json(const TrialConfig &c);
TrialConfig trial_config_from_json(const Json &j, TrialConfig base = {});

struct Trial {
  std::string id;
  bool same = false;
  std::size_t enroll_speaker = 0;  // index into the bank
  std::size_t test_target = 0;
  std::vector<std::size_t> interferers;
  std::optional<OverlapBucket> bucket;  // empty for one-vs-one
  std::uint64_t enroll_seed = 0;
  std::uint64_t test_seed = 0;
};

struct TrialSet {
  TrialConfig config;
  std::vector<Trial> trials;

  /// Clean enrollment utterance of trial i.
  Mixture enrollment(const Synthesizer &synth,
                     const std::vector<SyntheticSpeaker> &bank,
                     const Trial &trial) const;
  /// Test mixture of trial i (target is `test_target`).
  Mixture test(const Synthesizer &synth, const std::vector<SyntheticSpeaker> &bank,
               const Trial &trial) const;
};

/// Balanced trials (exactly floor(n/2) same-speaker) with buckets assigned
/// in proportion to the weights (largest remainder). Needs >= 4 speakers.
TrialSet build_trial_set(const std::vector<SyntheticSpeaker> &bank,
                         const TrialConfig &config, std::uint64_t seed);

/// Per-bucket counts from weights by largest remainder.
std::array<std::size_t, 6> bucket_counts(const std::array<double, 6> &weights,
                                         std::size_t n);

}  // namespace maskemb

#endif  // MASKEMB_SYNTH_HPP_
