// maskemb/features.hpp

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

// Audio and annotation front-end: WAV I/O, log-mel filterbanks, frame-level
// activity masks and RTTM.

#ifndef MASKEMB_FEATURES_HPP_
#define MASKEMB_FEATURES_HPP_

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "maskemb/ops.hpp"
#include "maskemb/tensor.hpp"

namespace maskemb {

constexpr int kSampleRate = 16000;

enum class PcmFormat { kInt16, kFloat32 };

/// Reads a mono 16 kHz WAV (16-bit PCM or 32-bit float) into [-1, 1].
std::vector<double> load_wav(const std::string &path);
void write_wav(const std::string &path, std::span<const double> samples,
               PcmFormat format = PcmFormat::kInt16);

struct LogMelConfig {
  int n_mels = 80;
  double window_s = 0.025;
  double shift_s = 0.010;
  double low_hz = 20.0;
  double high_hz = 8000.0;
  double floor = 1e-10;
  bool mean_normalize = true;
};

struct FeatureSequence {
  Tensor frames;  // [F, T]
  double frame_shift_s = 0.010;
  double frame_length_s = 0.025;

  std::size_t num_bins() const { return frames.dim(0); }
  std::size_t num_frames() const { return frames.dim(1); }
};

/// floor((num_samples - window) / shift) + 1, or 0 when shorter than a window.
/// Binary feature file: magic "MSKFEAT1", u64 bins, u64 frames, f64 frame
/// shift, f64 frame length, then bins x frames little-endian doubles.
void write_features(const std::string &path, const FeatureSequence &features);
FeatureSequence read_features(const std::string &path);

std::size_t frame_count(std::size_t num_samples, std::size_t window,
                        std::size_t shift);

/// Center frequency in Hz of every mel filter.
std::vector<double> mel_center_frequencies(const LogMelConfig &config);

FeatureSequence logmel_features(std::span<const double> waveform,
                                const LogMelConfig &config = {});

// Activity annotations -------------------------------------------------------

struct Interval {
  double onset = 0.0;
  double offset = 0.0;
};

struct SpeakerTurns {
  std::string id;
  std::vector<Interval> intervals;
};

struct ActivityAnnotation {
  std::string recording = "rec";
  double duration_s = 0.0;
  std::vector<SpeakerTurns> speakers;

  /// Throws FormatError when an interval is empty, reversed or outside
  /// [0, duration_s].
  void validate() const;
  const SpeakerTurns *find(const std::string &id) const;
  SpeakerTurns &add_speaker(const std::string &id);
};

struct ActivityMask {
  FrameMask target;
  FrameMask nontarget;

  std::size_t frames() const { return target.size(); }
  std::size_t target_count() const;
  bool empty_target() const { return target_count() == 0; }
};

/// Frame t is active when its center (t + 0.5) * shift lies in some
/// interval [onset, offset).
FrameMask rasterize_speaker(const SpeakerTurns &turns, std::size_t frames,
                            double frame_shift_s);

/// Target bits from `target_id`, non-target bits from the OR of everyone
/// else. Throws Error for an unknown id.
ActivityMask rasterize_activities(const ActivityAnnotation &annotation,
                                  const std::string &target_id,
                                  std::size_t frames, double frame_shift_s);

/// OR-pools consecutive windows of `stride` bits.
FrameMask downsample_mask(const FrameMask &mask, long stride);

/// Parses `SPEAKER <rec> 1 <onset> <dur> <NA> <NA> <spk> <NA> <NA>` lines,
/// grouped by recording. Durations are set to the last offset seen.
std::map<std::string, ActivityAnnotation> parse_rttm(std::istream &in);
void write_rttm(std::ostream &out, const ActivityAnnotation &annotation);

}  // namespace maskemb

#endif  // MASKEMB_FEATURES_HPP_
