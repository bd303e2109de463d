// src/features.cpp

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

#include "maskemb/features.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <istream>
#include <mutex>
#include <numbers>
#include <ostream>
#include <sstream>

namespace maskemb {

namespace {

template <class T>
T read_le(std::istream &in, const std::string &path) {
  T v{};
  if (!in.read(reinterpret_cast<char *>(&v), sizeof(T)))
    throw FormatError(path + ": truncated WAV header");
  return v;
}

template <class T>
void write_le(std::ostream &out, T v) {
  out.write(reinterpret_cast<const char *>(&v), sizeof(T));
}

}  // namespace

std::vector<double> load_wav(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open");
  char tag[4];
  auto read_tag = [&] {
    if (!in.read(tag, 4)) throw FormatError(path + ": truncated WAV header");
    return std::string(tag, 4);
  };
  if (read_tag() != "RIFF") throw FormatError(path + ": not a RIFF file");
  read_le<std::uint32_t>(in, path);
  if (read_tag() != "WAVE") throw FormatError(path + ": not a WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  while (true) {
    const std::string id = read_tag();
    const std::uint32_t size = read_le<std::uint32_t>(in, path);
    if (id == "fmt ") {
      if (size < 16) throw FormatError(path + ": fmt chunk too small");
      format = read_le<std::uint16_t>(in, path);
      channels = read_le<std::uint16_t>(in, path);
      rate = read_le<std::uint32_t>(in, path);
      read_le<std::uint32_t>(in, path);
      read_le<std::uint16_t>(in, path);
      bits = read_le<std::uint16_t>(in, path);
      in.seekg(size - 16 + (size & 1), std::ios::cur);
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw FormatError(path + ": data chunk before fmt chunk");
      if (channels != 1)
        throw FormatError(path + ": expected mono, got " +
                          std::to_string(channels) + " channels");
      if (rate != static_cast<std::uint32_t>(kSampleRate))
        throw FormatError(path + ": sample rate " + std::to_string(rate) +
                          " Hz, expected 16000 (resampling unsupported)");
      std::vector<char> raw(size);
      if (!in.read(raw.data(), size)) throw FormatError(path + ": truncated data");
      std::vector<double> out;
      if (format == 1 && bits == 16) {
        out.resize(size / 2);
        for (std::size_t i = 0; i < out.size(); ++i) {
          std::int16_t s;
          std::memcpy(&s, raw.data() + 2 * i, 2);
          out[i] = s / 32768.0;
        }
      } else if (format == 3 && bits == 32) {
        out.resize(size / 4);
        for (std::size_t i = 0; i < out.size(); ++i) {
          float s;
          std::memcpy(&s, raw.data() + 4 * i, 4);
          out[i] = s;
        }
      } else {
        throw FormatError(path + ": unsupported encoding (format " +
                          std::to_string(format) + ", " + std::to_string(bits) +
                          " bits)");
      }
      return out;
    } else {
      in.seekg(size + (size & 1), std::ios::cur);
    }
  }
}

void write_wav(const std::string &path, std::span<const double> samples,
               PcmFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(path + ": cannot open for writing");
  const std::uint16_t bits = format == PcmFormat::kInt16 ? 16 : 32;
  const std::uint32_t data_size =
      static_cast<std::uint32_t>(samples.size() * (bits / 8));
  out.write("RIFF", 4);
  write_le<std::uint32_t>(out, 36 + data_size);
  out.write("WAVEfmt ", 8);
  write_le<std::uint32_t>(out, 16);
  write_le<std::uint16_t>(out, format == PcmFormat::kInt16 ? 1 : 3);
  write_le<std::uint16_t>(out, 1);
  write_le<std::uint32_t>(out, kSampleRate);
  write_le<std::uint32_t>(out, kSampleRate * (bits / 8));
  write_le<std::uint16_t>(out, bits / 8);
  write_le<std::uint16_t>(out, bits);
  out.write("data", 4);
  write_le<std::uint32_t>(out, data_size);
  for (double x : samples) {
    if (format == PcmFormat::kInt16) {
      const double q = std::clamp(std::round(x * 32768.0), -32768.0, 32767.0);
      write_le<std::int16_t>(out, static_cast<std::int16_t>(q));
    } else {
      write_le<float>(out, static_cast<float>(x));
    }
  }
  if (!out) throw FormatError(path + ": write failed");
}

// ---------------------------------------------------------------------------

namespace {

double hz_to_mel(double hz) { return 1127.0 * std::log1p(hz / 700.0); }

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// FFTW's planner is not re-entrant.
std::mutex g_fftw_mutex;

}  // namespace

std::size_t frame_count(std::size_t num_samples, std::size_t window,
                        std::size_t shift) {
  if (num_samples < window) return 0;
  return (num_samples - window) / shift + 1;
}

std::vector<double> mel_center_frequencies(const LogMelConfig &config) {
  const double lo = hz_to_mel(config.low_hz), hi = hz_to_mel(config.high_hz);
  const double step = (hi - lo) / (config.n_mels + 1);
  std::vector<double> centers(config.n_mels);
  for (int j = 0; j < config.n_mels; ++j)
    centers[j] = 700.0 * std::expm1((lo + (j + 1) * step) / 1127.0);
  return centers;
}

FeatureSequence logmel_features(std::span<const double> waveform,
                                const LogMelConfig &config) {
  if (config.n_mels < 1) throw ConfigError("logmel_features: n_mels must be >= 1");
  if (!(config.low_hz >= 0.0 && config.high_hz > config.low_hz &&
        config.high_hz <= kSampleRate / 2.0))
    throw ConfigError("logmel_features: need 0 <= low_hz < high_hz <= 8000");
  const auto window = static_cast<std::size_t>(std::lround(config.window_s * kSampleRate));
  const auto shift = static_cast<std::size_t>(std::lround(config.shift_s * kSampleRate));
  if (window == 0 || shift == 0)
    throw ConfigError("logmel_features: window and shift must be positive");
  const std::size_t T = frame_count(waveform.size(), window, shift);
  if (T == 0)
    throw ShapeError("logmel_features", "input of " +
                                            std::to_string(waveform.size()) +
                                            " samples is shorter than one " +
                                            std::to_string(window) +
                                            "-sample window");
  const std::size_t n_fft = next_pow2(window);
  const std::size_t n_bins = n_fft / 2 + 1;
  const std::size_t F = static_cast<std::size_t>(config.n_mels);

  // Triangular filters in the mel domain, peak 1 at each center.
  const double lo = hz_to_mel(config.low_hz), hi = hz_to_mel(config.high_hz);
  const double step = (hi - lo) / (config.n_mels + 1);
  std::vector<double> bank(F * n_bins, 0.0);
  for (std::size_t j = 0; j < F; ++j) {
    const double left = lo + j * step, center = left + step, right = center + step;
    for (std::size_t k = 0; k < n_bins; ++k) {
      const double mel = hz_to_mel(static_cast<double>(k) * kSampleRate / n_fft);
      if (mel > left && mel < right)
        bank[j * n_bins + k] =
            mel <= center ? (mel - left) / step : (right - mel) / step;
    }
  }

  std::vector<double> hamming(window);
  for (std::size_t n = 0; n < window; ++n)
    hamming[n] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * n / (window - 1));

  double *in = fftw_alloc_real(n_fft);
  fftw_complex *spec = fftw_alloc_complex(n_bins);
  fftw_plan plan;
  {
    std::lock_guard<std::mutex> lock(g_fftw_mutex);
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(n_fft), in, spec, FFTW_ESTIMATE);
  }

  Tensor out({F, T});
  auto values = out.mutable_values();
  std::vector<double> power(n_bins);
  for (std::size_t t = 0; t < T; ++t) {
    const double *frame = waveform.data() + t * shift;
    for (std::size_t n = 0; n < window; ++n) in[n] = frame[n] * hamming[n];
    std::fill(in + window, in + n_fft, 0.0);
    fftw_execute(plan);
    for (std::size_t k = 0; k < n_bins; ++k)
      power[k] = spec[k][0] * spec[k][0] + spec[k][1] * spec[k][1];
    for (std::size_t j = 0; j < F; ++j) {
      double e = 0.0;
      for (std::size_t k = 0; k < n_bins; ++k) e += bank[j * n_bins + k] * power[k];
      values[j * T + t] = std::log(e + config.floor);
    }
  }
  {
    std::lock_guard<std::mutex> lock(g_fftw_mutex);
    fftw_destroy_plan(plan);
  }
  fftw_free(in);
  fftw_free(spec);

  if (config.mean_normalize) {
    for (std::size_t j = 0; j < F; ++j) {
      double mean = 0.0;
      for (std::size_t t = 0; t < T; ++t) mean += values[j * T + t];
      mean /= static_cast<double>(T);
      for (std::size_t t = 0; t < T; ++t) values[j * T + t] -= mean;
    }
  }
  return FeatureSequence{std::move(out), config.shift_s, config.window_s};
}

// ---------------------------------------------------------------------------

void ActivityAnnotation::validate() const {
  for (const SpeakerTurns &s : speakers)
    for (const Interval &iv : s.intervals) {
      if (!(iv.offset > iv.onset))
        throw FormatError("annotation '" + recording + "': speaker " + s.id +
                          " has an interval with offset <= onset");
      if (iv.onset < 0.0 || iv.offset > duration_s + 1e-9)
        throw FormatError("annotation '" + recording + "': speaker " + s.id +
                          " has an interval outside the recording");
    }
}

const SpeakerTurns *ActivityAnnotation::find(const std::string &id) const {
  for (const SpeakerTurns &s : speakers)
    if (s.id == id) return &s;
  return nullptr;
}

SpeakerTurns &ActivityAnnotation::add_speaker(const std::string &id) {
  for (SpeakerTurns &s : speakers)
    if (s.id == id) return s;
  speakers.push_back({id, {}});
  return speakers.back();
}

std::size_t ActivityMask::target_count() const {
  return static_cast<std::size_t>(std::count(target.begin(), target.end(), 1));
}

FrameMask rasterize_speaker(const SpeakerTurns &turns, std::size_t frames,
                            double frame_shift_s) {
  FrameMask m(frames, 0);
  for (std::size_t t = 0; t < frames; ++t) {
    const double c = (static_cast<double>(t) + 0.5) * frame_shift_s;
    for (const Interval &iv : turns.intervals)
      if (iv.onset <= c && c < iv.offset) {
        m[t] = 1;
        break;
      }
  }
  return m;
}

ActivityMask rasterize_activities(const ActivityAnnotation &annotation,
                                  const std::string &target_id,
                                  std::size_t frames, double frame_shift_s) {
  if (annotation.find(target_id) == nullptr)
    throw Error("rasterize_activities: unknown speaker id '" + target_id + "'");
  ActivityMask mask{FrameMask(frames, 0), FrameMask(frames, 0)};
  for (const SpeakerTurns &s : annotation.speakers) {
    FrameMask m = rasterize_speaker(s, frames, frame_shift_s);
    FrameMask &dst = s.id == target_id ? mask.target : mask.nontarget;
    for (std::size_t t = 0; t < frames; ++t) dst[t] |= m[t];
  }
  return mask;
}

FrameMask downsample_mask(const FrameMask &mask, long stride) {
  if (stride <= 0)
    throw Error("downsample_mask: stride must be >= 1, got " + std::to_string(stride));
  const std::size_t s = static_cast<std::size_t>(stride);
  FrameMask out((mask.size() + s - 1) / s, 0);
  for (std::size_t t = 0; t < mask.size(); ++t)
    if (mask[t]) out[t / s] = 1;
  return out;
}

std::map<std::string, ActivityAnnotation> parse_rttm(std::istream &in) {
  std::map<std::string, ActivityAnnotation> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::vector<std::string> f;
    for (std::string tok; ls >> tok;) f.push_back(tok);
    if (f.empty()) continue;
    if (f.size() != 10 || f[0] != "SPEAKER")
      throw FormatError("RTTM line " + std::to_string(lineno) +
                        ": expected 10 fields starting with SPEAKER");
    double onset = 0.0, dur = 0.0;
    try {
      onset = std::stod(f[3]);
      dur = std::stod(f[4]);
    } catch (const std::exception &) {
      throw FormatError("RTTM line " + std::to_string(lineno) +
                        ": bad onset/duration");
    }
    if (!(dur > 0.0) || onset < 0.0)
      throw FormatError("RTTM line " + std::to_string(lineno) +
                        ": need onset >= 0 and duration > 0");
    ActivityAnnotation &ann = out[f[1]];
    ann.recording = f[1];
    ann.add_speaker(f[7]).intervals.push_back({onset, onset + dur});
    ann.duration_s = std::max(ann.duration_s, onset + dur);
  }
  return out;
}

void write_rttm(std::ostream &out, const ActivityAnnotation &annotation) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3);
  for (const SpeakerTurns &s : annotation.speakers)
    for (const Interval &iv : s.intervals)
      os << "SPEAKER " << annotation.recording << " 1 " << iv.onset << ' '
         << (iv.offset - iv.onset) << " <NA> <NA> " << s.id << " <NA> <NA>\n";
  out << os.str();
}

namespace {
constexpr char kFeatureMagic[8] = {'M', 'S', 'K', 'F', 'E', 'A', 'T', '1'};
}

void write_features(const std::string &path, const FeatureSequence &features) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(path + ": cannot open for writing");
  const std::uint64_t dims[2] = {features.num_bins(), features.num_frames()};
  const double timing[2] = {features.frame_shift_s, features.frame_length_s};
  out.write(kFeatureMagic, sizeof kFeatureMagic);
  out.write(reinterpret_cast<const char *>(dims), sizeof dims);
  out.write(reinterpret_cast<const char *>(timing), sizeof timing);
  const auto v = features.frames.values();
  out.write(reinterpret_cast<const char *>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
  if (!out) throw FormatError(path + ": write failed");
}

FeatureSequence read_features(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open");
  char magic[8];
  std::uint64_t dims[2];
  double timing[2];
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char *>(dims), sizeof dims);
  in.read(reinterpret_cast<char *>(timing), sizeof timing);
  if (!in || std::memcmp(magic, kFeatureMagic, sizeof magic) != 0)
    throw FormatError(path + ": not a feature file");
  if (dims[0] == 0 || dims[1] == 0 || dims[0] > (1u << 16) || dims[1] > (1u << 28))
    throw FormatError(path + ": implausible dimensions");
  std::vector<double> v(dims[0] * dims[1]);
  in.read(reinterpret_cast<char *>(v.data()),
          static_cast<std::streamsize>(v.size() * sizeof(double)));
  if (!in) throw FormatError(path + ": truncated");
  FeatureSequence f;
  f.frames = Tensor({dims[0], dims[1]}, std::move(v));
  f.frame_shift_s = timing[0];
  f.frame_length_s = timing[1];
  return f;
}

}  // namespace maskemb
