// tests/test_synth.cpp

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

#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

#include "maskemb/error.hpp"
#include "maskemb/synth.hpp"

namespace maskemb {
namespace {

std::vector<double> flat(const Tensor &t) { return {t.values().begin(), t.values().end()}; }

class SynthTest : public ::testing::Test {
 protected:
  SynthTest() : bank(synth_speaker_bank(5, 12)) {}
  std::vector<const SyntheticSpeaker *> pick(std::vector<std::size_t> idx) const {
    std::vector<const SyntheticSpeaker *> out;
    for (std::size_t i : idx) out.push_back(&bank[i]);
    return out;
  }
  Synthesizer synth;
  std::vector<SyntheticSpeaker> bank;
};

// Overlap ratio straight from frame masks.
double frame_ratio(const ActivityMask &m) {
  std::size_t both = 0, target = 0;
  for (std::size_t t = 0; t < m.frames(); ++t) {
    target += m.target[t];
    both += m.target[t] && m.nontarget[t];
  }
  return static_cast<double>(both) / static_cast<double>(target);
}

TEST(SpeakerBank, DeterministicAndSeparated) {
  SynthConfig c;
  auto a = synth_speaker_bank(3, 20, c), b = synth_speaker_bank(3, 20, c);
  auto d = synth_speaker_bank(4, 20, c);
  ASSERT_EQ(a.size(), 20u);
  EXPECT_NE(a[0].envelope, d[0].envelope);
  std::set<std::string> ids;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].envelope, b[i].envelope);
    EXPECT_EQ(a[i].seed, b[i].seed);
    ids.insert(a[i].id);
    for (std::size_t j = 0; j < i; ++j)
      EXPECT_GE(envelope_distance(a[i], a[j]), c.min_envelope_distance);
  }
  EXPECT_EQ(ids.size(), 20u);
}

TEST(SpeakerBank, InfeasibleSeparationThrows) {
  SynthConfig c;
  c.min_envelope_distance = 1e6;
  EXPECT_THROW(synth_speaker_bank(1, 2, c), Error);
}

TEST(Buckets, Boundaries) {
  EXPECT_EQ(bucket_of(0.0), OverlapBucket::k0);
  EXPECT_EQ(bucket_of(0.01), OverlapBucket::k0to25);
  EXPECT_EQ(bucket_of(0.25), OverlapBucket::k25to50);
  EXPECT_EQ(bucket_of(0.4999), OverlapBucket::k25to50);
  EXPECT_EQ(bucket_of(0.5), OverlapBucket::k50to75);
  EXPECT_EQ(bucket_of(0.75), OverlapBucket::k75to100);
  EXPECT_EQ(bucket_of(0.99), OverlapBucket::k75to100);
  EXPECT_EQ(bucket_of(1.0), OverlapBucket::k100);
  for (OverlapBucket b : kAllBuckets) EXPECT_EQ(parse_bucket(bucket_name(b)), b);
  EXPECT_THROW(parse_bucket("50"), ConfigError);
}

TEST(Buckets, LargestRemainderCounts) {
  auto c = bucket_counts({1, 1, 1, 1, 1, 1}, 100);
  std::size_t total = 0;
  for (std::size_t b = 0; b < 6; ++b) {
    EXPECT_LE(std::abs(static_cast<double>(c[b]) - 100.0 / 6), 1.0);
    total += c[b];
  }
  EXPECT_EQ(total, 100u);
  c = bucket_counts({0, 1, 0, 0, 0, 3}, 10);
  EXPECT_EQ(c[0], 0u);
  EXPECT_EQ(c[1] + c[5], 10u);
  EXPECT_THROW(bucket_counts({0, 0, 0, 0, 0, 0}, 3), ConfigError);
}

TEST_F(SynthTest, AlignedEqualClipsAreFullyOverlapped) {
  Rng rng(1);
  Mixture m = synth.render(pick({0, 1}), {{0, 0, 120}, {1, 0, 120}}, 120, 0, rng);
  EXPECT_DOUBLE_EQ(m.overlap_ratio, 1.0);
  EXPECT_EQ(bucket_of(m.overlap_ratio), OverlapBucket::k100);

  MixtureOptions opt;
  opt.clip_min_frames = opt.clip_max_frames = 120;
  opt.shift_min_frames = 0;
  Mixture n = synth_mixture(synth, pick({0, 1}), OverlapBucket::k100, opt, rng);
  EXPECT_DOUBLE_EQ(n.overlap_ratio, 1.0);
  EXPECT_EQ(n.frames(), 120u);
}

TEST_F(SynthTest, EveryBucketAndSpeakerCount) {
  MixtureOptions opt;
  Rng rng(7);
  for (std::size_t n = 2; n <= 4; ++n) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < n; ++i) idx.push_back(i + n);
    for (OverlapBucket b : kAllBuckets) {
      for (int rep = 0; rep < 3; ++rep) {
        Mixture m = synth_mixture(synth, pick(idx), b, opt, rng);
        SCOPED_TRACE(bucket_name(b) + " n=" + std::to_string(n));
        EXPECT_TRUE(bucket_contains(b, m.overlap_ratio)) << m.overlap_ratio;
        EXPECT_NEAR(overlap_ratio(m.annotation, m.target_id), m.overlap_ratio, 1e-9);
        EXPECT_NEAR(frame_ratio(m.mask()), m.overlap_ratio, 1e-12);
        EXPECT_NO_THROW(m.annotation.validate());
        ASSERT_EQ(m.annotation.speakers.size(), n);
        std::vector<double> onsets;
        for (const SpeakerTurns &s : m.annotation.speakers) {
          ASSERT_EQ(s.intervals.size(), 1u);
          onsets.push_back(s.intervals[0].onset);
          const double len = s.intervals[0].offset - s.intervals[0].onset;
          EXPECT_GE(len, opt.clip_min_frames * 0.01 - 1e-9);
          EXPECT_LE(len, opt.clip_max_frames * 0.01 + 1e-9);
        }
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < i; ++j)
            EXPECT_GE(std::abs(onsets[i] - onsets[j]), opt.shift_min_frames * 0.01 - 1e-9);
      }
    }
  }
}

TEST_F(SynthTest, SingleSpeakerOnlyZeroBucket) {
  Rng rng(2);
  Mixture m = synth_mixture(synth, pick({0}), OverlapBucket::k0, {}, rng);
  EXPECT_EQ(m.overlap_ratio, 0.0);
  EXPECT_EQ(m.mask().target_count(), m.frames());
  EXPECT_THROW(synth_mixture(synth, pick({0}), OverlapBucket::k50to75, {}, rng), Error);
  EXPECT_THROW(synth_mixture(synth, pick({0, 1, 2, 3, 4}), OverlapBucket::k0, {}, rng),
               Error);
}

TEST_F(SynthTest, FeaturesAreDeterministic) {
  Rng a(11), b(11);
  Mixture x = synth_mixture(synth, pick({1, 2, 3}), OverlapBucket::k25to50, {}, a);
  Mixture y = synth_mixture(synth, pick({1, 2, 3}), OverlapBucket::k25to50, {}, b);
  EXPECT_EQ(flat(x.features.frames), flat(y.features.frames));
  EXPECT_EQ(x.features.num_bins(), 80u);
  for (double v : x.features.frames.values()) ASSERT_TRUE(std::isfinite(v));
}

TEST_F(SynthTest, MeanNormalizationZeroesBinMeans) {
  SynthConfig cfg;
  cfg.mean_normalize = true;
  const Synthesizer normalizing(cfg);
  Rng rng(11);
  Mixture x = synth_mixture(normalizing, pick({1, 2, 3}), OverlapBucket::k25to50, {}, rng);
  const std::size_t T = x.frames();
  const auto v = x.features.frames.values();
  for (std::size_t f = 0; f < 80; ++f) {
    double s = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      ASSERT_TRUE(std::isfinite(v[f * T + t]));
      s += v[f * T + t];
    }
    EXPECT_NEAR(s / T, 0.0, 1e-9);
  }
}

TEST_F(SynthTest, TrainingMixtureFillsWindow) {
  MixtureOptions opt;
  opt.clip_min_frames = 60;
  opt.clip_max_frames = 150;
  Rng rng(3);
  for (int rep = 0; rep < 10; ++rep) {
    Mixture m = synth_training_mixture(synth, pick({0, 1, 2}), 200, opt, rng);
    EXPECT_EQ(m.frames(), 200u);
    for (const SpeakerTurns &s : m.annotation.speakers)
      EXPECT_GT(m.mask_for(s.id).target_count(), 0u);
  }
}

TEST_F(SynthTest, ConversationHasEverySpeaker) {
  ConversationOptions opt;
  opt.total_frames = 2000;
  Rng rng(4);
  Mixture m = synth_conversation(synth, pick({0, 1, 2}), opt, rng);
  EXPECT_EQ(m.frames(), 2000u);
  EXPECT_NO_THROW(m.annotation.validate());
  for (const SpeakerTurns &s : m.annotation.speakers)
    EXPECT_GT(m.mask_for(s.id).target_count(), 0u);
}

// Scaling ---------------------------------------------------------------------

class ScalingTest : public SynthTest {
 protected:
  ScalingTest() {
    Rng rng(21);
    mix = synth_mixture(synth, pick({4, 5, 6, 7}), OverlapBucket::k0to25, {}, rng);
  }
  Mixture mix;
};

std::vector<std::vector<double>> target_columns(const Mixture &m) {
  const ActivityMask q = m.mask();
  const std::size_t F = m.features.num_bins(), T = m.frames();
  std::vector<std::vector<double>> cols;
  for (std::size_t t = 0; t < T; ++t) {
    if (!q.target[t]) continue;
    std::vector<double> c(F);
    for (std::size_t f = 0; f < F; ++f) c[f] = m.features.frames.values()[f * T + t];
    cols.push_back(std::move(c));
  }
  return cols;
}

TEST_F(ScalingTest, RunLengthsScale) {
  const auto runs = nontarget_only_runs(mix.mask());
  ASSERT_FALSE(runs.empty());
  std::size_t only = 0;
  for (auto [b, e] : runs) only += e - b;
  for (double m : {0.0, 0.5, 1.0, 3.0, 5.0}) {
    SCOPED_TRACE(m);
    Mixture s = scale_nontarget_duration(mix, m);
    std::size_t expect = mix.frames() - only;
    for (auto [b, e] : runs)
      expect += static_cast<std::size_t>(std::ceil(m * static_cast<double>(e - b) - 1e-9));
    EXPECT_EQ(s.frames(), expect);
    const auto new_runs = nontarget_only_runs(s.mask());
    if (m == 0.0) {
      EXPECT_TRUE(new_runs.empty());
    } else {
      ASSERT_EQ(new_runs.size(), runs.size());
      for (std::size_t r = 0; r < runs.size(); ++r)
        EXPECT_EQ(new_runs[r].second - new_runs[r].first,
                  static_cast<std::size_t>(
                      std::ceil(m * (runs[r].second - runs[r].first) - 1e-9)));
    }
    EXPECT_EQ(target_columns(s), target_columns(mix));
    EXPECT_NEAR(s.overlap_ratio, mix.overlap_ratio, 1e-12);
    EXPECT_NO_THROW(s.annotation.validate());
  }
}

TEST_F(ScalingTest, IdentityAtOne) {
  Mixture s = scale_nontarget_duration(mix, 1.0);
  EXPECT_EQ(flat(s.features.frames), flat(mix.features.frames));
  EXPECT_EQ(s.mask().target, mix.mask().target);
  EXPECT_EQ(s.mask().nontarget, mix.mask().nontarget);
}

TEST_F(ScalingTest, AnnotationAndMaskPathsAgree) {
  for (double m : {0.0, 0.3, 2.0, 3.0}) {
    const ActivityMask direct = scale_nontarget_mask(mix.mask(), m);
    const ActivityMask derived = scale_nontarget_duration(mix, m).mask();
    EXPECT_EQ(direct.target, derived.target);
    EXPECT_EQ(direct.nontarget, derived.nontarget);
  }
}

TEST_F(ScalingTest, TilesVerbatim) {
  const auto runs = nontarget_only_runs(mix.mask());
  const auto [b, e] = runs.front();
  Mixture s = scale_nontarget_duration(mix, 3.0);
  // Frames before the first run are unchanged, so the run starts at b.
  const std::size_t F = mix.features.num_bins(), T = mix.frames(), T3 = s.frames();
  const auto x = mix.features.frames.values(), y = s.features.frames.values();
  for (std::size_t i = 0; i < 3 * (e - b); ++i)
    for (std::size_t f = 0; f < F; ++f)
      ASSERT_EQ(y[f * T3 + b + i], x[f * T + b + i % (e - b)]);
}

TEST_F(ScalingTest, Errors) {
  EXPECT_THROW(scale_nontarget_duration(mix, -0.5), Error);
  Rng rng(5);
  Mixture clean = synth.single(bank[0], 100, rng);
  EXPECT_THROW(scale_nontarget_duration(clean, 2.0), Error);
  EXPECT_EQ(scale_nontarget_duration(clean, 1.0).frames(), 100u);
}

// Trials ----------------------------------------------------------------------

TEST(TrialSet, BalancedWithBucketProportions) {
  auto bank = synth_speaker_bank(8, 10);
  TrialConfig c;
  c.n_trials = 62;
  c.bucket_weights = {2, 1, 1, 1, 1, 0};
  TrialSet set = build_trial_set(bank, c, 99);
  ASSERT_EQ(set.trials.size(), 62u);
  std::size_t same = 0;
  std::map<OverlapBucket, std::size_t> hist;
  for (const Trial &t : set.trials) {
    same += t.same;
    EXPECT_EQ(t.same, t.enroll_speaker == t.test_target);
    ASSERT_TRUE(t.bucket.has_value());
    ++hist[*t.bucket];
    std::set<std::size_t> all(t.interferers.begin(), t.interferers.end());
    EXPECT_EQ(all.size(), 3u);
    EXPECT_FALSE(all.count(t.enroll_speaker));
    EXPECT_FALSE(all.count(t.test_target));
  }
  EXPECT_EQ(same, 31u);
  const double expect[6] = {62 * 2 / 6.0, 62 / 6.0, 62 / 6.0, 62 / 6.0, 62 / 6.0, 0};
  for (std::size_t b = 0; b < 6; ++b)
    EXPECT_LE(std::abs(static_cast<double>(hist[kAllBuckets[b]]) - expect[b]), 1.0);

  TrialSet again = build_trial_set(bank, c, 99);
  Synthesizer synth;
  for (std::size_t i = 0; i < 6; ++i) {
    const Trial &t = set.trials[i * 10];
    Mixture m = set.test(synth, bank, t);
    EXPECT_TRUE(bucket_contains(*t.bucket, m.overlap_ratio));
    EXPECT_EQ(m.target_id, bank[t.test_target].id);
    EXPECT_EQ(flat(m.features.frames),
              flat(again.test(synth, bank, again.trials[i * 10]).features.frames));
    Mixture e = set.enrollment(synth, bank, t);
    EXPECT_EQ(e.frames(), c.enroll_frames);
    EXPECT_EQ(e.mask().target_count(), c.enroll_frames);
  }
}

TEST(TrialSet, OneVsOneIsClean) {
  auto bank = synth_speaker_bank(8, 4);
  TrialConfig c;
  c.n_trials = 10;
  c.protocol = Protocol::kOneVsOne;
  TrialSet set = build_trial_set(bank, c, 1);
  Synthesizer synth;
  for (const Trial &t : set.trials) {
    EXPECT_FALSE(t.bucket.has_value());
    EXPECT_TRUE(t.interferers.empty());
  }
  Mixture m = set.test(synth, bank, set.trials[1]);
  EXPECT_EQ(m.annotation.speakers.size(), 1u);
  EXPECT_THROW(build_trial_set(synth_speaker_bank(8, 4), TrialConfig{}, 1), ConfigError);
}

TEST(SynthConfigJson, RoundTripAndStrictKeys) {
  SynthConfig c;
  c.noise_snr_db = 12.5;
  c.phones = 7;
  SynthConfig d = synth_config_from_json(to_json(c));
  EXPECT_EQ(to_json(d).dump(), to_json(c).dump());
  Json j = to_json(c);
  j["phone_count"] = 3;
  EXPECT_THROW(synth_config_from_json(j), ConfigError);
  TrialConfig t;
  t.bucket_weights = {1, 0, 0, 0, 0, 2};
  EXPECT_EQ(to_json(trial_config_from_json(to_json(t))).dump(), to_json(t).dump());
}

TEST_F(SynthTest, WaveformFrontEnd) {
  Rng rng(6);
  const std::vector<double> wav = synth.waveform(bank[0], 16000, rng);
  for (double s : wav) ASSERT_LE(std::abs(s), 1.0);
  FeatureSequence f = logmel_features(wav);
  EXPECT_EQ(f.num_frames(), frame_count(16000, 400, 160));
  for (double v : f.frames.values()) ASSERT_TRUE(std::isfinite(v));
}

}  // namespace
}  // namespace maskemb
