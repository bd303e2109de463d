// tests/test_evaluation.cpp

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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "maskemb/error.hpp"
#include "maskemb/evaluation.hpp"
#include "eer_oracle.hpp"

namespace maskemb {
namespace {

using testing::eer_oracle;

std::vector<TrialScore> make_scores(const std::vector<double> &pos,
                                    const std::vector<double> &neg) {
  std::vector<TrialScore> s;
  for (double x : pos) s.push_back({"p" + std::to_string(s.size()), x, true, ""});
  for (double x : neg) s.push_back({"n" + std::to_string(s.size()), x, false, ""});
  return s;
}

TEST(Cosine, Examples) {
  const std::vector<double> a{1, 2, 3}, b{-1, -2, -3}, c{3, 0, -1};
  EXPECT_DOUBLE_EQ(cosine_score(a, a), 1.0);
  EXPECT_DOUBLE_EQ(cosine_score(a, b), -1.0);
  EXPECT_DOUBLE_EQ(cosine_score(a, c), 0.0);
  EXPECT_THROW(cosine_score(a, std::vector<double>{0, 0, 0}), Error);
  EXPECT_THROW(cosine_score(a, std::vector<double>{1, 1}), ShapeError);
}

TEST(Eer, HandComputed) {
  const auto s = make_scores({0.9, 0.8, 0.3}, {0.7, 0.2, 0.1});
  const EerResult r = compute_eer(s);
  EXPECT_NEAR(r.eer, 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(r.threshold, 0.5, 1e-15);
}

TEST(Eer, SeparatedAndChance) {
  EXPECT_EQ(compute_eer(make_scores({0.9, 0.8}, {0.1, 0.2, 0.3})).eer, 0.0);
  std::mt19937_64 rng(1);
  std::vector<TrialScore> same_score;
  for (int i = 0; i < 40; ++i)
    same_score.push_back({std::to_string(i), 0.42, static_cast<bool>(rng() & 1) || i == 0, ""});
  same_score[1].same = false;
  EXPECT_DOUBLE_EQ(compute_eer(same_score).eer, 0.5);
  EXPECT_THROW(compute_eer(make_scores({0.1, 0.2}, {})), Error);
}

TEST(Eer, TwentyHandBuiltScoresMatchOracle) {
  const auto s = make_scores({0.91, 0.85, 0.85, 0.7, 0.66, 0.5, 0.42, 0.4, 0.31, 0.2},
                             {0.8, 0.6, 0.5, 0.45, 0.3, 0.3, 0.1, 0.05, -0.2, -0.4});
  const EerResult a = compute_eer(s), b = eer_oracle(s);
  EXPECT_EQ(a.eer, b.eer);
  EXPECT_EQ(a.threshold, b.threshold);
}

TEST(Eer, RandomSetsMatchOracleExactly) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n;
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t size = 2 + rng() % 60;
    std::vector<TrialScore> s;
    for (std::size_t i = 0; i < size; ++i) {
      const bool same = i == 0 ? true : i == 1 ? false : (rng() & 1);
      // Coarse rounding creates ties.
      const double v = std::round((n(rng) + (same ? 1.0 : 0.0)) * 4) / 4;
      s.push_back({std::to_string(i), v, same, ""});
    }
    const EerResult a = compute_eer(s), b = eer_oracle(s);
    ASSERT_EQ(a.eer, b.eer) << rep;
    ASSERT_EQ(a.threshold, b.threshold) << rep;
  }
}

TEST(Bootstrap, IdenticalSystemsGiveOne) {
  const auto s = make_scores({0.9, 0.4, 0.3}, {0.5, 0.2});
  const BootstrapResult r = bootstrap_compare(s, s, 200, 3);
  EXPECT_EQ(r.p_value, 1.0);
  EXPECT_EQ(r.observed, 0.0);
}

TEST(Bootstrap, DominanceIsSignificantAndDeterministic) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n;
  std::vector<TrialScore> a, b;
  for (int i = 0; i < 400; ++i) {
    const bool same = i % 2 == 0;
    const double base = n(rng) + (same ? 0.5 : -0.5);
    const double better = same ? base + 1.0 : base - 1.0;
    a.push_back({std::to_string(i), better, same, ""});
    b.push_back({std::to_string(i), base, same, ""});
  }
  const BootstrapResult r = bootstrap_compare(a, b, 1000, 11);
  EXPECT_LT(r.observed, 0.0);
  EXPECT_LT(r.p_value, 0.05);
  const BootstrapResult again = bootstrap_compare(a, b, 1000, 11);
  EXPECT_EQ(r.p_value, again.p_value);
  // Order of system B does not matter; pairing is by id.
  std::vector<TrialScore> shuffled = b;
  std::reverse(shuffled.begin(), shuffled.end());
  EXPECT_EQ(bootstrap_compare(a, shuffled, 1000, 11).p_value, r.p_value);
}

TEST(Bootstrap, MismatchedTrials) {
  auto a = make_scores({0.9}, {0.1}), b = make_scores({0.9}, {0.1});
  b[1].id = "other";
  EXPECT_THROW(bootstrap_compare(a, b), Error);
  b = make_scores({0.9, 0.8}, {0.1});
  EXPECT_THROW(bootstrap_compare(a, b), Error);
}

TEST(EerByBucket, PooledThenBuckets) {
  std::vector<TrialScore> s{{"a", 0.9, true, "0"},  {"b", 0.1, false, "0"},
                            {"c", 0.4, true, "100"}, {"d", 0.5, false, "100"},
                            {"e", 0.3, true, "100"}};
  const auto rows = eer_by_bucket(s);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].bucket, "all");
  EXPECT_EQ(rows[0].trials, 5u);
  EXPECT_EQ(rows[1].bucket, "0");
  EXPECT_EQ(rows[1].eer->eer, 0.0);
  EXPECT_EQ(rows[2].bucket, "100");
  EXPECT_EQ(rows[2].eer->eer, 1.0);
  std::ostringstream os;
  write_eer_csv(os, rows);
  EXPECT_EQ(os.str().substr(0, 25), "bucket,eer,threshold,tria");
}

// Assignment and DER ----------------------------------------------------------------

TEST(Assignment, MatchesBruteForce) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 10);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t R = 1 + rng() % 5, C = 1 + rng() % 5;
    std::vector<std::vector<double>> w(R, std::vector<double>(C));
    for (auto &r : w)
      for (double &x : r) x = (rng() % 3 == 0) ? 0.0 : std::round(u(rng));
    const auto a = max_weight_assignment(w);
    double got = 0;
    std::set<long> used;
    for (std::size_t i = 0; i < R; ++i)
      if (a[i] >= 0) {
        got += w[i][a[i]];
        EXPECT_TRUE(used.insert(a[i]).second);
      }
    // Brute force over column permutations, padded with "unassigned".
    const std::size_t n = std::max(R, C);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    double best = 0;
    do {
      double v = 0;
      for (std::size_t i = 0; i < R; ++i)
        if (perm[i] < C) v += w[i][perm[i]];
      best = std::max(best, v);
    } while (std::next_permutation(perm.begin(), perm.end()));
    EXPECT_DOUBLE_EQ(got, best);
  }
}

ActivityAnnotation annotate(std::vector<std::pair<std::string, std::vector<Interval>>> s,
                            double duration) {
  ActivityAnnotation a;
  a.duration_s = duration;
  for (auto &[id, iv] : s) a.add_speaker(id).intervals = iv;
  return a;
}

TEST(Der, IdentityAndEmpty) {
  const auto ref = annotate({{"A", {{0, 4}}}, {"B", {{3, 7}}}, {"C", {{8, 10}}}}, 10);
  const DerResult same = compute_der(ref, ref);
  EXPECT_EQ(same.der, 0.0);
  const DerResult none = compute_der(ref, annotate({}, 10));
  EXPECT_DOUBLE_EQ(none.der, 1.0);
  EXPECT_DOUBLE_EQ(none.missed, 10.0);
  EXPECT_THROW(compute_der(annotate({}, 10), ref), Error);
}

TEST(Der, HandBuiltConfusion) {
  // Reference speech 10 s (A 0-4, B 4-7, C 7-10). The hypothesis labels
  // B's last second as C's cluster: 1 s of confusion.
  const auto ref = annotate({{"A", {{0, 4}}}, {"B", {{4, 7}}}, {"C", {{7, 10}}}}, 10);
  const auto hyp = annotate({{"x", {{0, 4}}}, {"y", {{4, 6}}}, {"z", {{6, 10}}}}, 10);
  const DerResult d = compute_der(ref, hyp);
  EXPECT_NEAR(d.der, 0.1, 1e-9);
  EXPECT_NEAR(d.confusion, 1.0, 1e-9);
  EXPECT_NEAR(d.missed, 0.0, 1e-12);
  EXPECT_NEAR(d.false_alarm, 0.0, 1e-12);
}

TEST(Der, OverlapMissAndFalseAlarm) {
  // 2 s overlap in the reference, hypothesis covers one speaker only there,
  // plus a 1 s false alarm.
  const auto ref = annotate({{"A", {{0, 5}}}, {"B", {{3, 8}}}}, 10);
  const auto hyp = annotate({{"0", {{0, 5}}}, {"1", {{5, 9}}}}, 10);
  const DerResult d = compute_der(ref, hyp);
  EXPECT_NEAR(d.reference, 10.0, 1e-12);
  EXPECT_NEAR(d.missed, 2.0, 1e-12);
  EXPECT_NEAR(d.false_alarm, 1.0, 1e-12);
  EXPECT_NEAR(d.confusion, 0.0, 1e-12);
  EXPECT_NEAR(d.der, 0.3, 1e-12);
}

TEST(Der, RandomPropertiesAndLabelPermutation) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0, 20);
  auto random_ann = [&](std::size_t n) {
    ActivityAnnotation a;
    a.duration_s = 25;
    for (std::size_t s = 0; s < n; ++s) {
      SpeakerTurns &t = a.add_speaker("s" + std::to_string(s));
      for (int k = 0; k < 3; ++k) {
        const double on = u(rng);
        t.intervals.push_back({on, on + 0.1 + u(rng) / 5});
      }
    }
    return a;
  };
  for (int rep = 0; rep < 50; ++rep) {
    const ActivityAnnotation ref = random_ann(3), hyp = random_ann(1 + rng() % 4);
    const DerResult d = compute_der(ref, hyp);
    EXPECT_GE(d.missed, 0.0);
    EXPECT_GE(d.false_alarm, 0.0);
    EXPECT_GE(d.confusion, -1e-12);
    EXPECT_NEAR(d.missed + d.false_alarm + d.confusion, d.der * d.reference, 1e-9);
    ActivityAnnotation perm = hyp;
    std::reverse(perm.speakers.begin(), perm.speakers.end());
    for (std::size_t i = 0; i < perm.speakers.size(); ++i) perm.speakers[i].id = "q" + std::to_string(i);
    EXPECT_NEAR(compute_der(ref, perm).der, d.der, 1e-12);
  }
}

// Clustering and diarization ------------------------------------------------------------

TEST(Ahc, LimitsAndGroups) {
  const std::vector<std::vector<double>> items{
      {1, 0.1}, {0.1, 1}, {0.95, 0.05}, {0.05, 1.1}, {1, 0}};
  EXPECT_EQ(ahc_cluster(items, std::numeric_limits<double>::infinity()),
            (std::vector<std::size_t>{0, 0, 0, 0, 0}));
  EXPECT_EQ(ahc_cluster(items, -1.0), (std::vector<std::size_t>{0, 1, 2, 3, 4}));
  EXPECT_EQ(ahc_cluster(items, 0.3), (std::vector<std::size_t>{0, 1, 0, 1, 0}));
}

ModelConfig small_model(const std::string &preset, std::size_t F) {
  ModelConfig c = ModelConfig::preset(preset, Family::kEcapaMini);
  c.input_dim = F;
  c.channels = 8;
  c.num_blocks = 1;
  c.kernels = {3};
  c.dilations = {2};
  c.embedding_dim = 6;
  c.se_reduction = 2;
  return c;
}

class EvalFixture : public ::testing::Test {
 protected:
  EvalFixture() {
    sc.n_mels = 16;
    synth = Synthesizer(sc);
    bank = synth_speaker_bank(3, 10, sc);
  }
  SynthConfig sc;
  Synthesizer synth;
  std::vector<SyntheticSpeaker> bank;
};

TEST_F(EvalFixture, OneSpeakerRecordingIsOneCluster) {
  Model model = build_model(small_model("proposed", 16), 1);
  Rng rng(2);
  Mixture rec = synth.single(bank[0], 1500, rng);
  DiarConfig dc;
  dc.ahc_threshold = 1.0;
  const DiarHypothesis h = run_diarization(model, rec, dc);
  EXPECT_EQ(h.clusters, 1u);
  EXPECT_EQ(compute_der(rec.annotation, h.turns).der, 0.0);
}

TEST_F(EvalFixture, InfiniteThresholdMergesEverything) {
  for (const char *preset : {"baseline", "proposed"}) {
    Model model = build_model(small_model(preset, 16), 1);
    Rng rng(3);
    ConversationOptions opt;
    opt.total_frames = 1500;
    Mixture rec = synth_conversation(synth, {&bank[0], &bank[1], &bank[2]}, opt, rng);
    DiarConfig dc;
    dc.ahc_threshold = std::numeric_limits<double>::infinity();
    const DiarHypothesis h = run_diarization(model, rec, dc);
    EXPECT_EQ(h.clusters, 1u) << preset;
    EXPECT_NO_THROW(h.turns.validate());
  }
}

TEST_F(EvalFixture, WindowSpeakersGetDistinctClusters) {
  Model model = build_model(small_model("proposed", 16), 1);
  Rng rng(5);
  ConversationOptions opt;
  opt.total_frames = 1500;
  opt.overlap_probability = 1.0;
  Mixture rec = synth_conversation(synth, {&bank[0], &bank[1], &bank[2]}, opt, rng);
  DiarConfig dc;
  dc.ahc_threshold = -1.0;
  const DiarHypothesis h = run_diarization(model, rec, dc);
  const DerResult d = compute_der(rec.annotation, h.turns);
  EXPECT_EQ(d.missed, 0.0);
  EXPECT_EQ(d.false_alarm, 0.0);
}

TEST_F(EvalFixture, CalibrationPicksFromCandidates) {
  Model model = build_model(small_model("proposed", 16), 1);
  Rng rng(4);
  ConversationOptions opt;
  opt.total_frames = 1200;
  std::vector<Mixture> recs{synth_conversation(synth, {&bank[3], &bank[4]}, opt, rng)};
  const std::vector<double> cand{0.1, 0.5, 2.5};
  const double t = calibrate_ahc_threshold(model, recs, {}, cand);
  EXPECT_TRUE(std::find(cand.begin(), cand.end(), t) != cand.end());
}

TEST_F(EvalFixture, SweepOfPointwiseProposedIsFlat) {
  ModelConfig mc = small_model("proposed", 16);
  mc.pointwise_only = true;
  Model model = build_model(mc, 5);
  TrialConfig tc;
  tc.n_trials = 24;
  tc.enroll_frames = 120;
  tc.mixture.clip_min_frames = 60;
  tc.mixture.clip_max_frames = 120;
  const TrialSet set = build_trial_set(bank, tc, 6);
  SynthTrialSource src(set, synth, bank);
  const std::vector<double> ms{0, 1, 2, 3, 5};
  const SweepResult r = sweep_nontarget_duration(model, src, ms);
  ASSERT_EQ(r.overall.size(), 5u);
  for (const SweepCell &c : r.overall) {
    ASSERT_TRUE(c.mean_cosine.has_value());
    EXPECT_NEAR(*c.mean_cosine, *r.overall[1].mean_cosine, 1e-9);
    EXPECT_NEAR(*c.eer, *r.overall[1].eer, 1e-9);
  }
  // m = 1 equals plain scoring of the same trials.
  const auto plain = score_trials(model, src, {}, r.eligible);
  double sum = 0;
  std::size_t same = 0;
  for (const auto &t : plain)
    if (t.same) sum += t.score, ++same;
  EXPECT_EQ(*r.overall[1].mean_cosine, sum / same);
  EXPECT_EQ(*r.overall[1].eer, compute_eer(plain).eer);

  std::ostringstream csv;
  write_sweep_csv(csv, r);
  const std::string text = csv.str();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 6);
}

TEST_F(EvalFixture, SweepWithoutEligibleTrialsIsNotApplicable) {
  Model model = build_model(small_model("proposed", 16), 5);
  TrialConfig tc;
  tc.n_trials = 4;
  tc.protocol = Protocol::kOneVsOne;
  tc.enroll_frames = 60;
  tc.mixture.clip_min_frames = 40;
  tc.mixture.clip_max_frames = 60;
  const TrialSet set = build_trial_set(bank, tc, 6);
  SynthTrialSource src(set, synth, bank);
  const std::vector<double> ms{0, 1};
  const SweepResult r = sweep_nontarget_duration(model, src, ms);
  EXPECT_TRUE(r.eligible.empty());
  for (const SweepCell &c : r.overall) {
    EXPECT_EQ(c.trials, 0u);
    EXPECT_FALSE(c.mean_cosine.has_value());
    EXPECT_FALSE(c.eer.has_value());
  }
  std::ostringstream csv;
  write_sweep_csv(csv, r);
  EXPECT_EQ(csv.str(), "m,mean_cosine,eer\n0,n/a,n/a\n1,n/a,n/a\n");
}

TEST_F(EvalFixture, BaselineScoresIgnoreMasks) {
  Model model = build_model(small_model("baseline", 16), 7);
  TrialConfig tc;
  tc.n_trials = 6;
  tc.enroll_frames = 80;
  tc.mixture.clip_min_frames = 50;
  tc.mixture.clip_max_frames = 80;
  tc.mixture.shift_min_frames = 20;
  const TrialSet set = build_trial_set(bank, tc, 8);
  SynthTrialSource src(set, synth, bank);
  const auto s = score_trials(model, src);
  ASSERT_EQ(s.size(), 6u);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const Tensor e = extract_embedding(model, src.enrollment(i).features, nullptr);
    const Tensor t = extract_embedding(model, src.test(i).features, nullptr);
    EXPECT_EQ(s[i].score, cosine_score(e.values(), t.values()));
    EXPECT_EQ(s[i].id, set.trials[i].id);
  }
}

}  // namespace
}  // namespace maskemb
