// tests/test_encoders.cpp

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

#include <filesystem>
#include <fstream>
#include <random>

#include "maskemb/encoders.hpp"
#include "test_util.hpp"

namespace maskemb {
namespace {

ModelConfig small(const std::string &preset, Family family) {
  ModelConfig c = ModelConfig::preset(preset, family);
  c.input_dim = 6;
  c.channels = 8;
  c.num_blocks = 2;
  c.kernels = {3, 5};
  c.dilations = {1, 2};
  c.embedding_dim = 5;
  c.se_reduction = 2;
  c.segment_length = 4;
  return c;
}

std::vector<double> flat(const Tensor &t) { return {t.values().begin(), t.values().end()}; }

FeatureSequence random_features(std::mt19937_64 &rng, std::size_t F, std::size_t T) {
  return FeatureSequence{testing::random_tensor(rng, {F, T}), 0.01, 0.025};
}

ActivityMask random_activity(std::mt19937_64 &rng, std::size_t T) {
  return ActivityMask{testing::random_mask(rng, T, 0.6, 2), testing::random_mask(rng, T, 0.5, 0)};
}

TEST(BuildModel, SameSeedSameParameters) {
  for (Family f : {Family::kEcapaMini, Family::kCamppMini}) {
    Model a = build_model(small("proposed", f), 9);
    Model b = build_model(small("proposed", f), 9);
    Model c = build_model(small("proposed", f), 10);
    auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
    ASSERT_EQ(pa.size(), pb.size());
    bool any_diff = false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
      EXPECT_EQ(pa[i].first, pb[i].first);
      EXPECT_EQ(flat(pa[i].second), flat(pb[i].second));
      any_diff |= flat(pa[i].second) != flat(pc[i].second);
    }
    EXPECT_TRUE(any_diff);
  }
}

TEST(BuildModel, ParameterCountClosedForm) {
  const std::size_t D = 8, H = 4, F = 6 + 2, E = 5, r = 2, A = 4;
  const std::size_t pool = A * 3 * D + A + D * A, out = E * 2 * D + E;
  std::size_t ecapa = D * F * 3 + D + 2 * D;
  for (std::size_t K : {3u, 5u})
    ecapa += (D * D + D) + 2 * D + (H * H * K + H) + 2 * H + (D * D + D) + 2 * D +
             (D / r * D + D / r + D * (D / r) + D);
  ecapa += pool + out;
  EXPECT_EQ(build_model(small("proposed", Family::kEcapaMini), 1).parameter_count(), ecapa);

  std::size_t campp = D * F * 3 + 2 * D;
  for (std::size_t K : {3u, 5u})
    campp += 2 * D + H * D + 2 * H + H * H * K + (H / r * H + H / r + H * (H / r) + H) +
             2 * (D + H) + D * (D + H);
  campp += 2 * D + pool + out;
  EXPECT_EQ(build_model(small("proposed", Family::kCamppMini), 1).parameter_count(), campp);
}

TEST(BuildModel, PointwiseOnlyHasUnitKernels) {
  for (Family f : {Family::kEcapaMini, Family::kCamppMini}) {
    ModelConfig c = small("proposed", f);
    c.pointwise_only = true;
    for (const auto &[name, t] : build_model(c, 3).parameters()) {
      if (t.rank() == 3) {
        EXPECT_EQ(t.dim(2), 1u) << name;
      }
    }
  }
}

TEST(BuildModel, RejectsBadConfig) {
  ModelConfig c = small("baseline", Family::kEcapaMini);
  c.kernels = {3};
  EXPECT_THROW(build_model(c, 1), ConfigError);
  c = small("baseline", Family::kEcapaMini);
  c.se_reduction = 3;
  EXPECT_THROW(build_model(c, 1), ConfigError);
  EXPECT_THROW(ModelConfig::preset("fancy"), ConfigError);
}

TEST(ExtractEmbedding, BaselineIgnoresMask) {
  std::mt19937_64 rng(70);
  for (Family f : {Family::kEcapaMini, Family::kCamppMini}) {
    Model m = build_model(small("baseline", f), 4);
    auto feats = random_features(rng, 6, 23);
    ActivityMask mask = random_activity(rng, 23);
    EXPECT_EQ(flat(extract_embedding(m, feats, &mask)),
              flat(extract_embedding(m, feats, nullptr)));
  }
}

TEST(ExtractEmbedding, GuidedNeedsNonEmptyMask) {
  std::mt19937_64 rng(71);
  Model m = build_model(small("guided", Family::kEcapaMini), 4);
  auto feats = random_features(rng, 6, 12);
  EXPECT_THROW(extract_embedding(m, feats, nullptr), Error);
  ActivityMask empty{FrameMask(12, 0), FrameMask(12, 1)};
  EXPECT_THROW(extract_embedding(m, feats, &empty), EmptyTargetMask);
}

TEST(ExtractEmbedding, ProposedEqualsGuidedWithAllOnesMasks) {
  std::mt19937_64 rng(72);
  for (Family f : {Family::kEcapaMini, Family::kCamppMini}) {
    Model proposed = build_model(small("proposed", f), 5);
    Model guided = build_model(small("guided", f), 5);
    auto feats = random_features(rng, 6, 21);
    ActivityMask ones{FrameMask(21, 1), testing::random_mask(rng, 21, 0.3, 0)};
    EXPECT_EQ(flat(extract_embedding(proposed, feats, &ones)),
              flat(extract_embedding(guided, feats, &ones)));
    // Train mode exercises the batch statistics as well.
    Tensor x = stack_features({&feats.frames, &feats.frames});
    std::vector<ActivityMask> masks{ones, ones};
    NoGradScope off;
    EXPECT_EQ(flat(proposed.forward(x, &masks, BNMode::kTrain)),
              flat(guided.forward(x, &masks, BNMode::kTrain)));
  }
}

// Inserts `len` copies of non-target-only frames at position `at`.
void insert_nontarget(FeatureSequence &f, ActivityMask &m, std::size_t at,
                      const Tensor &block) {
  Tensor a = slice(f.frames, 1, 0, at);
  Tensor b = slice(f.frames, 1, at, f.num_frames());
  f.frames = concat({a, block, b}, 1);
  m.target.insert(m.target.begin() + at, block.dim(1), 0);
  m.nontarget.insert(m.nontarget.begin() + at, block.dim(1), 1);
}

TEST(ExtractEmbedding, PointwiseProposedIgnoresNonTargetOnlyFrames) {
  std::mt19937_64 rng(73);
  ModelConfig c = small("proposed", Family::kEcapaMini);
  c.pointwise_only = true;
  Model m = build_model(c, 6);
  auto feats = random_features(rng, 6, 30);
  ActivityMask mask = random_activity(rng, 30);
  Tensor ref = extract_embedding(m, feats, &mask);
  insert_nontarget(feats, mask, 11, testing::random_tensor(rng, {6, 17}));
  Tensor got = extract_embedding(m, feats, &mask);
  for (std::size_t e = 0; e < ref.numel(); ++e)
    EXPECT_NEAR(got.values()[e], ref.values()[e], 1e-10);

  // The guided baseline is not invariant.
  ModelConfig g = small("guided", Family::kEcapaMini);
  g.pointwise_only = true;
  Model gm = build_model(g, 6);
  auto f2 = random_features(rng, 6, 30);
  ActivityMask m2 = random_activity(rng, 30);
  Tensor r2 = extract_embedding(gm, f2, &m2);
  insert_nontarget(f2, m2, 11, testing::random_tensor(rng, {6, 17}));
  EXPECT_NE(flat(extract_embedding(gm, f2, &m2)), flat(r2));
}

TEST(Checkpoint, RoundTripIsBitwise) {
  std::mt19937_64 rng(74);
  const auto dir = std::filesystem::temp_directory_path();
  for (const char *preset : {"no-guided-bn", "no-guided-se"}) {
    Model m = build_model(small(preset, Family::kCamppMini), 8);
    // Move the running stats off their defaults.
    auto feats = random_features(rng, 6, 20);
    ActivityMask mask = random_activity(rng, 20);
    {
      Tensor x = stack_features({&feats.frames, &feats.frames});
      std::vector<ActivityMask> masks{mask, mask};
      NoGradScope off;
      m.forward(x, &masks, BNMode::kTrain);
    }
    Tensor before = extract_embedding(m, feats, &mask);
    const std::string path = (dir / "maskemb_ckpt.bin").string();
    save_checkpoint(path, m, R"({"step": 3})");
    Model back = load_checkpoint(path);
    EXPECT_EQ(back.config.guide_bn, m.config.guide_bn);
    EXPECT_EQ(back.config.guide_se_or_cam, m.config.guide_se_or_cam);
    EXPECT_EQ(flat(extract_embedding(back, feats, &mask)), flat(before));
  }
}

TEST(Checkpoint, RefusesOtherVersions) {
  const std::string path =
      (std::filesystem::temp_directory_path() / "maskemb_ckpt_v.bin").string();
  Model m = build_model(small("baseline", Family::kEcapaMini), 1);
  save_checkpoint(path, m);
  {
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(8);
    std::uint32_t v = 99;
    f.write(reinterpret_cast<const char *>(&v), 4);
  }
  EXPECT_THROW(load_checkpoint(path), FormatError);
}

TEST(ModelConfig, JsonRoundTripAndUnknownKeys) {
  ModelConfig c = small("no-guided-se", Family::kCamppMini);
  ModelConfig back = model_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  Json bad = to_json(c);
  bad["chanels"] = 3;
  EXPECT_THROW(model_config_from_json(bad), ConfigError);
}

}  // namespace
}  // namespace maskemb
