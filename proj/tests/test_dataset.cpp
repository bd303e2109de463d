// tests/test_dataset.cpp

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
#include <filesystem>
#include <fstream>

#include "maskemb/dataset.hpp"
#include "maskemb/error.hpp"

namespace maskemb {
namespace {

namespace fs = std::filesystem;

RunConfig small_config() {
  RunConfig c;
  c.data.synth.n_mels = 16;
  c.data.train_speakers = 4;
  c.data.eval_speakers = 6;
  c.data.trials.n_trials = 12;
  c.data.trials.enroll_frames = 120;
  c.data.conversations = 2;
  c.data.calibration_conversations = 1;
  c.data.conversation.total_frames = 600;
  c.model.input_dim = 16;
  c.sync();
  c.validate();
  return c;
}

bool same_values(const Tensor &a, const Tensor &b) {
  const auto x = a.values(), y = b.values();
  return a.shape() == b.shape() && std::equal(x.begin(), x.end(), y.begin(), y.end());
}

class DatasetTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() / "maskemb_test_dataset";
    fs::remove_all(dir);
    config = small_config();
    records = write_dataset(dir.string(), config);
  }
  void TearDown() override { fs::remove_all(dir); }
  fs::path dir;
  RunConfig config;
  std::size_t records = 0;
};

TEST_F(DatasetTest, ManifestCoversTrialsAndConversations) {
  EXPECT_EQ(records, 2 * 12u + 3u);
  const Dataset data = Dataset::load(dir.string());
  EXPECT_EQ(data.records().size(), records);
  EXPECT_EQ(data.trials().size(), 12u);
  EXPECT_EQ(data.load_role("calibration").size(), 1u);
  EXPECT_EQ(data.load_role("conversation").size(), 2u);
  for (const auto &r : data.records())
    EXPECT_TRUE(fs::exists(dir / r.features)) << r.features;
}

TEST_F(DatasetTest, TrialsMatchTheInMemorySource) {
  const Dataset data = Dataset::load(dir.string());
  const DatasetTrialSource disk(data);
  const auto bank = eval_bank(config.data);
  const Synthesizer synth(config.data.synth);
  const TrialSet set = build_trial_set(bank, config.data.trials, config.data.trial_seed);
  const SynthTrialSource memory(set, synth, bank);
  ASSERT_EQ(disk.size(), memory.size());
  for (std::size_t i = 0; i < disk.size(); ++i) {
    const TrialInfo a = disk.info(i), b = memory.info(i);
    EXPECT_EQ(a.id, b.id);
    EXPECT_EQ(a.same, b.same);
    EXPECT_EQ(a.bucket, b.bucket);
    const Mixture ta = disk.test(i), tb = memory.test(i);
    EXPECT_TRUE(same_values(ta.features.frames, tb.features.frames)) << i;
    EXPECT_EQ(ta.target_id, tb.target_id);
    const auto ma = ta.mask(), mb = tb.mask();
    EXPECT_EQ(ma.target, mb.target) << i;
    EXPECT_EQ(ma.nontarget, mb.nontarget) << i;
    EXPECT_TRUE(same_values(disk.enrollment(i).features.frames,
                            memory.enrollment(i).features.frames));
  }
}

TEST_F(DatasetTest, MalformedTrialLineThrows) {
  std::ofstream(dir / "trials.txt", std::ios::app) << "1 features/none.feat missing\n";
  EXPECT_THROW(Dataset::load(dir.string()), FormatError);
}

}  // namespace
}  // namespace maskemb
