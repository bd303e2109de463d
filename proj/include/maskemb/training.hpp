// maskemb/training.hpp

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

// Speaker-classification training: additive angular margin softmax, Adam,
// a cyclical learning rate, and the on-the-fly synthetic mixture loop.

#ifndef MASKEMB_TRAINING_HPP_
#define MASKEMB_TRAINING_HPP_

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "maskemb/encoders.hpp"
#include "maskemb/synth.hpp"

namespace maskemb {

struct AAMHead {
  Tensor weight;  // [n_speakers, E], normalized when scoring
  double margin = 0.2;
  double scale = 30.0;

  static AAMHead init(std::size_t n_speakers, std::size_t embedding_dim,
                      std::uint64_t seed, double margin = 0.2,
                      double scale = 30.0);
  void validate() const;
};

/// Mean AAM-softmax cross-entropy. Throws NumericError on a non-finite
/// embedding.
Tensor aam_softmax_loss(const Tensor &embeddings,
                        std::span<const std::size_t> labels,
                        const AAMHead &head);

/// Fraction of rows whose highest cosine is at their label.
double aam_accuracy(const Tensor &embeddings, std::span<const std::size_t> labels,
                    const AAMHead &head);

struct LRSchedule {
  double base_lr = 1e-5;
  double max_lr = 1e-3;
  std::size_t cycle_epochs = 20;
  std::size_t warmup_iters = 1000;

  void validate(std::size_t iters_per_epoch) const;
};

/// Linear warmup base -> max, then cosine decay back to base on the last
/// iteration of each cycle; restarts every cycle.
double cyclical_lr(std::size_t iteration, std::size_t iters_per_epoch,
                   const LRSchedule &schedule);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::size_t t = 0;
};

/// One bias-corrected Adam update from each parameter's accumulated
/// gradient. When any gradient is non-finite nothing changes, the offending
/// parameter is written to `why`, and false is returned.
bool adam_step(std::vector<NamedTensor> &params, AdamState &state, double lr,
               const AdamConfig &config = {}, std::string *why = nullptr);

double grad_norm(const std::vector<NamedTensor> &params);

struct TrainConfig {
  ModelConfig model;
  SynthConfig synth;
  std::size_t n_speakers = 64;
  std::uint64_t speaker_seed = 2026;
  std::size_t batch_mixtures = 16;
  std::size_t speakers_per_mixture = 3;
  std::size_t frames = 200;
  MixtureOptions mixture{60, 150, 50, 50, 200};
  std::size_t steps_per_epoch = 20;
  std::size_t epochs = 40;
  LRSchedule schedule{1e-5, 1e-3, 20, 40};
  AdamConfig adam;
  double margin = 0.2;
  double scale = 30.0;
  double max_grad_norm = 0.0;  // 0 disables clipping

  std::size_t total_steps() const { return steps_per_epoch * epochs; }
  void validate() const;
};

Json to_json(const TrainConfig &c);
TrainConfig train_config_from_json(const Json &j, TrainConfig base = {});

struct StepMetrics {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double accuracy = 0.0;
  bool skipped = false;
};

Json to_json(const StepMetrics &m);

struct TrainBatch {
  Tensor features;                  // [B, F, T]
  std::vector<ActivityMask> masks;  // one per example
  std::vector<std::size_t> labels;
};

/// Batch for one step, a pure function of (config, bank, seed, step).
/// Guided configs get one example per mixture speaker (target rotates);
/// baselines get single-speaker clips.
TrainBatch make_train_batch(const TrainConfig &config, const Synthesizer &synth,
                            const std::vector<SyntheticSpeaker> &bank,
                            std::uint64_t seed, std::size_t step);

struct TrainResult {
  Model model;
  AAMHead head;
  std::vector<StepMetrics> metrics;
  std::vector<std::string> checkpoints;
  double final_accuracy = 0.0;  // mean over the last epoch
};

/// Trains from scratch. With a non-empty `out_dir` writes
/// `metrics.log` (one JSON object per step) and `checkpoints/` (one per
/// cycle plus `final.ckpt`). A non-finite loss restores the last checkpoint
/// state, saves it as `last_good.ckpt` and throws NumericError.
TrainResult train_run(const TrainConfig &config, std::uint64_t seed,
                      const std::string &out_dir = "", bool verbose = false);

/// Training speaker bank for a config.
std::vector<SyntheticSpeaker> training_bank(const TrainConfig &config);

}  // namespace maskemb

#endif  // MASKEMB_TRAINING_HPP_
