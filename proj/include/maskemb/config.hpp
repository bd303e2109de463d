// maskemb/config.hpp

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

// Run configuration for the command-line tool: model, data, training and
// evaluation sections in one JSON document.
//
// Loading starts from the defaults, overlays the file (unknown keys are
// errors), then applies environment overrides. Every leaf has one variable
// named ME_ followed by its upper-cased key path joined with '_', e.g.
//   ME_SEED=7  ME_TRAINING_EPOCHS=30  ME_DATA_SYNTH_NOISE_SNR_DB=20
//   ME_MODEL_KERNELS=[3,3,3]  ME_EVALUATION_M_VALUES=[0,1,5]
// Values are parsed as JSON, falling back to a plain string for string
// leaves. An ME_ variable that names no leaf is an error.

#ifndef MASKEMB_CONFIG_HPP_
#define MASKEMB_CONFIG_HPP_

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "maskemb/encoders.hpp"
#include "maskemb/evaluation.hpp"
#include "maskemb/json_util.hpp"
#include "maskemb/synth.hpp"
#include "maskemb/training.hpp"

namespace maskemb {

struct DataConfig {
  SynthConfig synth;
  std::uint64_t speaker_seed = 2026;
  std::size_t train_speakers = 64;
  std::size_t eval_speakers = 40;  // disjoint from the training speakers
  TrialConfig trials;
  std::uint64_t trial_seed = 77;
  std::size_t conversations = 10;
  std::size_t calibration_conversations = 5;
  std::size_t conversation_speakers = 3;
  ConversationOptions conversation;
  std::uint64_t conversation_seed = 5;
};

struct EvaluationConfig {
  std::vector<double> m_values{0, 1, 2, 3, 5};
  std::size_t bootstrap_resamples = 1000;
  std::uint64_t bootstrap_seed = 0;
  DiarConfig diar;
  bool calibrate_threshold = true;
  std::vector<double> threshold_candidates;  // default 0.05, 0.10, ..., 1.45
};

struct RunConfig {
  std::uint64_t seed = 7;
  ModelConfig model = ModelConfig::preset("proposed");
  DataConfig data;
  TrainConfig training;  // model, synth and speaker fields mirror the above
  EvaluationConfig evaluation;

  RunConfig();
  /// Copies the model and data settings into `training` and validates.
  void sync();
  void validate() const;
};

Json to_json(const RunConfig &c);
/// Strict parse over the defaults; the result is synced and validated.
RunConfig run_config_from_json(const Json &j);

/// Defaults, then `path` when non-empty, then `env` overrides.
RunConfig load_run_config(const std::string &path,
                          const std::map<std::string, std::string> &env);
/// Applies ME_ overrides to a complete configuration document.
Json apply_env_overrides(Json j, const std::map<std::string, std::string> &env);
/// Every ME_ variable of the current process environment.
std::map<std::string, std::string> me_environment();

/// Training speakers: the first `train_speakers` of the seeded bank.
std::vector<SyntheticSpeaker> train_bank(const DataConfig &data);
/// Evaluation speakers: the next `eval_speakers` of the same bank.
std::vector<SyntheticSpeaker> eval_bank(const DataConfig &data);
/// Calibration recordings first, then the test recordings.
std::vector<Mixture> make_conversations(const DataConfig &data,
                                        const Synthesizer &synth,
                                        const std::vector<SyntheticSpeaker> &bank);

}  // namespace maskemb

#endif  // MASKEMB_CONFIG_HPP_
