// src/config.cpp

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

#include "maskemb/config.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

extern char **environ;

namespace maskemb {

RunConfig::RunConfig() {
  for (int i = 1; i <= 29; ++i)
    evaluation.threshold_candidates.push_back(0.05 * i);
  sync();
}

void RunConfig::sync() {
  training.model = model;
  training.synth = data.synth;
  training.n_speakers = data.train_speakers;
  training.speaker_seed = data.speaker_seed;
}

void RunConfig::validate() const {
  auto fail = [](const std::string &m) { throw ConfigError(m); };
  model.validate();
  data.synth.validate();
  training.validate();
  if (data.eval_speakers < data.trials.interferers + 2)
    fail("data.eval_speakers must be at least trials.interferers + 2");
  if (data.conversation_speakers == 0 || data.conversation_speakers > data.eval_speakers)
    fail("data.conversation_speakers must be in [1, eval_speakers]");
  if (evaluation.m_values.empty()) fail("evaluation.m_values is empty");
  for (double m : evaluation.m_values)
    if (!std::isfinite(m) || m < 0.0) fail("evaluation.m_values must be finite and >= 0");
  if (evaluation.bootstrap_resamples == 0)
    fail("evaluation.bootstrap_resamples must be positive");
  if (!(evaluation.diar.window_s > 0.0) || !(evaluation.diar.shift_s > 0.0))
    fail("evaluation.diar window_s and shift_s must be positive");
  if (evaluation.calibrate_threshold &&
      (evaluation.threshold_candidates.empty() || data.calibration_conversations == 0))
    fail("threshold calibration needs candidates and calibration conversations");
}

namespace {

const char *const kMirroredTrainingKeys[] = {"model", "synth", "n_speakers",
                                             "speaker_seed"};

Json to_json(const ConversationOptions &c) {
  return Json{{"total_frames", c.total_frames},
              {"turn_min_frames", c.turn_min_frames},
              {"turn_max_frames", c.turn_max_frames},
              {"overlap_probability", c.overlap_probability},
              {"overlap_max_frames", c.overlap_max_frames}};
}

ConversationOptions conversation_from_json(const Json &j, ConversationOptions c) {
  StrictReader r(j, "data.conversation");
  r.get("total_frames", c.total_frames);
  r.get("turn_min_frames", c.turn_min_frames);
  r.get("turn_max_frames", c.turn_max_frames);
  r.get("overlap_probability", c.overlap_probability);
  r.get("overlap_max_frames", c.overlap_max_frames);
  r.finish();
  return c;
}

Json to_json(const DiarConfig &c) {
  return Json{{"window_s", c.window_s},
              {"shift_s", c.shift_s},
              {"ahc_threshold", c.ahc_threshold},
              {"min_frames", c.min_frames}};
}

DiarConfig diar_from_json(const Json &j, DiarConfig c) {
  StrictReader r(j, "evaluation.diar");
  r.get("window_s", c.window_s);
  r.get("shift_s", c.shift_s);
  r.get("ahc_threshold", c.ahc_threshold);
  r.get("min_frames", c.min_frames);
  r.finish();
  return c;
}

void collect_leaves(const Json &j, const std::string &name,
                    const Json::json_pointer &ptr,
                    std::map<std::string, Json::json_pointer> &out) {
  if (!j.is_object()) {
    if (!out.emplace(name, ptr).second)
      throw ConfigError("environment override " + name + " is ambiguous");
    return;
  }
  for (auto it = j.begin(); it != j.end(); ++it) {
    std::string key = it.key();
    for (char &ch : key) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    collect_leaves(it.value(), name + "_" + key, ptr / it.key(), out);
  }
}

}  // namespace

Json to_json(const RunConfig &c) {
  Json training = to_json(c.training);
  for (const char *k : kMirroredTrainingKeys) training.erase(k);
  const DataConfig &d = c.data;
  const EvaluationConfig &e = c.evaluation;
  return Json{
      {"seed", c.seed},
      {"model", to_json(c.model)},
      {"data",
       {{"synth", to_json(d.synth)},
        {"speaker_seed", d.speaker_seed},
        {"train_speakers", d.train_speakers},
        {"eval_speakers", d.eval_speakers},
        {"trials", to_json(d.trials)},
        {"trial_seed", d.trial_seed},
        {"conversations", d.conversations},
        {"calibration_conversations", d.calibration_conversations},
        {"conversation_speakers", d.conversation_speakers},
        {"conversation", to_json(d.conversation)},
        {"conversation_seed", d.conversation_seed}}},
      {"training", training},
      {"evaluation",
       {{"m_values", e.m_values},
        {"bootstrap_resamples", e.bootstrap_resamples},
        {"bootstrap_seed", e.bootstrap_seed},
        {"diar", to_json(e.diar)},
        {"calibrate_threshold", e.calibrate_threshold},
        {"threshold_candidates", e.threshold_candidates}}}};
}

RunConfig run_config_from_json(const Json &j) {
  RunConfig c;
  StrictReader r(j, "config");
  r.get("seed", c.seed);
  if (const Json *m = r.child("model")) c.model = model_config_from_json(*m, c.model);
  if (const Json *dj = r.child("data")) {
    DataConfig &d = c.data;
    StrictReader dr(*dj, "data");
    if (const Json *s = dr.child("synth")) d.synth = synth_config_from_json(*s, d.synth);
    dr.get("speaker_seed", d.speaker_seed);
    dr.get("train_speakers", d.train_speakers);
    dr.get("eval_speakers", d.eval_speakers);
    if (const Json *t = dr.child("trials")) d.trials = trial_config_from_json(*t, d.trials);
    dr.get("trial_seed", d.trial_seed);
    dr.get("conversations", d.conversations);
    dr.get("calibration_conversations", d.calibration_conversations);
    dr.get("conversation_speakers", d.conversation_speakers);
    if (const Json *cv = dr.child("conversation"))
      d.conversation = conversation_from_json(*cv, d.conversation);
    dr.get("conversation_seed", d.conversation_seed);
    dr.finish();
  }
  c.sync();
  if (const Json *t = r.child("training")) {
    for (const char *k : kMirroredTrainingKeys)
      if (t->contains(k))
        throw ConfigError(std::string("training.") + k +
                          ": set it in the model or data section");
    c.training = train_config_from_json(*t, c.training);
  }
  if (const Json *ej = r.child("evaluation")) {
    EvaluationConfig &e = c.evaluation;
    StrictReader er(*ej, "evaluation");
    er.get("m_values", e.m_values);
    er.get("bootstrap_resamples", e.bootstrap_resamples);
    er.get("bootstrap_seed", e.bootstrap_seed);
    if (const Json *dj = er.child("diar")) e.diar = diar_from_json(*dj, e.diar);
    er.get("calibrate_threshold", e.calibrate_threshold);
    er.get("threshold_candidates", e.threshold_candidates);
    er.finish();
  }
  r.finish();
  c.sync();
  c.validate();
  return c;
}

Json apply_env_overrides(Json j, const std::map<std::string, std::string> &env) {
  std::map<std::string, Json::json_pointer> leaves;
  collect_leaves(j, "ME", Json::json_pointer(), leaves);
  for (const auto &[name, text] : env) {
    auto it = leaves.find(name);
    if (it == leaves.end())
      throw ConfigError("environment override " + name + " names no config key");
    Json &leaf = j[it->second];
    Json value = Json::parse(text, nullptr, /*allow_exceptions=*/false);
    if (value.is_discarded() || (leaf.is_string() && !value.is_string())) {
      if (!leaf.is_string())
        throw ConfigError("environment override " + name + ": cannot parse '" +
                          text + "'");
      value = text;
    }
    leaf = value;
  }
  return j;
}

std::map<std::string, std::string> me_environment() {
  std::map<std::string, std::string> out;
  for (char **e = environ; e && *e; ++e) {
    const std::string kv = *e;
    if (kv.rfind("ME_", 0) != 0) continue;
    const auto eq = kv.find('=');
    if (eq == std::string::npos) continue;
    out.emplace(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return out;
}

RunConfig load_run_config(const std::string &path,
                          const std::map<std::string, std::string> &env) {
  Json j = to_json(RunConfig{});
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path + ": cannot open");
    Json file;
    try {
      file = Json::parse(in);
    } catch (const nlohmann::json::exception &e) {
      throw ConfigError(path + ": " + e.what());
    }
    j = to_json(run_config_from_json(file));
  }
  return run_config_from_json(apply_env_overrides(std::move(j), env));
}

std::vector<SyntheticSpeaker> train_bank(const DataConfig &data) {
  return synth_speaker_bank(data.speaker_seed, data.train_speakers, data.synth);
}

std::vector<SyntheticSpeaker> eval_bank(const DataConfig &data) {
  auto all = synth_speaker_bank(data.speaker_seed,
                                data.train_speakers + data.eval_speakers, data.synth);
  return {all.begin() + static_cast<std::ptrdiff_t>(data.train_speakers), all.end()};
}

std::vector<Mixture> make_conversations(const DataConfig &data,
                                        const Synthesizer &synth,
                                        const std::vector<SyntheticSpeaker> &bank) {
  if (data.conversation_speakers > bank.size())
    throw ConfigError("make_conversations: not enough speakers");
  Rng rng(data.conversation_seed);
  std::vector<Mixture> out;
  const std::size_t n = data.calibration_conversations + data.conversations;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::size_t> idx(bank.size());
    for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k;
    rng.shuffle(idx);
    std::vector<const SyntheticSpeaker *> spk;
    for (std::size_t k = 0; k < data.conversation_speakers; ++k) spk.push_back(&bank[idx[k]]);
    Mixture mix = synth_conversation(synth, spk, data.conversation, rng);
    char id[32];
    std::snprintf(id, sizeof id, "%s%03zu",
                  i < data.calibration_conversations ? "cal" : "conv",
                  i < data.calibration_conversations ? i : i - data.calibration_conversations);
    mix.id = id;
    mix.annotation.recording = id;
    out.push_back(std::move(mix));
  }
  return out;
}

}  // namespace maskemb
