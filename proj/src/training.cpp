// src/training.cpp

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

#include "maskemb/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>

#include "maskemb/error.hpp"
#include "maskemb/ops.hpp"

namespace maskemb {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

void check_finite(const Tensor &t, const char *what) {
  for (double v : t.values())
    if (!std::isfinite(v)) throw NumericError(std::string(what) + ": non-finite value");
}

}  // namespace

// AAM head --------------------------------------------------------------------

AAMHead AAMHead::init(std::size_t n_speakers, std::size_t embedding_dim,
                      std::uint64_t seed, double margin, double scale) {
  Rng rng(seed);
  AAMHead h;
  const double bound = std::sqrt(6.0 / static_cast<double>(n_speakers + embedding_dim));
  h.weight = uniform_tensor(rng, {n_speakers, embedding_dim}, bound);
  h.margin = margin;
  h.scale = scale;
  h.validate();
  return h;
}

void AAMHead::validate() const {
  if (!weight.defined() || weight.rank() != 2)
    throw ShapeError("AAMHead", "weight must be [n_speakers, E]");
  if (!(margin >= 0.0 && margin < std::numbers::pi / 2))
    throw ConfigError("AAMHead: margin must be in [0, pi/2)");
  if (!(scale > 0.0)) throw ConfigError("AAMHead: scale must be > 0");
}

namespace {

Tensor cosines(const Tensor &embeddings, const AAMHead &head) {
  if (embeddings.rank() != 2 || embeddings.dim(1) != head.weight.dim(1))
    throw ShapeError("aam_softmax_loss", "embedding dim", head.weight.dim(1),
                     embeddings.rank() == 2 ? embeddings.dim(1) : 0);
  check_finite(embeddings, "aam_softmax_loss: embeddings");
  return linear(l2_normalize_rows(embeddings), l2_normalize_rows(head.weight));
}

}  // namespace

Tensor aam_softmax_loss(const Tensor &embeddings,
                        std::span<const std::size_t> labels, const AAMHead &head) {
  head.validate();
  const Tensor cos = cosines(embeddings, head);
  return cross_entropy(aam_logits(cos, labels, head.margin, head.scale), labels);
}

double aam_accuracy(const Tensor &embeddings, std::span<const std::size_t> labels,
                    const AAMHead &head) {
  NoGradScope no_grad;
  const Tensor cos = cosines(embeddings, head);
  const std::size_t B = cos.dim(0), N = cos.dim(1);
  if (labels.size() != B) throw ShapeError("aam_accuracy", "labels", B, labels.size());
  const auto v = cos.values();
  std::size_t hits = 0;
  for (std::size_t b = 0; b < B; ++b) {
    const auto row = v.subspan(b * N, N);
    hits += static_cast<std::size_t>(std::max_element(row.begin(), row.end()) -
                                     row.begin()) == labels[b];
  }
  return B ? static_cast<double>(hits) / static_cast<double>(B) : 0.0;
}

// Schedule --------------------------------------------------------------------

void LRSchedule::validate(std::size_t iters_per_epoch) const {
  if (!(base_lr > 0.0) || !(max_lr >= base_lr))
    throw ConfigError("schedule: need 0 < base_lr <= max_lr");
  if (iters_per_epoch < 1 || cycle_epochs < 1)
    throw ConfigError("schedule: iters_per_epoch and cycle_epochs must be >= 1");
  if (warmup_iters + 1 >= cycle_epochs * iters_per_epoch)
    throw ConfigError("schedule: warmup_iters must be shorter than a cycle minus one");
}

double cyclical_lr(std::size_t iteration, std::size_t iters_per_epoch,
                   const LRSchedule &s) {
  s.validate(iters_per_epoch);
  const std::size_t cycle = s.cycle_epochs * iters_per_epoch;
  const std::size_t pos = iteration % cycle;
  const double span = s.max_lr - s.base_lr;
  if (pos < s.warmup_iters)
    return s.base_lr + span * static_cast<double>(pos) /
                           static_cast<double>(s.warmup_iters);
  const double phase = static_cast<double>(pos - s.warmup_iters) /
                       static_cast<double>(cycle - s.warmup_iters - 1);
  return s.base_lr + span * 0.5 * (1.0 + std::cos(std::numbers::pi * phase));
}

// Adam ------------------------------------------------------------------------

bool adam_step(std::vector<NamedTensor> &params, AdamState &state, double lr,
               const AdamConfig &c, std::string *why) {
  if (state.m.empty()) {
    for (const auto &p : params) {
      state.m.emplace_back(p.second.numel(), 0.0);
      state.v.emplace_back(p.second.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size())
    throw ShapeError("adam_step", "parameter count", state.m.size(), params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i].second.numel())
      throw ShapeError("adam_step", "parameter '" + params[i].first + "' size changed");
    for (double g : params[i].second.grad())
      if (!std::isfinite(g)) {
        if (why) *why = params[i].first;
        return false;
      }
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::vector<double> g = params[i].second.grad();
    std::span<double> x = params[i].second.mutable_values();
    std::vector<double> &m = state.m[i], &v = state.v[i];
    for (std::size_t k = 0; k < x.size(); ++k) {
      m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
      v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
      x[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + c.eps);
    }
  }
  return true;
}

double grad_norm(const std::vector<NamedTensor> &params) {
  double s = 0.0;
  for (const auto &p : params)
    for (double g : p.second.grad()) s += g * g;
  return std::sqrt(s);
}

// Config ----------------------------------------------------------------------

void TrainConfig::validate() const {
  model.validate();
  synth.validate();
  if (model.input_dim != synth.n_mels)
    throw ConfigError("training: model.input_dim must equal synth.n_mels");
  if (n_speakers < speakers_per_mixture || n_speakers < 2)
    throw ConfigError("training: too few speakers");
  if (speakers_per_mixture < 1 || speakers_per_mixture > 4)
    throw ConfigError("training: speakers_per_mixture must be 1 to 4");
  if (batch_mixtures < 1 || frames < 2 || epochs < 1)
    throw ConfigError("training: batch_mixtures, frames and epochs must be positive");
  if (!(max_grad_norm >= 0.0)) throw ConfigError("training: max_grad_norm must be >= 0");
  schedule.validate(steps_per_epoch);
}

Json to_json(const TrainConfig &c) {
  return Json{{"model", to_json(c.model)},
              {"synth", to_json(c.synth)},
              {"n_speakers", c.n_speakers},
              {"speaker_seed", c.speaker_seed},
              {"batch_mixtures", c.batch_mixtures},
              {"speakers_per_mixture", c.speakers_per_mixture},
              {"frames", c.frames},
              {"clip_min_frames", c.mixture.clip_min_frames},
              {"clip_max_frames", c.mixture.clip_max_frames},
              {"shift_min_frames", c.mixture.shift_min_frames},
              {"steps_per_epoch", c.steps_per_epoch},
              {"epochs", c.epochs},
              {"base_lr", c.schedule.base_lr},
              {"max_lr", c.schedule.max_lr},
              {"cycle_epochs", c.schedule.cycle_epochs},
              {"warmup_iters", c.schedule.warmup_iters},
              {"adam_beta1", c.adam.beta1},
              {"adam_beta2", c.adam.beta2},
              {"adam_eps", c.adam.eps},
              {"margin", c.margin},
              {"scale", c.scale},
              {"max_grad_norm", c.max_grad_norm}};
}

TrainConfig train_config_from_json(const Json &j, TrainConfig c) {
  StrictReader r(j, "training");
  if (const Json *m = r.child("model")) c.model = model_config_from_json(*m, c.model);
  if (const Json *s = r.child("synth")) c.synth = synth_config_from_json(*s, c.synth);
  r.get("n_speakers", c.n_speakers);
  r.get("speaker_seed", c.speaker_seed);
  r.get("batch_mixtures", c.batch_mixtures);
  r.get("speakers_per_mixture", c.speakers_per_mixture);
  r.get("frames", c.frames);
  r.get("clip_min_frames", c.mixture.clip_min_frames);
  r.get("clip_max_frames", c.mixture.clip_max_frames);
  r.get("shift_min_frames", c.mixture.shift_min_frames);
  r.get("steps_per_epoch", c.steps_per_epoch);
  r.get("epochs", c.epochs);
  r.get("base_lr", c.schedule.base_lr);
  r.get("max_lr", c.schedule.max_lr);
  r.get("cycle_epochs", c.schedule.cycle_epochs);
  r.get("warmup_iters", c.schedule.warmup_iters);
  r.get("adam_beta1", c.adam.beta1);
  r.get("adam_beta2", c.adam.beta2);
  r.get("adam_eps", c.adam.eps);
  r.get("margin", c.margin);
  r.get("scale", c.scale);
  r.get("max_grad_norm", c.max_grad_norm);
  r.finish();
  c.validate();
  return c;
}

Json to_json(const StepMetrics &m) {
  return Json{{"step", m.step},         {"epoch", m.epoch},
              {"lr", m.lr},             {"loss", m.loss},
              {"grad_norm", m.grad_norm}, {"accuracy", m.accuracy},
              {"skipped", m.skipped}};
}

// Data ------------------------------------------------------------------------

std::vector<SyntheticSpeaker> training_bank(const TrainConfig &config) {
  return synth_speaker_bank(config.speaker_seed, config.n_speakers, config.synth);
}

TrainBatch make_train_batch(const TrainConfig &config, const Synthesizer &synth,
                            const std::vector<SyntheticSpeaker> &bank,
                            std::uint64_t seed, std::size_t step) {
  Rng rng(splitmix64(seed ^ splitmix64(step + 1)));
  const bool guided = config.model.any_guided();
  const std::size_t M = config.batch_mixtures, S = config.speakers_per_mixture;
  const std::size_t B = M * S;

  // Draw speakers and per-mixture streams up front, then render in parallel.
  std::vector<std::vector<std::size_t>> who(guided ? M : B);
  for (auto &w : who) {
    const std::size_t k = guided ? S : 1;
    while (w.size() < k) {
      const std::size_t s = rng.index(bank.size());
      if (std::find(w.begin(), w.end(), s) == w.end()) w.push_back(s);
    }
  }
  std::vector<std::uint64_t> seeds(who.size());
  for (auto &s : seeds) s = rng.next();
  std::vector<Mixture> mixes(who.size());
#pragma omp parallel for schedule(static)
  for (long i = 0; i < static_cast<long>(who.size()); ++i) {
    Rng r(seeds[i]);
    std::vector<const SyntheticSpeaker *> spk;
    for (std::size_t s : who[i]) spk.push_back(&bank[s]);
    mixes[i] = guided ? synth_training_mixture(synth, spk, config.frames, config.mixture, r)
                      : synth.single(*spk[0], config.frames, r);
  }

  TrainBatch batch;
  std::vector<const Tensor *> items;
  for (std::size_t i = 0; i < mixes.size(); ++i) {
    for (std::size_t j = 0; j < who[i].size(); ++j) {
      items.push_back(&mixes[i].features.frames);
      batch.masks.push_back(mixes[i].mask_for(bank[who[i][j]].id));
      batch.labels.push_back(who[i][j]);
    }
  }
  batch.features = stack_features(items);
  return batch;
}

// Loop ------------------------------------------------------------------------

TrainResult train_run(const TrainConfig &config, std::uint64_t seed,
                      const std::string &out_dir, bool verbose) {
  namespace fs = std::filesystem;
  config.validate();
  const std::vector<SyntheticSpeaker> bank = training_bank(config);
  const Synthesizer synth(config.synth);
  TrainResult result{build_model(config.model, seed),
                     AAMHead::init(config.n_speakers, config.model.embedding_dim,
                                   splitmix64(seed ^ 0xaa11ULL), config.margin,
                                   config.scale),
                     {}, {}, 0.0};
  Model &model = result.model;
  std::vector<NamedTensor> params = model.parameters();
  params.emplace_back("head.weight", result.head.weight);
  AdamState adam;

  std::ofstream log;
  fs::path ckpt_dir;
  if (!out_dir.empty()) {
    ckpt_dir = fs::path(out_dir) / "checkpoints";
    fs::create_directories(ckpt_dir);
    log.open(fs::path(out_dir) / "metrics.log");
    if (!log) throw Error("train_run: cannot write " + out_dir + "/metrics.log");
  }
  auto save = [&](const std::string &name, std::size_t step) {
    if (out_dir.empty()) return;
    const std::string path = (ckpt_dir / name).string();
    Json extra{{"step", step}, {"train_seed", seed}, {"training", to_json(config)}};
    save_checkpoint(path, model, extra.dump());
    result.checkpoints.push_back(path);
  };

  const bool guided = config.model.any_guided();
  const std::size_t total = config.total_steps();
  const std::size_t cycle = config.schedule.cycle_epochs * config.steps_per_epoch;
  const auto start = std::chrono::steady_clock::now();
  double epoch_acc = 0.0;
  for (std::size_t step = 0; step < total; ++step) {
    const TrainBatch batch = make_train_batch(config, synth, bank, seed, step);
    StepMetrics m;
    m.step = step;
    m.epoch = step / config.steps_per_epoch;
    m.lr = cyclical_lr(step, config.steps_per_epoch, config.schedule);
    for (auto &p : params) p.second.zero_grad();

    Tensor emb;
    {
      Tape tape;
      TapeScope scope(tape);
      emb = model.forward(batch.features, guided ? &batch.masks : nullptr,
                          BNMode::kTrain);
      Tensor loss;
      try {
        loss = aam_softmax_loss(emb, batch.labels, result.head);
      } catch (const NumericError &) {
      }
      m.loss = loss.defined() ? loss.item() : std::nan("");
      if (!std::isfinite(m.loss)) {
        if (!out_dir.empty()) {
          const fs::path good = ckpt_dir / "last_good.ckpt";
          if (!result.checkpoints.empty()) {
            fs::copy_file(result.checkpoints.back(), good,
                          fs::copy_options::overwrite_existing);
          } else {
            Model initial = build_model(config.model, seed);
            save_checkpoint(good.string(), initial);
          }
        }
        throw NumericError("train_run: loss diverged at step " + std::to_string(step));
      }
      tape.backward(loss);
    }
    m.grad_norm = grad_norm(params);
    if (config.max_grad_norm > 0.0 && m.grad_norm > config.max_grad_norm) {
      const double f = config.max_grad_norm / m.grad_norm;
      for (auto &p : params)
        for (double &g : p.second.mutable_grad()) g *= f;
    }
    std::string why;
    m.skipped = !adam_step(params, adam, m.lr, config.adam, &why);
    if (m.skipped && verbose)
      std::cerr << "step " << step << ": non-finite gradient in " << why
                << ", update skipped\n";
    m.accuracy = aam_accuracy(emb.detach(), batch.labels, result.head);
    result.metrics.push_back(m);
    if (log) log << to_json(m).dump() << '\n';

    if (m.epoch + 1 == config.epochs) epoch_acc += m.accuracy;
    if ((step + 1) % config.steps_per_epoch == 0 && verbose) {
      double loss = 0.0, acc = 0.0;
      for (std::size_t k = step + 1 - config.steps_per_epoch; k <= step; ++k) {
        loss += result.metrics[k].loss;
        acc += result.metrics[k].accuracy;
      }
      const double secs = std::chrono::duration<double>(
                              std::chrono::steady_clock::now() - start).count();
      std::fprintf(stderr, "epoch %zu  loss %.4f  acc %.3f  lr %.2e  %.0fs\n",
                   m.epoch + 1, loss / config.steps_per_epoch,
                   acc / config.steps_per_epoch, m.lr, secs);
    }
    if ((step + 1) % cycle == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "cycle-%03zu.ckpt", (step + 1) / cycle);
      save(name, step + 1);
    }
  }
  save("final.ckpt", total);
  result.final_accuracy = epoch_acc / static_cast<double>(config.steps_per_epoch);
  return result;
}

}  // namespace maskemb
