// tools/maskemb.cpp

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

// maskemb: synthesis, training, evaluation and self-checks from one binary.
//
// Every command writes a run directory runs/<timestamp>-<tag>/ holding
// config.json (the effective configuration), manifest.json (command, seed,
// version, wall time, status) and results/. Training adds metrics.log and
// checkpoints/. Exit status: 0 on success, 1 on a failed check or runtime
// error, 2 on a usage or configuration error.

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "maskemb/checks.hpp"
#include "maskemb/config.hpp"
#include "maskemb/dataset.hpp"
#include "maskemb/encoders.hpp"
#include "maskemb/evaluation.hpp"
#include "maskemb/kernels.hpp"
#include "maskemb/training.hpp"

#ifndef MASKEMB_VERSION
#define MASKEMB_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using namespace maskemb;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "runs";
  std::string run_dir;
  std::string tag;
  int threads = 0;
  std::string checkpoint;
  std::string compare;
  std::string data;
  std::string preset;
  std::string family;
  std::vector<double> m;
  std::size_t cases = 100;
  std::size_t mixtures = 50;
};

std::string utc_stamp(const char *format) {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, format);
  return os.str();
}

void write_json(const fs::path &path, const Json &j) {
  std::ofstream out(path);
  out << j.dump(2) << '\n';
  if (!out) throw FormatError(path.string() + ": write failed");
}

class Run {
 public:
  Run(const std::string &command, const Options &opt, const RunConfig &config,
      int argc, char **argv)
      : start_(std::chrono::steady_clock::now()) {
    if (!opt.run_dir.empty()) {
      root_ = opt.run_dir;
    } else {
      const std::string base =
          utc_stamp("%Y%m%d-%H%M%S") + "-" + (opt.tag.empty() ? command : opt.tag);
      root_ = fs::path(opt.out) / base;
      for (int k = 2; fs::exists(root_); ++k)
        root_ = fs::path(opt.out) / (base + "-" + std::to_string(k));
    }
    fs::create_directories(root_ / "results");
    write_json(root_ / "config.json", to_json(config));
    Json args = Json::array();
    for (int i = 0; i < argc; ++i) args.push_back(argv[i]);
    manifest_ = Json{{"command", command},
                     {"argv", args},
                     {"seed", config.seed},
                     {"version", MASKEMB_VERSION},
                     {"started_utc", utc_stamp("%Y-%m-%dT%H:%M:%SZ")},
                     {"threads", kernels::num_threads()},
                     {"config", "config.json"},
                     {"status", "running"}};
    write_json(root_ / "manifest.json", manifest_);
  }

  const fs::path &root() const { return root_; }
  fs::path results() const { return root_ / "results"; }
  Json &summary() { return manifest_["summary"]; }

  void finish(const std::string &status) {
    manifest_["status"] = status;
    manifest_["wall_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    write_json(root_ / "manifest.json", manifest_);
    std::cout << "run directory: " << root_.string() << '\n';
  }

 private:
  fs::path root_;
  Json manifest_;
  std::chrono::steady_clock::time_point start_;
};

RunConfig load_config(const Options &opt) {
  RunConfig c = load_run_config(opt.config, me_environment());
  if (opt.seed) c.seed = *opt.seed;
  if (!opt.family.empty() || !opt.preset.empty()) {
    const Family family = opt.family.empty() ? c.model.family : parse_family(opt.family);
    if (!opt.preset.empty()) {
      const ModelConfig p = ModelConfig::preset(opt.preset, family);
      c.model.guide_input = p.guide_input;
      c.model.guide_pooling = p.guide_pooling;
      c.model.guide_se_or_cam = p.guide_se_or_cam;
      c.model.guide_bn = p.guide_bn;
    }
    c.model.family = family;
  }
  if (!opt.m.empty()) c.evaluation.m_values = opt.m;
  c.sync();
  c.validate();
  return c;
}

Model load_model(const Options &opt, const RunConfig &config) {
  if (opt.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  Model model = load_checkpoint(opt.checkpoint);
  if (model.config.input_dim != config.data.synth.n_mels)
    throw ConfigError("checkpoint expects " + std::to_string(model.config.input_dim) +
                      " feature bins, data has " +
                      std::to_string(config.data.synth.n_mels));
  return model;
}

// Trial source from --data, or rendered from the configuration.
struct Trials {
  std::optional<Dataset> dataset;
  std::vector<SyntheticSpeaker> bank;
  std::optional<Synthesizer> synth;
  TrialSet set;
  std::unique_ptr<TrialSource> source;

  Trials(const Options &opt, const RunConfig &config) {
    if (!opt.data.empty()) {
      dataset = Dataset::load(opt.data);
      source = std::make_unique<DatasetTrialSource>(*dataset);
    } else {
      bank = eval_bank(config.data);
      synth.emplace(config.data.synth);
      set = build_trial_set(bank, config.data.trials, config.data.trial_seed);
      source = std::make_unique<SynthTrialSource>(set, *synth, bank);
    }
    if (source->size() == 0) throw ConfigError("no trials to score");
  }
};

void write_scores(const fs::path &path, const std::vector<TrialScore> &scores) {
  std::ofstream out(path);
  out << "id,score,label,bucket\n" << std::setprecision(10);
  for (const TrialScore &s : scores)
    out << s.id << ',' << s.score << ',' << (s.same ? 1 : 0) << ",\"" << s.bucket << "\"\n";
}

int cmd_synth(const Options &opt, int argc, char **argv) {
  const RunConfig config = load_config(opt);
  Run run("synth", opt, config, argc, argv);
  const fs::path dir = run.results() / "dataset";
  const std::size_t n = write_dataset(dir.string(), config);
  run.summary() = Json{{"dataset", "results/dataset"}, {"records", n},
                       {"trials", config.data.trials.n_trials}};
  std::cout << "wrote " << n << " recordings to " << dir.string() << '\n';
  run.finish("ok");
  return 0;
}

int cmd_train(const Options &opt, int argc, char **argv) {
  const RunConfig config = load_config(opt);
  Run run("train", opt, config, argc, argv);
  const TrainResult r = train_run(config.training, config.seed, run.root().string(), true);
  Json summary{{"final_accuracy", r.final_accuracy},
               {"steps", r.metrics.size()},
               {"checkpoints", r.checkpoints}};
  write_json(run.results() / "train.json", summary);
  run.summary() = summary;
  run.finish("ok");
  return 0;
}

int cmd_eval_verify(const Options &opt, int argc, char **argv) {
  const RunConfig config = load_config(opt);
  Model model = load_model(opt, config);
  Trials trials(opt, config);
  Run run("eval-verify", opt, config, argc, argv);
  const auto scores = score_trials(model, *trials.source);
  write_scores(run.results() / "scores.csv", scores);
  const auto rows = eer_by_bucket(scores);
  {
    std::ofstream out(run.results() / "eer.csv");
    write_eer_csv(out, rows);
  }
  write_eer_csv(std::cout, rows);
  Json summary{{"trials", scores.size()}};
  for (const BucketEer &row : rows)
    summary["eer"][row.bucket] = row.eer ? Json(row.eer->eer) : Json(nullptr);
  if (!opt.compare.empty()) {
    Options other = opt;
    other.checkpoint = opt.compare;
    Model baseline = load_model(other, config);
    const auto b = score_trials(baseline, *trials.source);
    write_scores(run.results() / "scores_compare.csv", b);
    const BootstrapResult boot =
        bootstrap_compare(scores, b, config.evaluation.bootstrap_resamples,
                          config.evaluation.bootstrap_seed);
    const Json bj{{"system_a", opt.checkpoint},
                  {"system_b", opt.compare},
                  {"observed_eer_difference", boot.observed},
                  {"p_value", boot.p_value},
                  {"resamples", boot.resamples},
                  {"seed", config.evaluation.bootstrap_seed}};
    write_json(run.results() / "bootstrap.json", bj);
    summary["bootstrap"] = bj;
    std::cout << "bootstrap: EER(a) - EER(b) = " << boot.observed
              << ", p = " << boot.p_value << '\n';
  }
  run.summary() = summary;
  run.finish("ok");
  return 0;
}

int cmd_sweep(const Options &opt, int argc, char **argv) {
  const RunConfig config = load_config(opt);
  Model model = load_model(opt, config);
  Trials trials(opt, config);
  Run run("sweep-m", opt, config, argc, argv);
  const SweepResult r =
      sweep_nontarget_duration(model, *trials.source, config.evaluation.m_values);
  {
    std::ofstream out(run.results() / "sweep.csv");
    write_sweep_csv(out, r);
    std::ofstream by(run.results() / "sweep_by_bucket.csv");
    write_sweep_bucket_csv(by, r);
  }
  write_sweep_csv(std::cout, r);
  run.summary() = Json{{"eligible_trials", r.eligible.size()},
                       {"m_values", config.evaluation.m_values}};
  run.finish("ok");
  return 0;
}

int cmd_eval_diar(const Options &opt, int argc, char **argv) {
  const RunConfig config = load_config(opt);
  Model model = load_model(opt, config);
  std::vector<Mixture> calibration, test;
  if (!opt.data.empty()) {
    const Dataset d = Dataset::load(opt.data);
    calibration = d.load_role("calibration");
    test = d.load_role("conversation");
  } else {
    const auto bank = eval_bank(config.data);
    const Synthesizer synth(config.data.synth);
    auto all = make_conversations(config.data, synth, bank);
    const auto split = all.begin() +
                       static_cast<std::ptrdiff_t>(config.data.calibration_conversations);
    calibration.assign(all.begin(), split);
    test.assign(split, all.end());
  }
  if (test.empty()) throw ConfigError("no conversations to diarize");
  Run run("eval-diar", opt, config, argc, argv);
  DiarConfig diar = config.evaluation.diar;
  if (config.evaluation.calibrate_threshold) {
    if (calibration.empty()) throw ConfigError("no calibration conversations");
    diar.ahc_threshold = calibrate_ahc_threshold(model, calibration, diar,
                                                 config.evaluation.threshold_candidates);
  }
  fs::create_directories(run.results() / "hyp");
  Json recs = Json::array();
  DerResult total;
  for (const Mixture &rec : test) {
    const DiarHypothesis hyp = run_diarization(model, rec, diar);
    ActivityAnnotation turns = hyp.turns;
    turns.recording = rec.id;
    std::ofstream out(run.results() / "hyp" / (rec.id + ".rttm"));
    write_rttm(out, turns);
    const DerResult d = compute_der(rec.annotation, turns);
    total.missed += d.missed;
    total.false_alarm += d.false_alarm;
    total.confusion += d.confusion;
    total.reference += d.reference;
    recs.push_back(Json{{"id", rec.id}, {"der", d.der}, {"missed", d.missed},
                        {"false_alarm", d.false_alarm}, {"confusion", d.confusion},
                        {"reference", d.reference}, {"clusters", hyp.clusters},
                        {"speakers", rec.annotation.speakers.size()}});
  }
  total.der = (total.missed + total.false_alarm + total.confusion) / total.reference;
  const Json summary{{"ahc_threshold", diar.ahc_threshold},
                     {"total", {{"der", total.der}, {"missed", total.missed},
                                {"false_alarm", total.false_alarm},
                                {"confusion", total.confusion},
                                {"reference", total.reference}}},
                     {"recordings", recs}};
  write_json(run.results() / "der.json", summary);
  std::cout << "threshold " << diar.ahc_threshold << "  DER " << total.der
            << "  missed " << total.missed << "s  false alarm " << total.false_alarm
            << "s  confusion " << total.confusion << "s\n";
  run.summary() = summary["total"];
  run.finish("ok");
  return 0;
}

// Prints one line per property and returns the failing property names.
std::vector<std::string> report(const std::vector<CheckResult> &results, Json &out) {
  std::vector<std::string> failed;
  for (const CheckResult &r : results) {
    std::cout << (r.passed() ? "PASS " : "FAIL ") << std::left << std::setw(32)
              << r.property << " cases " << r.cases << "  worst " << r.worst
              << "  tolerance " << r.tolerance << "  " << std::fixed
              << std::setprecision(2) << r.seconds << "s" << std::defaultfloat
              << std::setprecision(6);
    if (!r.passed()) std::cout << "  " << r.detail;
    std::cout << '\n';
    if (!r.passed()) failed.push_back(r.property);
    out.push_back(to_json(r));
  }
  return failed;
}

int finish_checks(Run &run, const std::string &file, const Json &results,
                  const std::vector<std::string> &failed) {
  write_json(run.results() / file, results);
  run.summary() = Json{{"failed", failed}};
  run.finish(failed.empty() ? "ok" : "failed");
  for (const std::string &p : failed) std::cerr << "failed property: " << p << '\n';
  return failed.empty() ? 0 : kExitFailure;
}

int cmd_gradcheck(const Options &opt, int argc, char **argv) {
  const RunConfig config = load_config(opt);
  Run run("gradcheck", opt, config, argc, argv);
  Json results = Json::array();
  const auto failed = report(gradient_suite(opt.cases, config.seed), results);
  return finish_checks(run, "gradcheck.json", results, failed);
}

int cmd_selfcheck(const Options &opt, int argc, char **argv) {
  const RunConfig config = load_config(opt);
  Run run("selfcheck", opt, config, argc, argv);
  Json results = Json::array();
  auto failed = report(reduction_suite(opt.cases, config.seed), results);
  for (const auto &f : report(masked_independence_suite(opt.cases, config.seed + 1), results))
    failed.push_back(f);
  for (const auto &f : report({m_invariance_check(opt.mixtures, config.seed + 2,
                                                  config.evaluation.m_values)},
                              results))
    failed.push_back(f);
  return finish_checks(run, "selfcheck.json", results, failed);
}

}  // namespace

int main(int argc, char **argv) {
  kernels::tune_allocator();
  CLI::App app{"maskemb: activity-guided speaker embeddings on synthetic mixtures"};
  app.require_subcommand(1);
  Options opt;

  auto common = [&](CLI::App *sub) {
    sub->add_option("--config", opt.config, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--seed", opt.seed, "Run seed (overrides the config)");
    sub->add_option("--out", opt.out, "Parent directory of run directories")
        ->capture_default_str();
    sub->add_option("--run-dir", opt.run_dir, "Exact run directory to use");
    sub->add_option("--tag", opt.tag, "Run directory suffix (default: command)");
    sub->add_option("--threads", opt.threads, "Worker thread cap (0: all)")
        ->check(CLI::NonNegativeNumber);
  };
  auto model_opts = [&](CLI::App *sub, bool required) {
    auto *o = sub->add_option("--checkpoint", opt.checkpoint, "Model checkpoint");
    o->check(CLI::ExistingFile);
    if (required) o->required();
    sub->add_option("--data", opt.data, "Dataset directory written by `synth`")
        ->check(CLI::ExistingDirectory);
  };

  auto *synth = app.add_subcommand("synth", "Render the evaluation dataset to disk");
  common(synth);
  auto *train = app.add_subcommand("train", "Train a speaker embedding extractor");
  common(train);
  train->add_option("--preset", opt.preset,
                    "baseline | guided | proposed | no-guided-bn | no-guided-se");
  train->add_option("--family", opt.family, "ecapa-mini | campp-mini");
  auto *verify = app.add_subcommand("eval-verify", "Verification EER per overlap bucket");
  common(verify);
  model_opts(verify, true);
  verify->add_option("--compare", opt.compare, "Second checkpoint for a paired bootstrap")
      ->check(CLI::ExistingFile);
  auto *diar = app.add_subcommand("eval-diar", "Diarization DER with oracle local activity");
  common(diar);
  model_opts(diar, true);
  auto *sweep = app.add_subcommand("sweep-m", "Non-target-only duration sweep");
  common(sweep);
  model_opts(sweep, true);
  sweep->add_option("--m", opt.m, "Comma-separated scale factors")->delimiter(',');
  auto *grad = app.add_subcommand("gradcheck", "Finite-difference gradient suites");
  common(grad);
  grad->add_option("--cases", opt.cases, "Randomized cases per property")
      ->capture_default_str();
  auto *self = app.add_subcommand("selfcheck", "Reduction and invariance suites");
  common(self);
  self->add_option("--cases", opt.cases, "Randomized cases per layer property")
      ->capture_default_str();
  self->add_option("--mixtures", opt.mixtures, "Mixtures for the invariance check")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    app.exit(e);
    std::cerr << app.help();
    return kExitUsage;
  }

  try {
    kernels::set_num_threads(opt.threads);
    if (synth->parsed()) return cmd_synth(opt, argc, argv);
    if (train->parsed()) return cmd_train(opt, argc, argv);
    if (verify->parsed()) return cmd_eval_verify(opt, argc, argv);
    if (diar->parsed()) return cmd_eval_diar(opt, argc, argv);
    if (sweep->parsed()) return cmd_sweep(opt, argc, argv);
    if (grad->parsed()) return cmd_gradcheck(opt, argc, argv);
    if (self->parsed()) return cmd_selfcheck(opt, argc, argv);
  } catch (const ConfigError &e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}
