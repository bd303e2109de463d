// src/dataset.cpp

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

#include "maskemb/dataset.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "maskemb/error.hpp"

namespace maskemb {

namespace fs = std::filesystem;

Json to_json(const DatasetRecord &r) {
  return Json{{"id", r.id},
              {"role", r.role},
              {"features", r.features},
              {"rttm", r.rttm},
              {"target", r.target},
              {"bucket", r.bucket.empty() ? Json(nullptr) : Json(r.bucket)},
              {"overlap_ratio", r.overlap_ratio},
              {"frames", r.frames}};
}

DatasetRecord dataset_record_from_json(const Json &j) {
  DatasetRecord r;
  StrictReader s(j, "manifest record");
  s.get("id", r.id);
  s.get("role", r.role);
  s.get("features", r.features);
  s.get("rttm", r.rttm);
  s.get("target", r.target);
  if (const Json *b = s.child("bucket"); b && !b->is_null()) r.bucket = b->get<std::string>();
  s.get("overlap_ratio", r.overlap_ratio);
  s.get("frames", r.frames);
  s.finish();
  if (r.id.empty() || r.features.empty())
    throw FormatError("manifest record needs an id and a feature path");
  return r;
}

namespace {

DatasetRecord write_recording(const fs::path &dir, const Mixture &mix,
                              const std::string &role) {
  DatasetRecord r;
  r.id = mix.id;
  r.role = role;
  r.features = "features/" + mix.id + ".feat";
  r.rttm = "rttm/" + mix.id + ".rttm";
  r.target = mix.target_id;
  r.overlap_ratio = mix.overlap_ratio;
  r.frames = mix.frames();
  write_features((dir / r.features).string(), mix.features);
  std::ofstream out(dir / r.rttm);
  if (!out) throw FormatError((dir / r.rttm).string() + ": cannot open for writing");
  write_rttm(out, mix.annotation);
  return r;
}

}  // namespace

std::size_t write_dataset(const std::string &dir, const RunConfig &config) {
  const fs::path root(dir);
  fs::create_directories(root / "features");
  fs::create_directories(root / "rttm");
  const auto bank = eval_bank(config.data);
  const Synthesizer synth(config.data.synth);
  const TrialSet set = build_trial_set(bank, config.data.trials, config.data.trial_seed);

  const std::size_t n = set.trials.size();
  std::vector<DatasetRecord> enroll(n), test(n);
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < n; ++i) {
    try {
      const Trial &t = set.trials[i];
      enroll[i] = write_recording(root, set.enrollment(synth, bank, t), "enroll");
      test[i] = write_recording(root, set.test(synth, bank, t), "test");
      if (t.bucket) test[i].bucket = bucket_name(*t.bucket);
    } catch (...) {
#pragma omp critical(maskemb_dataset_error)
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);

  std::vector<DatasetRecord> records;
  std::ofstream trials(root / "trials.txt");
  for (std::size_t i = 0; i < n; ++i) {
    records.push_back(enroll[i]);
    records.push_back(test[i]);
    trials << (set.trials[i].same ? 1 : 0) << ' ' << enroll[i].features << ' '
           << test[i].id << '\n';
  }
  const auto conversations = make_conversations(config.data, synth, bank);
  for (std::size_t i = 0; i < conversations.size(); ++i)
    records.push_back(write_recording(
        root, conversations[i],
        i < config.data.calibration_conversations ? "calibration" : "conversation"));

  std::ofstream manifest(root / "manifest.jsonl");
  for (const DatasetRecord &r : records) manifest << to_json(r).dump() << '\n';
  if (!manifest || !trials) throw FormatError(dir + ": write failed");
  return records.size();
}

Dataset Dataset::load(const std::string &dir) {
  Dataset d;
  d.dir_ = dir;
  const fs::path root(dir);
  std::ifstream manifest(root / "manifest.jsonl");
  if (!manifest) throw FormatError(dir + ": no manifest.jsonl");
  std::string line;
  for (std::size_t no = 1; std::getline(manifest, line); ++no) {
    if (line.empty()) continue;
    DatasetRecord r;
    try {
      r = dataset_record_from_json(Json::parse(line));
    } catch (const nlohmann::json::exception &e) {
      throw FormatError("manifest.jsonl:" + std::to_string(no) + ": " + e.what());
    } catch (const ConfigError &e) {
      throw FormatError("manifest.jsonl:" + std::to_string(no) + ": " + e.what());
    }
    if (!d.by_id_.emplace(r.id, d.records_.size()).second)
      throw FormatError("manifest.jsonl: duplicate id '" + r.id + "'");
    d.by_path_.emplace(r.features, d.records_.size());
    d.records_.push_back(std::move(r));
  }
  std::ifstream trials(root / "trials.txt");
  if (trials) {
    for (std::size_t no = 1; std::getline(trials, line); ++no) {
      if (line.empty()) continue;
      std::istringstream is(line);
      std::string label, extra;
      TrialLine t;
      if (!(is >> label >> t.enroll_path >> t.test_id) || (is >> extra) ||
          (label != "0" && label != "1"))
        throw FormatError("trials.txt:" + std::to_string(no) +
                          ": expected '<0|1> <enroll-path> <test-id>'");
      t.same = label == "1";
      if (!d.by_id_.count(t.test_id))
        throw FormatError("trials.txt:" + std::to_string(no) + ": unknown test id '" +
                          t.test_id + "'");
      d.trials_.push_back(std::move(t));
    }
  }
  return d;
}

const DatasetRecord &Dataset::record(const std::string &id) const {
  auto it = by_id_.find(id);
  if (it == by_id_.end()) throw Error("dataset: unknown recording '" + id + "'");
  return records_[it->second];
}

Mixture Dataset::load(const DatasetRecord &r) const {
  Mixture m;
  m.id = r.id;
  m.features = read_features((fs::path(dir_) / r.features).string());
  if (m.frames() != r.frames)
    throw FormatError(r.features + ": frame count disagrees with the manifest");
  m.annotation.recording = r.id;
  if (!r.rttm.empty()) {
    std::ifstream in(fs::path(dir_) / r.rttm);
    if (!in) throw FormatError(r.rttm + ": cannot open");
    auto parsed = parse_rttm(in);
    if (auto it = parsed.find(r.id); it != parsed.end()) m.annotation = it->second;
  }
  m.annotation.recording = r.id;
  m.annotation.duration_s = static_cast<double>(m.frames()) * m.features.frame_shift_s;
  m.target_id = r.target;
  if (!r.target.empty() && !m.annotation.find(r.target)) m.annotation.add_speaker(r.target);
  m.annotation.validate();
  m.overlap_ratio = r.overlap_ratio;
  return m;
}

Mixture Dataset::load_enrollment(const std::string &path) const {
  if (auto it = by_path_.find(path); it != by_path_.end()) return load(records_[it->second]);
  Mixture m;
  m.id = fs::path(path).stem().string();
  m.features = read_features((fs::path(dir_) / path).string());
  m.annotation.recording = m.id;
  m.annotation.duration_s = static_cast<double>(m.frames()) * m.features.frame_shift_s;
  m.annotation.add_speaker("enroll").intervals.push_back({0.0, m.annotation.duration_s});
  m.target_id = "enroll";
  return m;
}

std::vector<Mixture> Dataset::load_role(const std::string &role) const {
  std::vector<Mixture> out;
  for (const DatasetRecord &r : records_)
    if (r.role == role) out.push_back(load(r));
  return out;
}

TrialInfo DatasetTrialSource::info(std::size_t i) const {
  const TrialLine &t = data_.trials().at(i);
  const DatasetRecord &r = data_.record(t.test_id);
  std::string id = t.test_id;
  if (id.size() > 5 && id.compare(id.size() - 5, 5, "-test") == 0) id.resize(id.size() - 5);
  return {id, t.same, r.bucket};
}

Mixture DatasetTrialSource::enrollment(std::size_t i) const {
  return data_.load_enrollment(data_.trials().at(i).enroll_path);
}

Mixture DatasetTrialSource::test(std::size_t i) const {
  return data_.load(data_.record(data_.trials().at(i).test_id));
}

}  // namespace maskemb
