// maskemb/dataset.hpp

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

// On-disk synthetic evaluation data: feature files, RTTM annotations, a
// line-delimited JSON manifest with one record per recording, and a trial
// list of `<label 0|1> <enroll-path> <test-manifest-id>` lines.
//
// Layout under the dataset directory:
//   features/<id>.feat  rttm/<id>.rttm  manifest.jsonl  trials.txt

#ifndef MASKEMB_DATASET_HPP_
#define MASKEMB_DATASET_HPP_

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "maskemb/config.hpp"
#include "maskemb/evaluation.hpp"
#include "maskemb/synth.hpp"

namespace maskemb {

struct DatasetRecord {
  std::string id;
  std::string role;      // "enroll", "test", "calibration" or "conversation"
  std::string features;  // relative to the dataset directory
  std::string rttm;
  std::string target;    // empty for conversations
  std::string bucket;    // empty unless bucketed
  double overlap_ratio = 0.0;
  std::size_t frames = 0;
};

Json to_json(const DatasetRecord &r);
DatasetRecord dataset_record_from_json(const Json &j);

struct TrialLine {
  bool same = false;
  std::string enroll_path;
  std::string test_id;
};

/// Renders the evaluation trials and conversations of `config` and writes
/// them under `dir`. Returns the number of records.
std::size_t write_dataset(const std::string &dir, const RunConfig &config);

class Dataset {
 public:
  /// Reads manifest.jsonl and trials.txt; throws FormatError on malformed
  /// lines or trials naming unknown recordings.
  static Dataset load(const std::string &dir);

  const std::vector<DatasetRecord> &records() const { return records_; }
  const std::vector<TrialLine> &trials() const { return trials_; }
  const DatasetRecord &record(const std::string &id) const;

  /// Features plus the RTTM annotation, target set from the record.
  Mixture load(const DatasetRecord &record) const;
  /// Enrollment by feature path: the manifest record when one lists that
  /// path, otherwise a single-speaker recording active throughout.
  Mixture load_enrollment(const std::string &path) const;
  /// Every record with the given role, in manifest order.
  std::vector<Mixture> load_role(const std::string &role) const;

 private:
  std::string dir_;
  std::vector<DatasetRecord> records_;
  std::map<std::string, std::size_t> by_id_;
  std::map<std::string, std::size_t> by_path_;
  std::vector<TrialLine> trials_;
};

class DatasetTrialSource : public TrialSource {
 public:
  explicit DatasetTrialSource(const Dataset &data) : data_(data) {}
  std::size_t size() const override { return data_.trials().size(); }
  TrialInfo info(std::size_t i) const override;
  Mixture enrollment(std::size_t i) const override;
  Mixture test(std::size_t i) const override;

 private:
  const Dataset &data_;
};

}  // namespace maskemb

#endif  // MASKEMB_DATASET_HPP_
