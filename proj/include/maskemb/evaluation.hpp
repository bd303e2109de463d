// maskemb/evaluation.hpp

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

// Verification scoring (cosine, EER, paired bootstrap), the non-target
// duration sweep, and a windowed diarization pipeline with DER scoring.

#ifndef MASKEMB_EVALUATION_HPP_
#define MASKEMB_EVALUATION_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "maskemb/encoders.hpp"
#include "maskemb/synth.hpp"

namespace maskemb {

/// a.b / (|a| |b|); throws Error on a zero vector or length mismatch.
double cosine_score(std::span<const double> a, std::span<const double> b);

struct TrialScore {
  std::string id;
  double score = 0.0;
  bool same = false;
  std::string bucket;  // empty when not bucketed
};

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
};

/// Thresholds at the midpoints between adjacent distinct scores plus one
/// below the minimum and one above the maximum; a trial is accepted when
/// score > threshold. The EER is where FRR - FAR first turns non-negative,
/// linearly interpolated between the two neighbouring operating points.
/// Throws Error unless both labels are present.
EerResult compute_eer(std::span<const TrialScore> scores);

struct BootstrapResult {
  double p_value = 1.0;
  double observed = 0.0;  // EER(A) - EER(B)
  std::size_t resamples = 0;
};

/// Paired bootstrap over trials. p is the fraction of resamples whose EER
/// difference does not share the observed sign (p = 1 when the observed
/// difference is zero). Single-class resamples are redrawn.
BootstrapResult bootstrap_compare(std::span<const TrialScore> a,
                                  std::span<const TrialScore> b,
                                  std::size_t n_resamples = 1000,
                                  std::uint64_t seed = 0);

// Trial sources -----------------------------------------------------------------

struct TrialInfo {
  std::string id;
  bool same = false;
  std::string bucket;
};

class TrialSource {
 public:
  virtual ~TrialSource() = default;
  virtual std::size_t size() const = 0;
  virtual TrialInfo info(std::size_t i) const = 0;
  virtual Mixture enrollment(std::size_t i) const = 0;
  virtual Mixture test(std::size_t i) const = 0;
};

/// Trials rendered on demand from a TrialSet.
class SynthTrialSource : public TrialSource {
 public:
  SynthTrialSource(const TrialSet &set, const Synthesizer &synth,
                   const std::vector<SyntheticSpeaker> &bank)
      : set_(set), synth_(synth), bank_(bank) {}
  std::size_t size() const override { return set_.trials.size(); }
  TrialInfo info(std::size_t i) const override;
  Mixture enrollment(std::size_t i) const override;
  Mixture test(std::size_t i) const override;

 private:
  const TrialSet &set_;
  const Synthesizer &synth_;
  const std::vector<SyntheticSpeaker> &bank_;
};

/// Embedding of a mixture's target speaker (masks used only by guided
/// models).
Tensor embed(Model &model, const Mixture &mix);

/// Scores every trial (or the listed subset) after applying `transform`
/// to each test mixture. Extraction runs in parallel; the output order is
/// the trial order.
std::vector<TrialScore> score_trials(
    Model &model, const TrialSource &source,
    const std::function<Mixture(const Mixture &)> &transform = {},
    const std::vector<std::size_t> &subset = {});

struct BucketEer {
  std::string bucket;  // "all" for the pooled row
  std::optional<EerResult> eer;  // empty when a label is missing
  std::size_t trials = 0;
};

/// Pooled row first, then one row per bucket in bucket order.
std::vector<BucketEer> eer_by_bucket(std::span<const TrialScore> scores);

void write_eer_csv(std::ostream &out, std::span<const BucketEer> rows);

// Non-target duration sweep -----------------------------------------------------

struct SweepCell {
  std::string bucket;  // "all" for the pooled rows
  double m = 1.0;
  std::optional<double> mean_cosine;  // over same-speaker trials
  std::optional<double> eer;
  std::size_t trials = 0;
};

struct SweepResult {
  std::vector<SweepCell> overall;    // one per m
  std::vector<SweepCell> by_bucket;  // bucket-major, then m
  std::vector<std::size_t> eligible;
};

/// Rescales every eligible test mixture (one with non-target-only frames)
/// for each m, re-extracts and re-scores. Cells without eligible trials or
/// without both labels are empty.
SweepResult sweep_nontarget_duration(Model &model, const TrialSource &source,
                                     std::span<const double> m_values);

/// Columns m, mean_cosine, eer; one row per m. Empty cells print "n/a".
void write_sweep_csv(std::ostream &out, const SweepResult &r);
/// Columns bucket, m, mean_cosine, eer, trials.
void write_sweep_bucket_csv(std::ostream &out, const SweepResult &r);

// Diarization -------------------------------------------------------------------

struct DiarConfig {
  double window_s = 10.0;
  double shift_s = 1.0;
  double ahc_threshold = 0.6;  // cosine distance
  std::size_t min_frames = 1;  // local speakers with fewer frames are dropped
};

struct DiarHypothesis {
  std::size_t clusters = 0;
  ActivityAnnotation turns;  // speaker ids "0", "1", ...
};

/// Average-linkage agglomerative clustering on cosine distance; merges
/// while the closest pair is below `threshold`. Labels are contiguous in
/// order of first appearance.
std::vector<std::size_t> ahc_cluster(const std::vector<std::vector<double>> &items,
                                     double threshold);

/// Oracle local diarization from `recording.annotation`, one embedding per
/// window and local speaker (alone frames for unguided models, full masks
/// for guided ones), clustering, and frame-wise stitching. After clustering,
/// the local speakers of each window are assigned to distinct clusters by
/// maximum total cosine to the cluster centroids.
DiarHypothesis run_diarization(Model &model, const Mixture &recording,
                               const DiarConfig &config);

struct DerResult {
  double der = 0.0;
  double missed = 0.0;  // seconds
  double false_alarm = 0.0;
  double confusion = 0.0;
  double reference = 0.0;  // total reference speech, seconds
};

/// No collar, overlap scored; the speaker mapping maximizes total overlap.
/// Throws Error when the reference has no speech.
DerResult compute_der(const ActivityAnnotation &reference,
                      const ActivityAnnotation &hypothesis);

/// Maximum-weight one-to-one assignment: result[i] is the column of row i
/// or -1.
std::vector<long> max_weight_assignment(const std::vector<std::vector<double>> &w);

/// Threshold in `candidates` with the lowest mean DER over `recordings`;
/// among ties the middle of the best run is taken.
double calibrate_ahc_threshold(Model &model, const std::vector<Mixture> &recordings,
                               DiarConfig config, std::span<const double> candidates);

}  // namespace maskemb

#endif  // MASKEMB_EVALUATION_HPP_
