// maskemb/checks.hpp

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

// Randomized property suites behind the `gradcheck` and `selfcheck`
// commands: guided-layer reduction to the standard form, independence from
// masked-out frames, finite-difference gradients, and invariance of the
// pointwise proposed model to non-target-only duration.

#ifndef MASKEMB_CHECKS_HPP_
#define MASKEMB_CHECKS_HPP_

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "maskemb/json_util.hpp"

namespace maskemb {

struct CheckResult {
  std::string property;  // e.g. "reduction.se"
  std::size_t cases = 0;
  double worst = 0.0;      // largest observed deviation
  double tolerance = 0.0;  // pass when worst <= tolerance
  double seconds = 0.0;
  std::string detail;      // first failing case, if any

  bool passed() const { return worst <= tolerance && detail.empty(); }
};

Json to_json(const CheckResult &r);

/// Guided forms with all-ones masks against the standard forms (SE, CAM++
/// masking, train-mode BN, pooling); tolerance 1e-12.
std::vector<CheckResult> reduction_suite(std::size_t cases, std::uint64_t seed);

/// Perturbs only masked-out frames; the guided SE weights, CAM++ global
/// statistic, train-mode BN statistics and pooled output must not change
/// at all.
std::vector<CheckResult> masked_independence_suite(std::size_t cases,
                                                   std::uint64_t seed);

/// Central finite differences for every layer and the AAM loss, alternating
/// standard and guided forms; max relative error below 1e-4.
std::vector<CheckResult> gradient_suite(std::size_t cases, std::uint64_t seed);

/// Pointwise-only proposed ECAPA model in inference mode: embeddings of
/// synthetic mixtures after non-target duration scaling by each m agree
/// with m = 1 within 1e-10.
CheckResult m_invariance_check(std::size_t mixtures, std::uint64_t seed,
                               const std::vector<double> &m_values = {0, 1, 2, 3, 5});

}  // namespace maskemb

#endif  // MASKEMB_CHECKS_HPP_
