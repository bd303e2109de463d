// tests/test_checks.cpp

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

#include <cmath>
#include <limits>

#include "maskemb/checks.hpp"

namespace maskemb {
namespace {

void expect_all_pass(const std::vector<CheckResult> &results, std::size_t cases) {
  ASSERT_FALSE(results.empty());
  for (const CheckResult &r : results) {
    EXPECT_TRUE(r.passed()) << r.property << " worst " << r.worst << " " << r.detail;
    EXPECT_EQ(r.cases, cases) << r.property;
  }
}

TEST(CheckResult, PassedNeedsToleranceAndNoDetail) {
  CheckResult r{"x", 1, 0.5, 1.0, 0.0, ""};
  EXPECT_TRUE(r.passed());
  r.detail = "case 0";
  EXPECT_FALSE(r.passed());
  r.detail.clear();
  r.worst = 2.0;
  EXPECT_FALSE(r.passed());
  r.worst = std::numeric_limits<double>::quiet_NaN();
  EXPECT_FALSE(r.passed());
}

TEST(CheckResult, JsonFields) {
  const Json j = to_json(CheckResult{"reduction.se", 3, 0.0, 1e-12, 0.1, ""});
  EXPECT_EQ(j.at("property"), "reduction.se");
  EXPECT_EQ(j.at("cases"), 3);
  EXPECT_EQ(j.at("passed"), true);
}

TEST(Suites, ReductionPasses) {
  const auto r = reduction_suite(6, 1);
  expect_all_pass(r, 6);
  EXPECT_EQ(r.size(), 4u);
}

TEST(Suites, MaskedIndependencePasses) {
  const auto r = masked_independence_suite(6, 2);
  expect_all_pass(r, 6);
  for (const auto &x : r) EXPECT_EQ(x.tolerance, 0.0);
}

TEST(Suites, GradientsPass) {
  const auto r = gradient_suite(4, 3);
  expect_all_pass(r, 4);
  EXPECT_EQ(r.size(), 8u);
}

TEST(Suites, DeterministicForSeed) {
  const auto a = gradient_suite(2, 9), b = gradient_suite(2, 9);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].worst, b[i].worst);
}

TEST(Suites, MInvariancePasses) {
  const CheckResult r = m_invariance_check(3, 4);
  EXPECT_TRUE(r.passed()) << r.worst << " " << r.detail;
  EXPECT_EQ(r.cases, 3u);
}

}  // namespace
}  // namespace maskemb
