// tests/test_tensor.cpp

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

#include <random>

#include "maskemb/ops.hpp"
#include "maskemb/tensor.hpp"
#include "test_util.hpp"

namespace maskemb {
namespace {

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  Tensor t({2, 3});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(Tensor::scalar(2.5).item(), 2.5);
}

TEST(Tape, SumGradientIsOnes) {
  Tensor x({3}, {1, 2, 3}, true);
  Tape tape;
  {
    TapeScope scope(tape);
    tape.backward(sum(x));
  }
  EXPECT_EQ(x.grad(), (std::vector<double>{1, 1, 1}));
}

TEST(Tape, QuadraticGradient) {
  Tensor x({2}, {1, 2}, true);
  Tape tape;
  {
    TapeScope scope(tape);
    tape.backward(sum(mul(x, x)));
  }
  EXPECT_EQ(x.grad(), (std::vector<double>{2, 4}));
}

TEST(Tape, RejectsNonScalarLoss) {
  Tensor x({2}, {1, 2}, true);
  Tape tape;
  TapeScope scope(tape);
  Tensor y = mul(x, x);
  EXPECT_THROW(tape.backward(y), TapeError);
}

TEST(Tape, RejectsSecondBackward) {
  Tensor x({2}, {1, 2}, true);
  Tape tape;
  TapeScope scope(tape);
  Tensor loss = sum(x);
  tape.backward(loss);
  EXPECT_THROW(tape.backward(loss), TapeError);
  tape.reset();
  Tensor again = sum(x);
  EXPECT_NO_THROW(tape.backward(again));
  EXPECT_EQ(x.grad(), (std::vector<double>{2, 2}));
}

TEST(Tape, NoGradScopeRecordsNothing) {
  Tensor x({2}, {1, 2}, true);
  Tape tape;
  TapeScope scope(tape);
  {
    NoGradScope off;
    Tensor y = sum(x);
  }
  EXPECT_EQ(tape.size(), 0u);
}

TEST(Tape, BackwardIsDeterministic) {
  std::mt19937_64 rng(3);
  Tensor x = testing::random_tensor(rng, {2, 3, 12}, 1.0, true);
  Tensor w = testing::random_tensor(rng, {4, 3, 3}, 0.5, true);
  auto run = [&] {
    x.zero_grad();
    w.zero_grad();
    Tape tape;
    TapeScope scope(tape);
    tape.backward(sum(mul(conv1d(x, w, 2), conv1d(x, w, 1))));
    return std::pair{x.grad(), w.grad()};
  };
  auto a = run();
  auto b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(FiniteDifference, LinearModelIsExact) {
  std::mt19937_64 rng(1);
  Tensor x = testing::random_tensor(rng, {3, 5});
  Tensor w = testing::random_tensor(rng, {4, 5}, 1.0, true);
  Tensor b = testing::random_tensor(rng, {4}, 1.0, true);
  auto weights = testing::random_weights(rng, 12);
  double err = finite_difference_check(
      [&] { return weighted_sum(linear(x, w, b), weights); }, {{"w", w}, {"b", b}});
  EXPECT_LT(err, 1e-9);
}

TEST(FiniteDifference, NamesNonFiniteParameter) {
  Tensor p({1}, {1e-300}, true);
  try {
    finite_difference_check(
        [&] {
          Tensor q = mul(p, p);
          if (active_tape() == nullptr && p.values()[0] < 0)
            return Tensor::scalar(std::nan(""));
          return sum(q);
        },
        {{"gain", p}}, 1e-5);
    FAIL() << "expected NumericError";
  } catch (const NumericError &e) {
    EXPECT_NE(std::string(e.what()).find("gain"), std::string::npos);
  }
}

}  // namespace
}  // namespace maskemb
