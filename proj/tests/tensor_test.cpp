// Copyright 2026 The HybridSeg Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <thread>

#include "hybridseg/errors.hpp"
#include "hybridseg/grad_check.hpp"
#include "hybridseg/ops.hpp"
#include "hybridseg/tensor.hpp"
#include "test_support.hpp"

namespace hybridseg {
namespace {

using testing::Gen;
using testing::max_abs_diff;
using testing::probe;

TEST(Tensor, RejectsNonPositiveDims) {
  EXPECT_THROW(Tensor(Shape{2, 0}), DimensionError);
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>(3)), DimensionError);
}

TEST(Tensor, AliasSharesValuesNotGrad) {
  Tensor a(Shape{2}, {1.0, 2.0});
  Tensor b = a.alias();
  b.mutable_grad()[0] = 5.0;
  EXPECT_FALSE(a.has_grad());
  a.mutable_data()[1] = 7.0;
  EXPECT_EQ(b.data()[1], 7.0);
  Tensor r = a.reshape({1, 2});
  r.mutable_grad()[1] = 3.0;
  EXPECT_EQ(a.grad()[1], 3.0);
}

TEST(Tape, BackwardNeedsScalarRoot) {
  Tape tape;
  TapeScope scope(tape);
  Tensor x(Shape{2}, {1.0, 2.0});
  x.set_requires_grad(true);
  Tensor y = scale(x, 2.0);
  EXPECT_THROW(tape.backward(y), DimensionError);
}

TEST(Tape, NothingRecordedWithoutScope) {
  Tensor x(Shape{2}, {1.0, 2.0});
  x.set_requires_grad(true);
  Tensor y = scale(x, 2.0);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Linear, IdentityWeights) {
  Tensor x(Shape{1, 2}, {1, 2});
  Tensor w(Shape{2, 2}, {1, 0, 0, 1});
  Tensor out = linear(x, w, Tensor(Shape{2}, 0.0));
  EXPECT_EQ(out.data()[0], 1.0);
  EXPECT_EQ(out.data()[1], 2.0);
}

TEST(Linear, HandMultiply) {
  Tensor x(Shape{2, 2}, {1, 0, 0, 1});
  Tensor w(Shape{2, 2}, {2, 3, 4, 5});
  Tensor b(Shape{2}, {1, 1});
  Tensor out = linear(x, w, b);
  const std::vector<double> expected{3, 4, 5, 6};
  for (int i = 0; i < 4; ++i) EXPECT_EQ(out.data()[i], expected[i]);
}

TEST(Linear, ZeroWeightGivesBiasRows) {
  Gen g(1);
  Tensor out = linear(g.tensor({5, 3}), Tensor(Shape{3, 2}, 0.0), Tensor(Shape{2}, {0.5, -2.0}));
  for (int i = 0; i < 5; ++i) {
    EXPECT_EQ(out.data()[i * 2], 0.5);
    EXPECT_EQ(out.data()[i * 2 + 1], -2.0);
  }
}

TEST(Linear, ShapeMismatchNamesShapes) {
  try {
    linear(Tensor(Shape{2, 3}), Tensor(Shape{4, 2}));
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("[4x2]"), std::string::npos) << e.what();
  }
}

TEST(Linear, MatchesLoopOracleAndIsAdditive) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Gen g(seed);
    const auto n = g.integer(1, 9), ci = g.integer(1, 7), co = g.integer(1, 7);
    Tensor a = g.tensor({n, ci}), b = g.tensor({n, ci}), w = g.tensor({ci, co}), bias = g.tensor({co});
    Tensor out = linear(a, w, bias);
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t j = 0; j < co; ++j) {
        double acc = bias.data()[j];
        for (std::int64_t k = 0; k < ci; ++k) acc += a.data()[i * ci + k] * w.data()[k * co + j];
        EXPECT_NEAR(out.data()[i * co + j], acc, 1e-13);
      }
    }
    Tensor lhs = linear(add(a, b), w, bias);
    Tensor rhs = sub(add(linear(a, w, bias), linear(b, w, bias)), linear(Tensor(Shape{n, ci}, 0.0), w, bias));
    EXPECT_LE(max_abs_diff(lhs, rhs), 1e-12);
  }
}

TEST(Softmax, Examples) {
  Tensor s = softmax(Tensor(Shape{1, 3}, {0, 0, 0}));
  for (double v : s.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  s = softmax(Tensor(Shape{1, 3}, {std::log(1.0), std::log(2.0), std::log(3.0)}));
  EXPECT_NEAR(s.data()[0], 1.0 / 6.0, 1e-15);
  EXPECT_NEAR(s.data()[1], 2.0 / 6.0, 1e-15);
  EXPECT_NEAR(s.data()[2], 3.0 / 6.0, 1e-15);
  s = softmax(Tensor(Shape{1, 3}, {1000, 0, 0}));
  EXPECT_NEAR(s.data()[0], 1.0, 1e-12);
  EXPECT_NEAR(s.data()[1], 0.0, 1e-12);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Gen g(seed);
    const auto rows = g.integer(1, 6), m = g.integer(1, 9);
    Tensor x = g.tensor({rows, m}, -20, 20);
    Tensor shifted = x.clone();
    for (std::int64_t r = 0; r < rows; ++r) {
      const double c = g.uniform(-50, 50);
      for (std::int64_t j = 0; j < m; ++j) shifted.mutable_data()[r * m + j] += c;
    }
    Tensor s = softmax(x), s2 = softmax(shifted);
    for (std::int64_t r = 0; r < rows; ++r) {
      double total = 0.0;
      for (std::int64_t j = 0; j < m; ++j) total += s.data()[r * m + j];
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
    EXPECT_LE(max_abs_diff(s, s2), 1e-12);
  }
}

TEST(Softmax, OtherAxis) {
  Tensor x(Shape{2, 2}, {0.0, 1.0, std::log(3.0), 1.0});
  Tensor s = softmax(x, 0);
  EXPECT_NEAR(s.data()[0], 0.25, 1e-15);
  EXPECT_NEAR(s.data()[2], 0.75, 1e-15);
  EXPECT_NEAR(s.data()[1], 0.5, 1e-15);
}

TEST(LayerNorm, Examples) {
  Tensor ones(Shape{2}, 1.0), zeros(Shape{2}, 0.0);
  Tensor c = layer_norm(Tensor(Shape{1, 2}, {4.0, 4.0}), ones, zeros);
  EXPECT_EQ(c.data()[0], 0.0);
  EXPECT_EQ(c.data()[1], 0.0);
  Tensor h = layer_norm(Tensor(Shape{1, 2}, {1.0, 3.0}), ones, zeros, 1e-14);
  EXPECT_NEAR(h.data()[0], -1.0, 1e-12);
  EXPECT_NEAR(h.data()[1], 1.0, 1e-12);
  Tensor b = layer_norm(Tensor(Shape{1, 2}, {1.0, 3.0}), zeros, Tensor(Shape{2}, {0.25, -4.0}));
  EXPECT_EQ(b.data()[0], 0.25);
  EXPECT_EQ(b.data()[1], -4.0);
}

TEST(LayerNorm, UnitVarianceRows) {
  Gen g(3);
  const std::int64_t c = 16;
  Tensor y = layer_norm(g.tensor({5, c}, -3, 3), Tensor(Shape{c}, 1.0), Tensor(Shape{c}, 0.0), 1e-12);
  for (int r = 0; r < 5; ++r) {
    double m = 0.0, v = 0.0;
    for (int j = 0; j < c; ++j) m += y.data()[r * c + j];
    m /= c;
    for (int j = 0; j < c; ++j) v += (y.data()[r * c + j] - m) * (y.data()[r * c + j] - m);
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v / c, 1.0, 1e-9);
  }
}

TEST(Activations, PointValues) {
  EXPECT_EQ(kernels::gelu(0.0), 0.0);
  EXPECT_NEAR(kernels::gelu(1.0), 0.5 * (1.0 + std::erf(1.0 / std::numbers::sqrt2)), 1e-15);
  EXPECT_NEAR(kernels::softplus(0.0), std::log(2.0), 1e-15);
  EXPECT_NEAR(kernels::softplus(50.0), 50.0, 1e-12);
  EXPECT_NEAR(kernels::sigmoid(0.0), 0.5, 1e-15);
  Tensor s = silu(Tensor(Shape{2}, {0.0, 2.0}));
  EXPECT_EQ(s.data()[0], 0.0);
  EXPECT_NEAR(s.data()[1], 2.0 / (1.0 + std::exp(-2.0)), 1e-15);
}

TEST(GatherRows, PaddingAndRange) {
  Tensor x(Shape{2, 2}, {1, 2, 3, 4});
  const std::vector<std::int64_t> idx{1, -1, 0, 1};
  Tensor g = gather_rows(x, idx);
  const std::vector<double> expected{3, 4, 0, 0, 1, 2, 3, 4};
  for (int i = 0; i < 8; ++i) EXPECT_EQ(g.data()[i], expected[i]);
  const std::vector<std::int64_t> bad{2};
  EXPECT_THROW(gather_rows(x, bad), MappingError);
}

TEST(SegmentMean, EmptySegmentThrows) {
  Tensor x(Shape{2, 1}, {1, 3});
  const std::vector<std::int64_t> seg{0, 0};
  EXPECT_EQ(segment_mean(x, seg, 1).data()[0], 2.0);
  EXPECT_THROW(segment_mean(x, seg, 2), MappingError);
}

TEST(GradCheck, SumOfSquares) {
  Tensor x(Shape{2}, {1.0, 2.0});
  {
    Tape tape;
    TapeScope scope(tape);
    x.set_requires_grad(true);
    Tensor f = sum(mul(x, x));
    tape.backward(f);
  }
  EXPECT_EQ(x.grad()[0], 2.0);
  EXPECT_EQ(x.grad()[1], 4.0);
  x.zero_grad();
  auto report = grad_check([&] { return sum(mul(x, x)); }, {x}, {.step = 1e-5, .tolerance = 1e-8});
  EXPECT_TRUE(report.passed) << report.max_relative_error;
  EXPECT_EQ(report.entries_checked, 2u);
}

TEST(GradCheck, ConstantFunction) {
  Tensor x(Shape{3}, {1.0, 2.0, 3.0});
  auto report = grad_check([&] { return Tensor::scalar(4.0); }, {x});
  EXPECT_TRUE(report.passed);
  EXPECT_EQ(report.max_absolute_error, 0.0);
}

TEST(GradCheck, NonFiniteObjectiveThrows) {
  Tensor x(Shape{1}, {1.0});
  EXPECT_THROW(grad_check([&] { return Tensor::scalar(std::nan("")); }, {x}), NumericError);
}

TEST(GradCheck, EveryPrimitive) {
  Gen g(11);
  Tensor x = g.tensor({4, 3}), y = g.tensor({4, 3}), w = g.tensor({3, 5}), b = g.tensor({5});
  Tensor gamma = g.tensor({3}, 0.5, 1.5), beta = g.tensor({3});
  const std::vector<std::int64_t> rows{3, -1, 0, 0, 2};
  const std::vector<std::int64_t> seg{1, 0, 1, 2};
  const std::vector<std::pair<const char*, std::function<Tensor()>>> cases{
      {"linear", [&] { return probe(linear(x, w, b)); }},
      {"add", [&] { return probe(add(x, y)); }},
      {"sub", [&] { return probe(sub(x, y)); }},
      {"mul", [&] { return probe(mul(x, y)); }},
      {"scale", [&] { return probe(scale(x, -1.5)); }},
      {"softmax", [&] { return probe(softmax(x)); }},
      {"softmax0", [&] { return probe(softmax(x, 0)); }},
      {"layer_norm", [&] { return probe(layer_norm(x, gamma, beta)); }},
      {"gelu", [&] { return probe(gelu(x)); }},
      {"silu", [&] { return probe(silu(x)); }},
      {"softplus", [&] { return probe(softplus(x)); }},
      {"gather_rows", [&] { return probe(gather_rows(x, rows)); }},
      {"segment_mean", [&] { return probe(segment_mean(x, seg, 3)); }},
      {"slice_cols", [&] { return probe(slice_cols(x, 1, 3)); }},
      {"concat_cols", [&] { return probe(concat_cols(x, y)); }},
      {"mean", [&] { return mean(mul(x, y)); }},
  };
  for (const auto& [name, f] : cases) {
    auto report = grad_check(f, {x, y, w, b, gamma, beta});
    EXPECT_TRUE(report.passed) << name << " rel " << report.max_relative_error;
  }
}

TEST(Concurrency, IndependentTapesOnThreads) {
  Gen g(5);
  Tensor w = g.tensor({3, 3});
  auto run = [&](std::vector<double>& out) {
    Tensor mine = w.alias();
    mine.set_requires_grad(true);
    Tape tape;
    TapeScope scope(tape);
    Tensor x(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor f = sum(gelu(linear(x, mine)));
    tape.backward(f);
    out.assign(mine.grad().begin(), mine.grad().end());
  };
  std::vector<double> a, b, serial;
  run(serial);
  {
    std::jthread t1(run, std::ref(a)), t2(run, std::ref(b));
  }
  EXPECT_EQ(a, serial);
  EXPECT_EQ(b, serial);
  EXPECT_FALSE(w.has_grad());
}

}  // namespace
}  // namespace hybridseg
