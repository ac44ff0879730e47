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

#include "hybridseg/errors.hpp"
#include "hybridseg/grad_check.hpp"
#include "hybridseg/hybrid.hpp"
#include "test_support.hpp"

namespace hybridseg {
namespace {

using testing::Gen;
using testing::max_abs_diff;

constexpr double kCompositeStep = 1e-4;

void randomize(ParameterStore& store, std::uint64_t seed, double bound = 0.5) {
  Gen g(seed);
  for (auto& [name, t] : store) {
    if (name.ends_with("a_log")) continue;
    for (auto& v : t.mutable_data()) v = g.uniform(-bound, bound);
  }
}

HybridLayerConfig small_config(std::int64_t c, Strategy strategy = Strategy::kInnerAttnFirst) {
  HybridLayerConfig cfg;
  cfg.channels = c;
  cfg.attention_group_size = 4;
  cfg.mamba_group_size = 6;
  cfg.num_heads = 2;
  cfg.ffn_expansion = 2;
  cfg.strategy = strategy;
  cfg.mamba = MambaOptions{2, 3, 4};
  return cfg;
}

using Row = std::vector<double>;

Row row_times(const Row& x, const Tensor& w, std::int64_t col_offset = 0, std::int64_t cols = -1) {
  const auto in = w.dim(0), width = w.dim(1);
  if (cols < 0) cols = width;
  Row out(cols, 0.0);
  for (std::int64_t j = 0; j < cols; ++j) {
    for (std::int64_t k = 0; k < in; ++k) out[j] += x[k] * w.data()[k * width + col_offset + j];
  }
  return out;
}

Row norm_row(const Row& x, const NormParams& p) {
  double mu = 0.0, var = 0.0;
  for (double v : x) mu += v;
  mu /= x.size();
  for (double v : x) var += (v - mu) * (v - mu);
  var /= x.size();
  Row out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = (x[i] - mu) / std::sqrt(var + 1e-5) * p.gamma.data()[i] + p.beta.data()[i];
  }
  return out;
}

double silu_scalar(double v) { return v / (1.0 + std::exp(-v)); }

Row plus(Row a, const Row& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

// One-token scan: h starts at zero, so A drops out.
Row single_token_scan(const Row& u_in, const ScanParams& s) {
  const auto e = static_cast<std::int64_t>(u_in.size()), state = s.wb.dim(1), width = s.conv_weight.dim(1);
  Row u(e);
  for (std::int64_t ch = 0; ch < e; ++ch) {
    u[ch] = silu_scalar(s.conv_bias.data()[ch] + s.conv_weight.data()[ch * width] * u_in[ch]);
  }
  const Row pre = row_times(u, s.wdelta), b = row_times(u, s.wb), c = row_times(u, s.wc);
  double cb = 0.0;
  for (std::int64_t n = 0; n < state; ++n) cb += c[n] * b[n];
  Row y(e);
  for (std::int64_t ch = 0; ch < e; ++ch) {
    const double delta = std::log1p(std::exp(pre[ch] + s.bdelta.data()[ch]));
    y[ch] = cb * delta * u[ch] + s.d.data()[ch] * u[ch];
  }
  return y;
}

TEST(Xcpe, SingleVoxelUsesCenterWeightOnly) {
  ParameterStore store;
  Rng rng(1);
  auto p = XcpeParams::create(store, "x", 3, rng);
  randomize(store, 2);
  const std::vector<VoxelCoord> coords{{4, 5, 6}};
  Tensor f(Shape{1, 3}, {1.0, -2.0, 0.5});
  Tensor out = xcpe(f, build_neighbor_table(coords), p);
  const Row expected = plus({1.0, -2.0, 0.5}, row_times({1.0, -2.0, 0.5}, Tensor(Shape{3, 3}, std::vector<double>(
      p.weight.data().begin() + NeighborTable::kCenter * 9, p.weight.data().begin() + NeighborTable::kCenter * 9 + 9))));
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(out.data()[i], expected[i], 1e-15);
}

TEST(Xcpe, ZeroWeightsAreIdentity) {
  ParameterStore store;
  Rng rng(1);
  auto p = XcpeParams::create(store, "x", 4, rng);
  for (auto& v : p.weight.mutable_data()) v = 0.0;
  Gen g(3);
  const auto coords = g.coords(30, 4);
  Tensor f = g.tensor({30, 4});
  EXPECT_EQ(max_abs_diff(xcpe(f, build_neighbor_table(coords), p), f), 0.0);
}

TEST(Xcpe, HandSetPair) {
  // Voxels a=(0,0,0), b=(1,0,0). a sees b at offset (1,0,0); b sees a at (-1,0,0).
  const std::vector<VoxelCoord> coords{{0, 0, 0}, {1, 0, 0}};
  Tensor w(Shape{27, 1, 1}, 0.0);
  w.mutable_data()[NeighborTable::kCenter] = 2.0;
  w.mutable_data()[NeighborTable::slot(1, 0, 0)] = 3.0;
  w.mutable_data()[NeighborTable::slot(-1, 0, 0)] = 5.0;
  w.mutable_data()[NeighborTable::slot(0, 1, 0)] = 100.0;  // no such neighbor
  Tensor f(Shape{2, 1}, {1.0, 10.0});
  Tensor out = xcpe(f, build_neighbor_table(coords), XcpeParams{w});
  EXPECT_DOUBLE_EQ(out.data()[0], 1.0 + 2.0 * 1.0 + 3.0 * 10.0);
  EXPECT_DOUBLE_EQ(out.data()[1], 10.0 + 2.0 * 10.0 + 5.0 * 1.0);
}

TEST(Xcpe, NeighborLookupMatchesBruteForce) {
  Gen g(4);
  const auto coords = g.coords(60, 5);
  const auto table = build_neighbor_table(coords);
  for (std::size_t i = 0; i < coords.size(); ++i) {
    for (int dx = -1; dx <= 1; ++dx) {
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dz = -1; dz <= 1; ++dz) {
          std::int64_t expected = -1;
          const VoxelCoord want{coords[i][0] + dx, coords[i][1] + dy, coords[i][2] + dz};
          for (std::size_t j = 0; j < coords.size(); ++j) {
            if (coords[j] == want) expected = static_cast<std::int64_t>(j);
          }
          EXPECT_EQ(table.index[i * 27 + NeighborTable::slot(dx, dy, dz)], expected);
        }
      }
    }
  }
}

TEST(Xcpe, DuplicateCoordsRejected) {
  const std::vector<VoxelCoord> coords{{1, 1, 1}, {1, 1, 1}};
  EXPECT_THROW(build_neighbor_table(coords), InputError);
}

TEST(Xcpe, GradientCheck) {
  Gen g(5);
  const auto coords = g.coords(12, 3);
  const auto table = build_neighbor_table(coords);
  Tensor f = g.tensor({12, 3});
  Tensor w = g.tensor({27, 3, 3});
  auto report = grad_check([&] { return testing::probe(xcpe(f, table, XcpeParams{w})); }, {f, w});
  EXPECT_TRUE(report.passed) << report.max_relative_error;
}

TEST(Ffn, ZeroSecondProjectionIsIdentity) {
  ParameterStore store;
  Rng rng(6);
  auto p = FfnParams::create(store, "f", 4, 2, rng);
  randomize(store, 7);
  for (auto& v : p.fc2.weight.mutable_data()) v = 0.0;
  for (auto& v : p.fc2.bias.mutable_data()) v = 0.0;
  Gen g(8);
  Tensor f = g.tensor({5, 4});
  EXPECT_EQ(max_abs_diff(ffn(f, p), f), 0.0);
}

TEST(Ffn, IdentityProjectionsHandEvaluation) {
  ParameterStore store;
  Rng rng(9);
  auto p = FfnParams::create(store, "f", 2, 1, rng);
  p.fc1.weight.mutable_data()[0] = 1.0;
  p.fc1.weight.mutable_data()[1] = 0.0;
  p.fc1.weight.mutable_data()[2] = 0.0;
  p.fc1.weight.mutable_data()[3] = 1.0;
  for (int i = 0; i < 4; ++i) p.fc2.weight.mutable_data()[i] = p.fc1.weight.data()[i];
  for (auto& v : p.fc1.bias.mutable_data()) v = 0.0;
  for (auto& v : p.fc2.bias.mutable_data()) v = 0.0;
  // Input [1,3]: mean 2, variance 1, so the norm is [-1, 1] up to eps.
  Tensor f(Shape{1, 2}, {1.0, 3.0});
  Tensor out = ffn(f, p);
  const double z = 1.0 / std::sqrt(1.0 + 1e-5);
  auto gelu = [](double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); };
  EXPECT_NEAR(out.data()[0], 1.0 + gelu(-z), 1e-14);
  EXPECT_NEAR(out.data()[1], 3.0 + gelu(z), 1e-14);
  EXPECT_NEAR(out.data()[0], 1.0 - 0.15865, 1e-4);
  EXPECT_NEAR(out.data()[1], 3.0 + 0.84134, 1e-4);
}

TEST(Ffn, GradientCheck) {
  ParameterStore store;
  Rng rng(10);
  auto p = FfnParams::create(store, "f", 3, 2, rng);
  randomize(store, 11);
  Gen g(12);
  Tensor f = g.tensor({6, 3});
  auto report = grad_check([&] { return testing::probe(ffn(f, p)); },
                           {f, p.norm.gamma, p.norm.beta, p.fc1.weight, p.fc1.bias, p.fc2.weight, p.fc2.bias});
  EXPECT_TRUE(report.passed) << report.max_relative_error;
}

TEST(BuildStage, Layouts) {
  using K = LayerKind;
  EXPECT_EQ(build_stage(2, Strategy::kOuterMambaFirst), (std::vector<K>{K::kMambaOnly, K::kAttentionOnly}));
  EXPECT_EQ(build_stage(2, Strategy::kInnerAttnFirst), (std::vector<K>{K::kHybridAttnFirst, K::kHybridAttnFirst}));
  EXPECT_EQ(build_stage(2, Strategy::kInnerMambaFirst), (std::vector<K>{K::kHybridMambaFirst, K::kHybridMambaFirst}));
  EXPECT_EQ(build_stage(1, Strategy::kOuterAttnFirst), (std::vector<K>{K::kAttentionOnly}));
  EXPECT_EQ(build_stage(1, Strategy::kOuterMambaFirst), (std::vector<K>{K::kMambaOnly}));
  EXPECT_EQ(build_stage(5, Strategy::kOuterAttnFirst),
            (std::vector<K>{K::kAttentionOnly, K::kAttentionOnly, K::kAttentionOnly, K::kMambaOnly, K::kMambaOnly}));
  EXPECT_EQ(build_stage(6, Strategy::kOuterMambaFirst, Operators::kAttentionOnly), std::vector<K>(6, K::kAttentionOnly));
  EXPECT_EQ(build_stage(3, Strategy::kInnerAttnFirst, Operators::kMambaOnly), std::vector<K>(3, K::kMambaOnly));
}

TEST(BuildStage, SplitCountsForAllDepths) {
  for (std::int64_t depth = 1; depth <= 9; ++depth) {
    const auto kinds = build_stage(depth, Strategy::kOuterAttnFirst);
    ASSERT_EQ(static_cast<std::int64_t>(kinds.size()), depth);
    const auto first = std::count(kinds.begin(), kinds.end(), LayerKind::kAttentionOnly);
    EXPECT_EQ(first, (depth + 1) / 2);
    EXPECT_TRUE(std::is_partitioned(kinds.begin(), kinds.end(), [](LayerKind k) { return k == LayerKind::kAttentionOnly; }));
  }
}

TEST(StrategyNames, ParseExactValues) {
  for (auto s : {Strategy::kInnerAttnFirst, Strategy::kInnerMambaFirst, Strategy::kOuterAttnFirst,
                 Strategy::kOuterMambaFirst}) {
    EXPECT_EQ(parse_strategy(strategy_name(s)), s);
  }
  EXPECT_EQ(strategy_name(Strategy::kOuterMambaFirst), "outer_mamba_first");
  EXPECT_THROW(parse_strategy("Inner_Attn_First"), ConfigError);
  EXPECT_THROW(parse_operators("both "), ConfigError);
}

TEST(HybridConfig, Validation) {
  auto cfg = small_config(6);
  cfg.num_heads = 4;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = small_config(4);
  cfg.attention_group_size = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = small_config(4);
  cfg.mamba_group_size = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

struct LayerFixture {
  ParameterStore store;
  HybridLayerParams params;
  HybridLayerConfig config;
};

LayerFixture make_layer(LayerKind kind, std::int64_t c, std::uint64_t seed) {
  LayerFixture fx;
  fx.config = small_config(c);
  Rng rng(seed);
  fx.params = HybridLayerParams::create(fx.store, "layer", kind, fx.config, rng);
  randomize(fx.store, seed + 1);
  return fx;
}

TEST(HybridLayer, SingleVoxelTrace) {
  auto fx = make_layer(LayerKind::kHybridAttnFirst, 4, 13);
  const std::vector<VoxelCoord> coords{{2, 2, 2}};
  const auto ctx = build_stage_context(coords, Curve::kHilbert);
  const Row f0{0.3, -0.8, 1.1, 0.2};
  Tensor out = hybrid_layer_forward(Tensor(Shape{1, 4}, f0), ctx, fx.config, fx.params);

  const auto& p = fx.params;
  const Tensor center(Shape{4, 4}, std::vector<double>(p.xcpe.weight.data().begin() + NeighborTable::kCenter * 16,
                                                       p.xcpe.weight.data().begin() + NeighborTable::kCenter * 16 + 16));
  const Row f1 = plus(f0, row_times(f0, center));
  const Row f2 = plus(f1, row_times(row_times(norm_row(f1, p.attention.norm), p.attention.wv), p.attention.wo));
  const auto e = p.mamba.inner();
  const Row n = norm_row(f2, p.mamba.norm);
  const Row u = row_times(n, p.mamba.win, 0, e), z = row_times(n, p.mamba.win, e, e);
  const Row yf = single_token_scan(u, p.mamba.forward), yb = single_token_scan(u, p.mamba.backward);
  Row mixed(e);
  for (std::int64_t i = 0; i < e; ++i) mixed[i] = (yf[i] + yb[i]) * silu_scalar(z[i]);
  const Row f3 = plus(f2, row_times(mixed, p.mamba.wout));
  Row hidden = plus(row_times(norm_row(f3, p.ffn.norm), p.ffn.fc1.weight),
                    Row(p.ffn.fc1.bias.data().begin(), p.ffn.fc1.bias.data().end()));
  for (double& h : hidden) h = 0.5 * h * (1.0 + std::erf(h / std::sqrt(2.0)));
  const Row f4 = plus(plus(f3, row_times(hidden, p.ffn.fc2.weight)),
                      Row(p.ffn.fc2.bias.data().begin(), p.ffn.fc2.bias.data().end()));
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(out.data()[i], f4[i], 1e-12);
}

TEST(HybridLayer, ZeroedOutputProjectionsGiveIdentity) {
  for (auto kind : {LayerKind::kHybridAttnFirst, LayerKind::kHybridMambaFirst, LayerKind::kAttentionOnly,
                    LayerKind::kMambaOnly}) {
    auto fx = make_layer(kind, 4, 14);
    zero_output_projections(fx.store);
    Gen g(15);
    const auto coords = g.coords(25, 4);
    const auto ctx = build_stage_context(coords, Curve::kZOrder);
    Tensor f = g.tensor({25, 4});
    EXPECT_LE(max_abs_diff(hybrid_layer_forward(f, ctx, fx.config, fx.params), f), 1e-12) << layer_kind_name(kind);
  }
}

TEST(HybridLayer, OrderOfSubLayersMatters) {
  auto a = make_layer(LayerKind::kHybridAttnFirst, 4, 16);
  auto b = a;
  b.params.kind = LayerKind::kHybridMambaFirst;
  Gen g(17);
  const auto coords = g.coords(20, 4);
  const auto ctx = build_stage_context(coords, Curve::kHilbert);
  Tensor f = g.tensor({20, 4});
  EXPECT_GT(max_abs_diff(hybrid_layer_forward(f, ctx, a.config, a.params),
                         hybrid_layer_forward(f, ctx, b.config, b.params)),
            1e-6);
}

TEST(HybridLayer, ShapePreservedForEveryKind) {
  Gen g(18);
  for (auto kind : {LayerKind::kHybridAttnFirst, LayerKind::kHybridMambaFirst, LayerKind::kAttentionOnly,
                    LayerKind::kMambaOnly}) {
    for (std::int64_t n : {1, 3, 17}) {
      auto fx = make_layer(kind, 4, 19);
      const auto coords = g.coords(n, 5);
      const auto ctx = build_stage_context(coords, Curve::kHilbert);
      Tensor out = hybrid_layer_forward(g.tensor({n, 4}), ctx, fx.config, fx.params);
      EXPECT_EQ(out.shape(), (Shape{n, 4}));
    }
  }
}

TEST(HybridLayer, SingleOperatorLayersSkipTheOtherParameters) {
  auto attn = make_layer(LayerKind::kAttentionOnly, 4, 20);
  auto scan = make_layer(LayerKind::kMambaOnly, 4, 20);
  EXPECT_FALSE(attn.store.contains("layer.mamba.win"));
  EXPECT_TRUE(attn.store.contains("layer.attn.wq"));
  EXPECT_FALSE(scan.store.contains("layer.attn.wq"));
  EXPECT_TRUE(scan.store.contains("layer.xcpe.weight"));
  EXPECT_TRUE(scan.store.contains("layer.ffn.fc2.weight"));
}

TEST(HybridLayer, MismatchedOrderRejected) {
  auto fx = make_layer(LayerKind::kHybridAttnFirst, 4, 21);
  Gen g(22);
  const auto ctx = build_stage_context(g.coords(5, 3), Curve::kHilbert);
  EXPECT_THROW(hybrid_layer_forward(g.tensor({6, 4}), ctx, fx.config, fx.params), ConsistencyError);
}

TEST(HybridLayer, GradientCheck) {
  HybridLayerConfig cfg = small_config(16);
  cfg.attention_group_size = 8;
  cfg.mamba_group_size = 8;
  cfg.num_heads = 4;
  cfg.mamba = MambaOptions{2, 2, 4};
  ParameterStore store;
  Rng rng(23);
  auto params = HybridLayerParams::create(store, "layer", LayerKind::kHybridAttnFirst, cfg, rng);
  Gen g(25);
  const auto coords = g.coords(32, 5);
  const auto ctx = build_stage_context(coords, Curve::kHilbert);
  Tensor f = g.tensor({32, 16});
  std::vector<Tensor> inputs{f};
  for (auto& [name, t] : store) inputs.push_back(t);
  // At h = 1e-5 rounding in the 512-term objective (about 1e-13) dominates
  // the difference quotient; 1e-4 keeps truncation and rounding both small.
  GradCheckOptions options;
  options.step = kCompositeStep;
  auto report = grad_check([&] { return sum(hybrid_layer_forward(f, ctx, cfg, params)); }, inputs, options);
  EXPECT_TRUE(report.passed) << report.max_relative_error;
}

}  // namespace
}  // namespace hybridseg
