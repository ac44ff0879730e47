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
#include <map>
#include <set>

#include "hybridseg/errors.hpp"
#include "hybridseg/grad_check.hpp"
#include "hybridseg/pointcloud.hpp"
#include "test_support.hpp"

namespace hybridseg {
namespace {

using testing::Gen;

PointCloud make_cloud(std::vector<std::array<double, 3>> pos, std::vector<double> feats, std::vector<std::int32_t> labels) {
  PointCloud pc;
  pc.positions = std::move(pos);
  pc.feature_dim = pc.positions.empty() ? 0 : static_cast<std::int64_t>(feats.size() / pc.positions.size());
  pc.features = std::move(feats);
  pc.labels = std::move(labels);
  return pc;
}

// Cloud whose coordinates are multiples of 1/1024, so shifts by multiples of
// the cell size are exact in floating point.
PointCloud grid_cloud(Gen& g, std::size_t n, std::int32_t classes) {
  PointCloud pc = g.cloud(n, 2, 3.0, classes);
  for (auto& p : pc.positions) {
    for (auto& c : p) c = std::floor(c * 1024.0) / 1024.0;
  }
  return pc;
}

TEST(Voxelize, PairMergesToMean) {
  auto pc = make_cloud({{0.01, 0.01, 0.01}, {0.02, 0.03, 0.04}}, {0.0, 2.0}, {1, 1});
  const auto v = voxelize(pc, 0.1);
  ASSERT_EQ(v.size(), 1);
  EXPECT_EQ(v.features.data()[0], 1.0);
  EXPECT_EQ(v.member_counts[0], 2);
  EXPECT_EQ(v.point_to_voxel, (std::vector<std::int64_t>{0, 0}));
}

TEST(Voxelize, DistinctCellsKeepEveryPoint) {
  auto pc = make_cloud({{0, 0, 0}, {1, 0, 0}, {0, 2, 0}}, {1, 2, 3}, {0, 1, 2});
  const auto v = voxelize(pc, 0.5);
  ASSERT_EQ(v.size(), 3);
  std::set<std::int64_t> seen(v.point_to_voxel.begin(), v.point_to_voxel.end());
  EXPECT_EQ(seen.size(), 3u);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(v.features.data()[v.point_to_voxel[i]], pc.features[i]);
}

TEST(Voxelize, Errors) {
  EXPECT_THROW(voxelize(PointCloud{}, 0.1), InputError);
  auto pc = make_cloud({{0, 0, 0}}, {1}, {0});
  EXPECT_THROW(voxelize(pc, 0.0), InputError);
  pc.positions[0][1] = std::nan("");
  EXPECT_THROW(voxelize(pc, 0.1), InputError);
}

TEST(Voxelize, MembershipAndLabelsMatchBruteForce) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Gen g(seed);
    const auto pc = g.cloud(1000, 3, 1.0, 4);
    const double cell = 0.1;
    const auto v = voxelize(pc, cell);
    ASSERT_LE(v.size(), pc.size());

    std::array<double, 3> lo{1e9, 1e9, 1e9};
    for (const auto& p : pc.positions) {
      for (int a = 0; a < 3; ++a) lo[a] = std::min(lo[a], p[a]);
    }
    std::map<VoxelCoord, std::vector<std::int64_t>> members;
    for (std::int64_t i = 0; i < pc.size(); ++i) {
      VoxelCoord c;
      for (int a = 0; a < 3; ++a) c[a] = static_cast<std::int64_t>(std::floor((pc.positions[i][a] - lo[a]) / cell));
      members[c].push_back(i);
    }
    ASSERT_EQ(static_cast<std::size_t>(v.size()), members.size());
    std::int64_t total = 0;
    for (std::int64_t k = 0; k < v.size(); ++k) {
      const auto& m = members.at(v.coords[k]);
      total += v.member_counts[k];
      EXPECT_EQ(v.member_counts[k], static_cast<std::int64_t>(m.size()));
      std::map<std::int32_t, int> votes;
      for (auto i : m) {
        EXPECT_EQ(v.point_to_voxel[i], k);
        ++votes[pc.labels[i]];
      }
      int best = -1;
      std::int32_t label = -1;
      for (auto [l, n] : votes) {
        if (n > best) best = n, label = l;
      }
      EXPECT_EQ(v.labels[k], label);
      for (int f = 0; f < 3; ++f) {
        double mean = 0.0;
        for (auto i : m) mean += pc.features[i * 3 + f];
        EXPECT_NEAR(v.features.data()[k * 3 + f], mean / m.size(), 1e-14);
      }
    }
    EXPECT_EQ(total, pc.size());
  }
}

TEST(Voxelize, TieGoesToSmallestLabelAndIgnoreIsSkipped) {
  auto pc = make_cloud({{0, 0, 0}, {0.01, 0, 0}, {0.02, 0, 0}, {0.03, 0, 0}, {0.04, 0, 0}}, {0, 0, 0, 0, 0},
                       {3, 1, kIgnoreLabel, kIgnoreLabel, kIgnoreLabel});
  EXPECT_EQ(voxelize(pc, 1.0).labels[0], 1);
  auto all_ignored = make_cloud({{0, 0, 0}}, {0}, {kIgnoreLabel});
  EXPECT_EQ(voxelize(all_ignored, 1.0).labels[0], kIgnoreLabel);
}

TEST(Voxelize, CentersRevoxelizeToSameCount) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Gen g(seed);
    const auto pc = g.cloud(1000, 1, 2.0, 3);
    const auto v = voxelize(pc, 0.15);
    PointCloud centers;
    centers.feature_dim = 1;
    centers.positions = voxel_centers(v);
    centers.features.assign(centers.positions.size(), 0.0);
    centers.labels.assign(centers.positions.size(), 0);
    const auto again = voxelize(centers, 0.15, v.origin);
    EXPECT_EQ(again.size(), v.size());
    EXPECT_EQ(again.coords, v.coords);
  }
}

TEST(Voxelize, TranslationByWholeCells) {
  const double cell = 0.25;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Gen g(seed);
    const auto pc = grid_cloud(g, 300, 5);
    const VoxelCoord shift{g.integer(0, 6), g.integer(0, 6), g.integer(0, 6)};
    PointCloud moved = pc;
    for (auto& p : moved.positions) {
      for (int a = 0; a < 3; ++a) p[a] += static_cast<double>(shift[a]) * cell;
    }
    const std::array<double, 3> origin{-1.0, -1.0, -1.0};
    const auto a = voxelize(pc, cell, origin);
    const auto b = voxelize(moved, cell, origin);
    ASSERT_EQ(a.size(), b.size());
    for (std::int64_t k = 0; k < a.size(); ++k) {
      for (int ax = 0; ax < 3; ++ax) EXPECT_EQ(b.coords[k][ax], a.coords[k][ax] + shift[ax]);
    }
    EXPECT_EQ(a.point_to_voxel, b.point_to_voxel);
    EXPECT_EQ(a.labels, b.labels);
    EXPECT_TRUE(std::equal(a.features.data().begin(), a.features.data().end(), b.features.data().begin()));
    // Min-corner anchoring absorbs the shift entirely.
    EXPECT_EQ(voxelize(pc, cell).coords, voxelize(moved, cell).coords);
  }
}

TEST(Voxelize, PointBelowExplicitOriginThrows) {
  auto pc = make_cloud({{0, 0, 0}}, {1}, {0});
  EXPECT_THROW(voxelize(pc, 0.1, {0.5, 0.0, 0.0}), InputError);
}

TEST(Project, Examples) {
  Tensor logits(Shape{1, 2}, {0.5, -1.0});
  const std::vector<std::int64_t> three{0, 0, 0};
  Tensor out = project_to_points(logits, three);
  ASSERT_EQ(out.shape(), (Shape{3, 2}));
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(out.data()[i * 2], 0.5);
    EXPECT_EQ(out.data()[i * 2 + 1], -1.0);
  }
  Gen g(1);
  Tensor x = g.tensor({4, 3});
  const std::vector<std::int64_t> id{0, 1, 2, 3};
  EXPECT_TRUE(std::equal(x.data().begin(), x.data().end(), project_to_points(x, id).data().begin()));
  const std::vector<std::int64_t> bad{0, 4};
  EXPECT_THROW(project_to_points(x, bad), MappingError);
  const std::vector<std::int64_t> neg{-1};
  EXPECT_THROW(project_to_points(x, neg), MappingError);
}

TEST(Project, RandomMappingMatchesLoop) {
  Gen g(2);
  Tensor x = g.tensor({7, 5});
  std::vector<std::int64_t> map(40);
  for (auto& m : map) m = g.integer(0, 6);
  Tensor out = project_to_points(x, map);
  for (std::size_t i = 0; i < map.size(); ++i) {
    for (int c = 0; c < 5; ++c) EXPECT_EQ(out.data()[i * 5 + c], x.data()[map[i] * 5 + c]);
  }
  auto report = grad_check([&] { return testing::probe(project_to_points(x, map)); }, {x});
  EXPECT_TRUE(report.passed);
}

}  // namespace
}  // namespace hybridseg
