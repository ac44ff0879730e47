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

#include "hybridseg/pointcloud.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "hybridseg/errors.hpp"
#include "hybridseg/ops.hpp"

namespace hybridseg {

void PointCloud::validate() const {
  if (positions.empty()) throw InputError("point cloud is empty");
  if (feature_dim < 0 || features.size() != positions.size() * static_cast<std::size_t>(feature_dim)) {
    throw InputError("point cloud has " + std::to_string(features.size()) + " feature values for " +
                     std::to_string(positions.size()) + " points of width " + std::to_string(feature_dim));
  }
  if (labels.size() != positions.size()) throw InputError("point cloud label count does not match point count");
  for (const auto& p : positions) {
    for (double v : p) {
      if (!std::isfinite(v)) throw InputError("point cloud has a non-finite position");
    }
  }
  for (double v : features) {
    if (!std::isfinite(v)) throw InputError("point cloud has a non-finite feature");
  }
}

VoxelIndex build_voxel_index(std::span<const VoxelCoord> coords) {
  VoxelIndex index;
  index.reserve(coords.size() * 2);
  for (std::size_t i = 0; i < coords.size(); ++i) {
    if (!index.emplace(coords[i], static_cast<std::int64_t>(i)).second) {
      throw InputError("duplicate voxel coordinate (" + std::to_string(coords[i][0]) + "," +
                       std::to_string(coords[i][1]) + "," + std::to_string(coords[i][2]) + ")");
    }
  }
  return index;
}

SparseVoxelSet voxelize(const PointCloud& cloud, double cell_size) {
  if (cloud.positions.empty()) throw InputError("cannot voxelize an empty point cloud");
  std::array<double, 3> lo{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
                           std::numeric_limits<double>::infinity()};
  for (const auto& p : cloud.positions) {
    for (int a = 0; a < 3; ++a) lo[a] = std::min(lo[a], p[a]);
  }
  return voxelize(cloud, cell_size, lo);
}

SparseVoxelSet voxelize(const PointCloud& cloud, double cell_size, const std::array<double, 3>& origin) {
  if (!(cell_size > 0.0) || !std::isfinite(cell_size)) {
    throw InputError("cell_size must be positive, got " + std::to_string(cell_size));
  }
  cloud.validate();
  const std::int64_t num_points = cloud.size();
  const std::int64_t cf = cloud.feature_dim;

  SparseVoxelSet out;
  out.origin = origin;
  out.cell_size = cell_size;
  out.point_to_voxel.resize(static_cast<std::size_t>(num_points));

  VoxelIndex index;
  index.reserve(static_cast<std::size_t>(num_points) * 2);
  for (std::int64_t i = 0; i < num_points; ++i) {
    VoxelCoord c{};
    for (int a = 0; a < 3; ++a) {
      const double q = std::floor((cloud.positions[i][a] - origin[a]) / cell_size);
      if (q < 0) throw InputError("point lies below the voxel grid origin");
      c[a] = static_cast<std::int64_t>(q);
    }
    auto [it, inserted] = index.emplace(c, out.size());
    if (inserted) out.coords.push_back(c);
    out.point_to_voxel[i] = it->second;
  }

  const std::int64_t num_voxels = out.size();
  out.member_counts.assign(static_cast<std::size_t>(num_voxels), 0);
  std::vector<double> pooled(static_cast<std::size_t>(num_voxels * std::max<std::int64_t>(cf, 1)), 0.0);
  std::vector<std::map<std::int32_t, std::int64_t>> votes(static_cast<std::size_t>(num_voxels));
  for (std::int64_t i = 0; i < num_points; ++i) {
    const auto v = out.point_to_voxel[i];
    ++out.member_counts[v];
    for (std::int64_t k = 0; k < cf; ++k) pooled[v * cf + k] += cloud.features[i * cf + k];
    if (cloud.labels[i] != kIgnoreLabel) ++votes[v][cloud.labels[i]];
  }
  out.labels.assign(static_cast<std::size_t>(num_voxels), kIgnoreLabel);
  for (std::int64_t v = 0; v < num_voxels; ++v) {
    for (std::int64_t k = 0; k < cf; ++k) pooled[v * cf + k] /= static_cast<double>(out.member_counts[v]);
    // std::map iterates ascending, so strict '>' keeps the smallest id on ties.
    std::int64_t best = 0;
    for (const auto& [label, count] : votes[v]) {
      if (count > best) {
        best = count;
        out.labels[v] = label;
      }
    }
  }
  if (cf > 0) out.features = Tensor(Shape{num_voxels, cf}, std::move(pooled));
  return out;
}

std::vector<std::array<double, 3>> voxel_centers(const SparseVoxelSet& voxels) {
  std::vector<std::array<double, 3>> centers(voxels.coords.size());
  for (std::size_t i = 0; i < voxels.coords.size(); ++i) {
    for (int a = 0; a < 3; ++a) {
      centers[i][a] = voxels.origin[a] + (static_cast<double>(voxels.coords[i][a]) + 0.5) * voxels.cell_size;
    }
  }
  return centers;
}

Tensor project_to_points(const Tensor& voxel_logits, std::span<const std::int64_t> mapping) {
  for (auto m : mapping) {
    if (m < 0 || m >= voxel_logits.dim(0)) {
      throw MappingError("point-to-voxel entry " + std::to_string(m) + " out of range for " +
                         std::to_string(voxel_logits.dim(0)) + " voxels");
    }
  }
  return gather_rows(voxel_logits, mapping);
}

}  // namespace hybridseg
