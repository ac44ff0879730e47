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

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "hybridseg/tensor.hpp"

namespace hybridseg {

inline constexpr std::int32_t kIgnoreLabel = -1;

// Raw points with per-point features (e.g. RGB in [0,1]) and labels.
struct PointCloud {
  std::vector<std::array<double, 3>> positions;
  std::int64_t feature_dim = 0;
  std::vector<double> features;  // size() * feature_dim, row-major
  std::vector<std::int32_t> labels;

  std::int64_t size() const { return static_cast<std::int64_t>(positions.size()); }
  std::span<const double> feature_row(std::int64_t i) const {
    return {features.data() + i * feature_dim, static_cast<std::size_t>(feature_dim)};
  }
  // Throws InputError when empty, inconsistent or non-finite.
  void validate() const;
};

using VoxelCoord = std::array<std::int64_t, 3>;

struct VoxelCoordHash {
  std::size_t operator()(const VoxelCoord& c) const noexcept {
    std::uint64_t h = 1469598103934665603ULL;
    for (auto v : c) {
      h ^= static_cast<std::uint64_t>(v) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    }
    return static_cast<std::size_t>(h);
  }
};

using VoxelIndex = std::unordered_map<VoxelCoord, std::int64_t, VoxelCoordHash>;

// Builds coord -> row lookup; throws InputError on duplicate coordinates.
VoxelIndex build_voxel_index(std::span<const VoxelCoord> coords);

struct SparseVoxelSet {
  std::vector<VoxelCoord> coords;
  Tensor features;                           // V x C, mean of member point features
  std::vector<std::int64_t> point_to_voxel;  // length P
  std::vector<std::int32_t> labels;          // majority label per voxel
  std::vector<std::int64_t> member_counts;
  std::array<double, 3> origin{};
  double cell_size = 0.0;

  std::int64_t size() const { return static_cast<std::int64_t>(coords.size()); }
};

// Bins points at `cell_size`, anchoring the grid at the per-cloud minimum
// corner. Voxels appear in order of their first member point.
SparseVoxelSet voxelize(const PointCloud& cloud, double cell_size);

// Same, with an explicit grid origin. Every point must lie at or above it.
SparseVoxelSet voxelize(const PointCloud& cloud, double cell_size, const std::array<double, 3>& origin);

// World-space centers of the voxels.
std::vector<std::array<double, 3>> voxel_centers(const SparseVoxelSet& voxels);

// Per-point logits: point i receives row mapping[i] of `voxel_logits`.
// Differentiable; throws MappingError for out-of-range entries.
Tensor project_to_points(const Tensor& voxel_logits, std::span<const std::int64_t> mapping);

}  // namespace hybridseg
