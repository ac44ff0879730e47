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

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hybridseg/pointcloud.hpp"
#include "hybridseg/tensor.hpp"

namespace hybridseg {

enum class Curve { kZOrder, kHilbert };

std::string_view curve_name(Curve curve);
// Accepts "z_order" and "hilbert"; throws ConfigError otherwise.
Curve parse_curve(std::string_view name);

inline constexpr int kMaxBitsPerAxis = 21;

// Morton code. At each bit level the (x, y, z) bits are emitted with x most
// significant. Throws RangeError when a coordinate does not fit.
std::uint64_t zorder_key(const VoxelCoord& coord, int bits_per_axis);
VoxelCoord zorder_coord(std::uint64_t key, int bits_per_axis);

// 3D Hilbert index via Skilling's transpose algorithm.
std::uint64_t hilbert_key(const VoxelCoord& coord, int bits_per_axis);
VoxelCoord hilbert_coord(std::uint64_t key, int bits_per_axis);

std::uint64_t curve_key(Curve curve, const VoxelCoord& coord, int bits_per_axis);

// Smallest b >= 1 with every coordinate < 2^b.
int bits_for_coords(std::span<const VoxelCoord> coords);

struct SerializedOrder {
  Curve curve = Curve::kHilbert;
  int bits_per_axis = 1;
  std::vector<std::uint64_t> keys;       // per voxel, original order
  std::vector<std::int64_t> perm;        // perm[rank] = voxel
  std::vector<std::int64_t> inv_perm;    // inv_perm[voxel] = rank

  std::int64_t size() const { return static_cast<std::int64_t>(keys.size()); }
};

// Stable ascending sort of curve keys, ties broken by original index.
SerializedOrder serialize(std::span<const VoxelCoord> coords, Curve curve);
SerializedOrder serialize(const SparseVoxelSet& voxels, Curve curve);

// Serialized rows chunked into ceil(N / S) groups of S slots. Values are a
// [G x S x C] tensor; slots past the last valid row are zero and masked off.
struct GroupedFeatures {
  Tensor values;
  std::vector<std::uint8_t> valid_mask;  // G * S
  std::int64_t group_size = 0;
  std::int64_t original_count = 0;

  std::int64_t num_groups() const { return values.dim(0); }
  std::int64_t channels() const { return values.dim(2); }
  // Valid slots of group g, read from the mask; always a prefix of the group.
  std::int64_t valid_in_group(std::int64_t g) const;
  // Same grouping, different values (e.g. a sub-layer output).
  GroupedFeatures with_values(Tensor new_values) const;
};

// Differentiable. Throws DimensionError on shape problems.
GroupedFeatures partition(const Tensor& features, const SerializedOrder& order, std::int64_t group_size);

// Drops padding and undoes the serialization; restore(partition(F)) == F
// exactly. Throws ConsistencyError when the grouping does not match `order`.
Tensor restore(const GroupedFeatures& grouped, const SerializedOrder& order);

// Mean Euclidean distance between consecutive voxels along `perm`.
double mean_adjacent_distance(std::span<const VoxelCoord> coords, std::span<const std::int64_t> perm);

}  // namespace hybridseg
