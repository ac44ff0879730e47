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

#include "hybridseg/serialization.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hybridseg/errors.hpp"
#include "hybridseg/ops.hpp"

namespace hybridseg {

namespace {

void check_coord(const VoxelCoord& coord, int bits) {
  if (bits < 1 || bits > kMaxBitsPerAxis) {
    throw RangeError("bits_per_axis must be in [1, " + std::to_string(kMaxBitsPerAxis) + "], got " +
                     std::to_string(bits));
  }
  const std::int64_t limit = std::int64_t{1} << bits;
  for (auto v : coord) {
    if (v < 0 || v >= limit) {
      throw RangeError("coordinate " + std::to_string(v) + " does not fit in " + std::to_string(bits) + " bits");
    }
  }
}

std::uint64_t interleave(const std::array<std::uint64_t, 3>& axes, int bits) {
  std::uint64_t key = 0;
  for (int b = bits - 1; b >= 0; --b) {
    for (int a = 0; a < 3; ++a) key = (key << 1) | ((axes[a] >> b) & 1U);
  }
  return key;
}

std::array<std::uint64_t, 3> deinterleave(std::uint64_t key, int bits) {
  std::array<std::uint64_t, 3> axes{};
  for (int b = 0; b < bits; ++b) {
    for (int a = 2; a >= 0; --a) {
      axes[a] |= (key & 1U) << b;
      key >>= 1;
    }
  }
  return axes;
}

}  // namespace

std::string_view curve_name(Curve curve) { return curve == Curve::kZOrder ? "z_order" : "hilbert"; }

Curve parse_curve(std::string_view name) {
  if (name == "z_order") return Curve::kZOrder;
  if (name == "hilbert") return Curve::kHilbert;
  throw ConfigError("unknown curve '" + std::string(name) + "' (expected z_order or hilbert)");
}

std::uint64_t zorder_key(const VoxelCoord& coord, int bits_per_axis) {
  check_coord(coord, bits_per_axis);
  return interleave({static_cast<std::uint64_t>(coord[0]), static_cast<std::uint64_t>(coord[1]),
                     static_cast<std::uint64_t>(coord[2])},
                    bits_per_axis);
}

VoxelCoord zorder_coord(std::uint64_t key, int bits_per_axis) {
  auto axes = deinterleave(key, bits_per_axis);
  return {static_cast<std::int64_t>(axes[0]), static_cast<std::int64_t>(axes[1]), static_cast<std::int64_t>(axes[2])};
}

std::uint64_t hilbert_key(const VoxelCoord& coord, int bits_per_axis) {
  check_coord(coord, bits_per_axis);
  std::array<std::uint64_t, 3> x{static_cast<std::uint64_t>(coord[0]), static_cast<std::uint64_t>(coord[1]),
                                 static_cast<std::uint64_t>(coord[2])};
  const std::uint64_t top = std::uint64_t{1} << (bits_per_axis - 1);
  // Inverse undo.
  for (std::uint64_t q = top; q > 1; q >>= 1) {
    const std::uint64_t p = q - 1;
    for (int i = 0; i < 3; ++i) {
      if (x[i] & q) {
        x[0] ^= p;
      } else {
        const std::uint64_t t = (x[0] ^ x[i]) & p;
        x[0] ^= t;
        x[i] ^= t;
      }
    }
  }
  // Gray encode.
  for (int i = 1; i < 3; ++i) x[i] ^= x[i - 1];
  std::uint64_t t = 0;
  for (std::uint64_t q = top; q > 1; q >>= 1) {
    if (x[2] & q) t ^= q - 1;
  }
  for (auto& v : x) v ^= t;
  return interleave(x, bits_per_axis);
}

VoxelCoord hilbert_coord(std::uint64_t key, int bits_per_axis) {
  auto x = deinterleave(key, bits_per_axis);
  const std::uint64_t n = std::uint64_t{2} << (bits_per_axis - 1);
  // Gray decode.
  std::uint64_t t = x[2] >> 1;
  for (int i = 2; i > 0; --i) x[i] ^= x[i - 1];
  x[0] ^= t;
  // Undo excess work.
  for (std::uint64_t q = 2; q != n; q <<= 1) {
    const std::uint64_t p = q - 1;
    for (int i = 2; i >= 0; --i) {
      if (x[i] & q) {
        x[0] ^= p;
      } else {
        t = (x[0] ^ x[i]) & p;
        x[0] ^= t;
        x[i] ^= t;
      }
    }
  }
  return {static_cast<std::int64_t>(x[0]), static_cast<std::int64_t>(x[1]), static_cast<std::int64_t>(x[2])};
}

std::uint64_t curve_key(Curve curve, const VoxelCoord& coord, int bits_per_axis) {
  return curve == Curve::kZOrder ? zorder_key(coord, bits_per_axis) : hilbert_key(coord, bits_per_axis);
}

int bits_for_coords(std::span<const VoxelCoord> coords) {
  std::int64_t max_coord = 0;
  for (const auto& c : coords) {
    for (auto v : c) {
      if (v < 0) throw RangeError("negative voxel coordinate " + std::to_string(v));
      max_coord = std::max(max_coord, v);
    }
  }
  int bits = 1;
  while (bits <= kMaxBitsPerAxis && (std::int64_t{1} << bits) <= max_coord) ++bits;
  if (bits > kMaxBitsPerAxis) {
    throw RangeError("voxel coordinate " + std::to_string(max_coord) + " exceeds the curve key range");
  }
  return bits;
}

SerializedOrder serialize(std::span<const VoxelCoord> coords, Curve curve) {
  SerializedOrder order;
  order.curve = curve;
  order.bits_per_axis = bits_for_coords(coords);
  const auto n = coords.size();
  order.keys.resize(n);
  for (std::size_t i = 0; i < n; ++i) order.keys[i] = curve_key(curve, coords[i], order.bits_per_axis);
  order.perm.resize(n);
  std::iota(order.perm.begin(), order.perm.end(), std::int64_t{0});
  std::stable_sort(order.perm.begin(), order.perm.end(),
                   [&](std::int64_t a, std::int64_t b) { return order.keys[a] < order.keys[b]; });
  order.inv_perm.resize(n);
  for (std::size_t r = 0; r < n; ++r) order.inv_perm[order.perm[r]] = static_cast<std::int64_t>(r);
  return order;
}

SerializedOrder serialize(const SparseVoxelSet& voxels, Curve curve) { return serialize(voxels.coords, curve); }

std::int64_t GroupedFeatures::valid_in_group(std::int64_t g) const {
  const auto begin = valid_mask.begin() + g * group_size;
  return std::count(begin, begin + group_size, std::uint8_t{1});
}

GroupedFeatures GroupedFeatures::with_values(Tensor new_values) const {
  if (new_values.shape() != values.shape()) {
    throw DimensionError("grouped values " + shape_string(new_values.shape()) + " do not match grouping " +
                         shape_string(values.shape()));
  }
  GroupedFeatures out = *this;
  out.values = std::move(new_values);
  return out;
}

GroupedFeatures partition(const Tensor& features, const SerializedOrder& order, std::int64_t group_size) {
  if (group_size < 1) throw DimensionError("group size must be >= 1, got " + std::to_string(group_size));
  if (features.rank() != 2 || features.dim(0) != order.size()) {
    throw DimensionError("partition: features " + shape_string(features.shape()) + " for an order of " +
                         std::to_string(order.size()) + " voxels");
  }
  const std::int64_t n = features.dim(0);
  const std::int64_t c = features.dim(1);
  const std::int64_t groups = (n + group_size - 1) / group_size;
  const std::int64_t slots = groups * group_size;
  std::vector<std::int64_t> index(static_cast<std::size_t>(slots), -1);
  GroupedFeatures out;
  out.valid_mask.assign(static_cast<std::size_t>(slots), 0);
  for (std::int64_t r = 0; r < n; ++r) {
    index[r] = order.perm[r];
    out.valid_mask[r] = 1;
  }
  out.values = gather_rows(features, index).reshape(Shape{groups, group_size, c});
  out.group_size = group_size;
  out.original_count = n;
  return out;
}

Tensor restore(const GroupedFeatures& grouped, const SerializedOrder& order) {
  if (grouped.original_count != order.size()) {
    throw ConsistencyError("restore: grouping holds " + std::to_string(grouped.original_count) +
                           " rows but the order has " + std::to_string(order.size()));
  }
  const std::int64_t slots = grouped.num_groups() * grouped.group_size;
  if (static_cast<std::int64_t>(grouped.valid_mask.size()) != slots || slots < grouped.original_count) {
    throw ConsistencyError("restore: mask does not match grouped values");
  }
  Tensor flat = grouped.values.reshape(Shape{slots, grouped.channels()});
  return gather_rows(flat, order.inv_perm);
}

double mean_adjacent_distance(std::span<const VoxelCoord> coords, std::span<const std::int64_t> perm) {
  if (perm.size() < 2) return 0.0;
  double total = 0.0;
  for (std::size_t i = 1; i < perm.size(); ++i) {
    const auto& a = coords[perm[i - 1]];
    const auto& b = coords[perm[i]];
    double d2 = 0.0;
    for (int k = 0; k < 3; ++k) d2 += static_cast<double>((a[k] - b[k]) * (a[k] - b[k]));
    total += std::sqrt(d2);
  }
  return total / static_cast<double>(perm.size() - 1);
}

}  // namespace hybridseg
