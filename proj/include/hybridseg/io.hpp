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
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hybridseg/parameters.hpp"
#include "hybridseg/pointcloud.hpp"
#include "hybridseg/training.hpp"

namespace hybridseg {

// Binary cloud layout, little-endian: "PCS1", u64 point count, u32 feature
// width Cf, then per point 3 x f32 position, Cf x f32 features, i32 label.
std::vector<std::uint8_t> encode_pcs1(const PointCloud& cloud);
PointCloud decode_pcs1(std::span<const std::uint8_t> bytes);

// Text layout: one "x y z f_1 .. f_Cf label" line per point. Blank lines and
// lines starting with '#' are skipped.
std::string format_text_cloud(const PointCloud& cloud);
PointCloud parse_text_cloud(std::string_view text);

enum class CloudFormat { kBinary, kText };

void write_point_cloud(const std::filesystem::path& path, const PointCloud& cloud,
                       CloudFormat format = CloudFormat::kBinary);
// Either layout; the binary one is recognised by its magic.
PointCloud read_point_cloud(const std::filesystem::path& path);

// *.pcs and *.txt files of a directory in name order. Throws InputError when
// the directory is missing or holds no clouds.
std::vector<std::filesystem::path> scene_files(const std::filesystem::path& dir);
std::vector<PointCloud> load_scenes(const std::filesystem::path& dir);

// Named-tensor container, little-endian: "HTM1", u64 count, then per tensor
// u32 name length, name bytes, u32 rank, rank x u64 dims, f64 values.
using NamedTensors = std::map<std::string, Tensor>;
std::vector<std::uint8_t> encode_htm1(const NamedTensors& tensors);
NamedTensors decode_htm1(std::span<const std::uint8_t> bytes);

inline constexpr std::string_view kOptimizerPrefix = "opt/";

// Parameters plus, optionally, AdamW state under "opt/m/<name>",
// "opt/v/<name>" and "opt/step".
void write_checkpoint(const std::filesystem::path& path, const ParameterStore& params,
                      const OptimState* optimizer = nullptr);

struct Checkpoint {
  ParameterStore params;
  std::optional<OptimState> optimizer;
};

Checkpoint read_checkpoint(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace hybridseg
