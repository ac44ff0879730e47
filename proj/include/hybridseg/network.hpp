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
#include <string_view>
#include <vector>

#include "hybridseg/hybrid.hpp"
#include "hybridseg/parameters.hpp"
#include "hybridseg/pointcloud.hpp"

namespace hybridseg {

enum class SkipFusion { kAdd, kConcat };

std::string_view skip_fusion_name(SkipFusion fusion);
SkipFusion parse_skip_fusion(std::string_view name);

// UNet layout. Decoder stage j runs at the resolution of encoder stage
// (num_encoder_stages - 2 - j). Group sizes are shared by every stage.
struct NetworkConfig {
  std::int64_t in_channels = 3;
  std::int64_t num_classes = 8;
  std::vector<std::int64_t> encoder_depths{2, 2, 2, 6, 2};
  std::vector<std::int64_t> decoder_depths{2, 2, 2, 2};
  std::vector<std::int64_t> encoder_channels{32, 64, 128, 256, 512};
  std::vector<std::int64_t> decoder_channels{256, 128, 64, 32};
  std::vector<int> encoder_heads{8, 8, 8, 8, 8};
  std::vector<int> decoder_heads{8, 8, 8, 8};
  std::int64_t attention_group_size = kDefaultAttentionGroupSize;
  std::int64_t mamba_group_size = kDefaultMambaGroupSize;
  std::int64_t ffn_expansion = 4;
  Strategy strategy = Strategy::kInnerAttnFirst;
  Operators operators = Operators::kBoth;
  Curve curve = Curve::kHilbert;
  std::int64_t pool_stride = 2;
  SkipFusion skip_fusion = SkipFusion::kAdd;
  MambaOptions mamba;

  int num_encoder_stages() const { return static_cast<int>(encoder_depths.size()); }
  int num_decoder_stages() const { return static_cast<int>(decoder_depths.size()); }
  HybridLayerConfig encoder_layer_config(int stage) const;
  HybridLayerConfig decoder_layer_config(int stage) const;
  // Throws ConfigError with a "model.<field>" path.
  void validate() const;
};

// Coarse grid: coord / stride per axis. parent[i] is the coarse row of fine
// voxel i; coarse voxels appear in order of their first child.
struct PooledCoords {
  std::vector<VoxelCoord> coords;
  std::vector<std::int64_t> parent;
};

PooledCoords pool_coords(std::span<const VoxelCoord> coords, std::int64_t stride);

struct GridPoolResult {
  std::vector<VoxelCoord> coords;
  Tensor features;
  std::vector<std::int64_t> parent;
};

// Mean-pools children into their parent voxel, then applies `projection`
// (e.g. to the next channel width). Throws ConfigError when stride < 2.
GridPoolResult grid_pool(std::span<const VoxelCoord> coords, const Tensor& features, std::int64_t stride,
                         const LinearParams& projection);

// Fine row i = coarse[parent[i]] + skip[i]. Throws MappingError on a parent
// index outside the coarse set.
Tensor grid_unpool(const Tensor& coarse, std::span<const std::int64_t> parent, const Tensor& skip);

// Parameter-independent geometry of one scene: voxels, the coordinate
// pyramid and per-stage neighbor tables and serializations.
struct SceneGeometry {
  SparseVoxelSet voxels;
  std::vector<std::vector<VoxelCoord>> level_coords;  // one per encoder stage
  std::vector<std::vector<std::int64_t>> parents;     // level i -> level i + 1
  std::vector<StageContext> encoder_contexts;
  std::vector<StageContext> decoder_contexts;
  int serialize_calls = 0;
};

SceneGeometry build_geometry(const PointCloud& cloud, const NetworkConfig& config, double cell_size);

struct NetworkParams {
  LinearParams embed;
  std::vector<std::vector<HybridLayerParams>> encoder;
  std::vector<std::vector<HybridLayerParams>> decoder;
  std::vector<LinearParams> down;  // encoder level i -> i + 1
  std::vector<LinearParams> up;    // coarse input of decoder stage j
  std::vector<LinearParams> skip;  // skip input (or fused input for concat)
  NormParams head_norm;
  LinearParams head;

  static NetworkParams create(ParameterStore& store, const NetworkConfig& config, Rng& rng);
  static NetworkParams load(const ParameterStore& store, const NetworkConfig& config);
};

ParameterStore init_parameters(const NetworkConfig& config, std::uint64_t seed);

// Per-stage bookkeeping recorded by forward().
struct ForwardTrace {
  std::vector<std::int64_t> encoder_voxels;
  std::vector<std::int64_t> decoder_voxels;
  // max |stage output - stage input| over the layer stack of each stage.
  std::vector<double> encoder_stage_change;
  std::vector<double> decoder_stage_change;
  std::vector<Shape> skip_shapes;     // encoder output feeding decoder stage j
  std::vector<Shape> decoder_shapes;  // decoder stage j output
  int serialize_calls = 0;
};

struct ForwardOutput {
  Tensor voxel_logits;  // V x num_classes
  Tensor point_logits;  // P x num_classes
};

// voxel features -> embed -> encoder stages with grid pooling -> decoder
// stages with unpooling and skip fusion -> norm + linear head -> points.
ForwardOutput forward(const SceneGeometry& geometry, const NetworkConfig& config, const ParameterStore& params,
                      ForwardTrace* trace = nullptr);

Tensor forward(const PointCloud& cloud, double cell_size, const NetworkConfig& config, const ParameterStore& params);

}  // namespace hybridseg
