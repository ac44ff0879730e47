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

#include "hybridseg/attention.hpp"
#include "hybridseg/mamba.hpp"
#include "hybridseg/parameters.hpp"
#include "hybridseg/pointcloud.hpp"
#include "hybridseg/serialization.hpp"

namespace hybridseg {

// How attention and Mamba are combined inside a stage.
enum class Strategy { kInnerAttnFirst, kInnerMambaFirst, kOuterAttnFirst, kOuterMambaFirst };

std::string_view strategy_name(Strategy strategy);
// Accepts exactly inner_attn_first, inner_mamba_first, outer_attn_first,
// outer_mamba_first.
Strategy parse_strategy(std::string_view name);

// Which sequence operators a network may use; single-operator settings give
// the component ablation.
enum class Operators { kBoth, kAttentionOnly, kMambaOnly };

std::string_view operators_name(Operators operators);
Operators parse_operators(std::string_view name);

struct HybridLayerConfig {
  std::int64_t channels = 32;
  std::int64_t attention_group_size = kDefaultAttentionGroupSize;  // L
  std::int64_t mamba_group_size = kDefaultMambaGroupSize;          // K
  int num_heads = kDefaultHeads;
  std::int64_t ffn_expansion = 4;
  Strategy strategy = Strategy::kInnerAttnFirst;
  Curve curve = Curve::kHilbert;
  MambaOptions mamba;

  // Throws ConfigError naming the offending field.
  void validate() const;
};

// What one layer of a stage contains. Every kind carries xCPE and FFN.
enum class LayerKind { kHybridAttnFirst, kHybridMambaFirst, kAttentionOnly, kMambaOnly };

std::string_view layer_kind_name(LayerKind kind);

// Layer kinds of a stage of `depth` layers. Inner strategies yield `depth`
// hybrid layers; outer strategies yield ceil(depth/2) single-operator layers
// of the first operator followed by floor(depth/2) of the second.
std::vector<LayerKind> build_stage(std::int64_t depth, Strategy strategy, Operators operators = Operators::kBoth);

// Per-voxel neighbor rows for the 27 offsets of a 3x3x3 stencil, -1 where
// no voxel exists. Offset (dx,dy,dz) has slot (dx+1)*9 + (dy+1)*3 + (dz+1).
struct NeighborTable {
  std::int64_t num_voxels = 0;
  std::vector<std::int64_t> index;  // num_voxels * 27

  static constexpr int kOffsets = 27;
  static constexpr int kCenter = 13;
  static int slot(int dx, int dy, int dz) { return (dx + 1) * 9 + (dy + 1) * 3 + (dz + 1); }
};

// Throws InputError on duplicate coordinates.
NeighborTable build_neighbor_table(std::span<const VoxelCoord> coords);

// out[i] = sum over existing neighbors j at offset o of features[j] * weight[o].
// weight is [27 x C x C].
Tensor submanifold_conv(const Tensor& features, const Tensor& weight, const NeighborTable& neighbors);

struct XcpeParams {
  Tensor weight;  // 27 x C x C

  static XcpeParams create(ParameterStore& store, const std::string& prefix, std::int64_t channels, Rng& rng);
  static XcpeParams load(const ParameterStore& store, const std::string& prefix);
};

// F + SubmanifoldConv3x3x3(F).
Tensor xcpe(const Tensor& features, const NeighborTable& neighbors, const XcpeParams& params);

struct FfnParams {
  NormParams norm;
  LinearParams fc1;  // C -> expansion * C
  LinearParams fc2;  // expansion * C -> C

  static FfnParams create(ParameterStore& store, const std::string& prefix, std::int64_t channels,
                          std::int64_t expansion, Rng& rng);
  static FfnParams load(const ParameterStore& store, const std::string& prefix);
};

// F + fc2(GELU(fc1(norm(F)))).
Tensor ffn(const Tensor& features, const FfnParams& params);

struct HybridLayerParams {
  LayerKind kind = LayerKind::kHybridAttnFirst;
  XcpeParams xcpe;
  AttentionParams attention;  // undefined tensors for kMambaOnly
  SsmParams mamba;            // undefined tensors for kAttentionOnly
  FfnParams ffn;

  bool has_attention() const { return kind != LayerKind::kMambaOnly; }
  bool has_mamba() const { return kind != LayerKind::kAttentionOnly; }

  static HybridLayerParams create(ParameterStore& store, const std::string& prefix, LayerKind kind,
                                  const HybridLayerConfig& config, Rng& rng);
  static HybridLayerParams load(const ParameterStore& store, const std::string& prefix, LayerKind kind,
                                const HybridLayerConfig& config);
};

// Geometry shared by all layers of a stage.
struct StageContext {
  NeighborTable neighbors;
  SerializedOrder order;
};

StageContext build_stage_context(std::span<const VoxelCoord> coords, Curve curve);

// xCPE -> sequence operators in the order given by the layer kind -> FFN.
Tensor hybrid_layer_forward(const Tensor& features, const StageContext& context, const HybridLayerConfig& config,
                            const HybridLayerParams& params);

// Names of every parameter that writes into a residual branch output; zeroing
// them turns each layer into the identity.
bool is_output_projection(std::string_view parameter_name);
void zero_output_projections(ParameterStore& store);

}  // namespace hybridseg
