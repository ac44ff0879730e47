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

#include "hybridseg/network.hpp"

#include <algorithm>
#include <cmath>

#include "hybridseg/errors.hpp"
#include "hybridseg/ops.hpp"

namespace hybridseg {

namespace {

std::string enc_prefix(int stage) { return "enc" + std::to_string(stage); }
std::string dec_prefix(int stage) { return "dec" + std::to_string(stage); }

// Encoder level feeding decoder stage j as its skip input.
int skip_level(const NetworkConfig& config, int j) { return config.num_encoder_stages() - 2 - j; }

std::int64_t decoder_input_channels(const NetworkConfig& config, int j) {
  return j == 0 ? config.encoder_channels.back() : config.decoder_channels[j - 1];
}

double max_abs_change(const Tensor& before, const Tensor& after) {
  double m = 0.0;
  for (std::size_t i = 0; i < before.data().size(); ++i) {
    m = std::max(m, std::abs(after.data()[i] - before.data()[i]));
  }
  return m;
}

}  // namespace

std::string_view skip_fusion_name(SkipFusion fusion) { return fusion == SkipFusion::kAdd ? "add" : "concat"; }

SkipFusion parse_skip_fusion(std::string_view name) {
  if (name == "add") return SkipFusion::kAdd;
  if (name == "concat") return SkipFusion::kConcat;
  throw ConfigError("unknown skip fusion '" + std::string(name) + "' (expected add or concat)");
}

HybridLayerConfig NetworkConfig::encoder_layer_config(int stage) const {
  HybridLayerConfig c;
  c.channels = encoder_channels.at(stage);
  c.num_heads = encoder_heads.at(stage);
  c.attention_group_size = attention_group_size;
  c.mamba_group_size = mamba_group_size;
  c.ffn_expansion = ffn_expansion;
  c.strategy = strategy;
  c.curve = curve;
  c.mamba = mamba;
  return c;
}

HybridLayerConfig NetworkConfig::decoder_layer_config(int stage) const {
  HybridLayerConfig c = encoder_layer_config(0);
  c.channels = decoder_channels.at(stage);
  c.num_heads = decoder_heads.at(stage);
  return c;
}

void NetworkConfig::validate() const {
  if (in_channels < 1) throw ConfigError("model.in_channels: must be >= 1");
  if (num_classes < 2) throw ConfigError("model.num_classes: must be >= 2");
  const auto ne = encoder_depths.size();
  if (ne < 1) throw ConfigError("model.encoder_depths: at least one stage required");
  if (decoder_depths.size() + 1 != ne) {
    throw ConfigError("model.decoder_depths: expected " + std::to_string(ne - 1) + " stages, got " +
                      std::to_string(decoder_depths.size()));
  }
  if (encoder_channels.size() != ne) throw ConfigError("model.encoder_channels: length must match encoder_depths");
  if (encoder_heads.size() != ne) throw ConfigError("model.encoder_heads: length must match encoder_depths");
  if (decoder_channels.size() != decoder_depths.size()) {
    throw ConfigError("model.decoder_channels: length must match decoder_depths");
  }
  if (decoder_heads.size() != decoder_depths.size()) {
    throw ConfigError("model.decoder_heads: length must match decoder_depths");
  }
  for (std::size_t i = 0; i < ne; ++i) {
    if (encoder_depths[i] < 1) throw ConfigError("model.encoder_depths[" + std::to_string(i) + "]: must be >= 1");
    if (encoder_channels[i] < 1) throw ConfigError("model.encoder_channels[" + std::to_string(i) + "]: must be >= 1");
    if (encoder_heads[i] < 1 || encoder_channels[i] % encoder_heads[i] != 0) {
      throw ConfigError("model.encoder_heads[" + std::to_string(i) + "]: must divide encoder_channels");
    }
  }
  for (std::size_t i = 0; i < decoder_depths.size(); ++i) {
    if (decoder_depths[i] < 1) throw ConfigError("model.decoder_depths[" + std::to_string(i) + "]: must be >= 1");
    if (decoder_channels[i] < 1) throw ConfigError("model.decoder_channels[" + std::to_string(i) + "]: must be >= 1");
    if (decoder_heads[i] < 1 || decoder_channels[i] % decoder_heads[i] != 0) {
      throw ConfigError("model.decoder_heads[" + std::to_string(i) + "]: must divide decoder_channels");
    }
  }
  if (attention_group_size < 1) throw ConfigError("model.attention_group_size: must be >= 1");
  if (mamba_group_size < 1) throw ConfigError("model.mamba_group_size: must be >= 1");
  if (ffn_expansion < 1) throw ConfigError("model.ffn_expansion: must be >= 1");
  if (pool_stride < 2) throw ConfigError("model.pool_stride: must be >= 2");
  if (mamba.expand < 1) throw ConfigError("model.mamba.expand: must be >= 1");
  if (mamba.state_dim < 1) throw ConfigError("model.mamba.state_dim: must be >= 1");
  if (mamba.conv_width < 1) throw ConfigError("model.mamba.conv_width: must be >= 1");
}

PooledCoords pool_coords(std::span<const VoxelCoord> coords, std::int64_t stride) {
  if (stride < 2) throw ConfigError("pool stride must be >= 2, got " + std::to_string(stride));
  PooledCoords out;
  out.parent.resize(coords.size());
  VoxelIndex index;
  index.reserve(coords.size());
  for (std::size_t i = 0; i < coords.size(); ++i) {
    const VoxelCoord c{coords[i][0] / stride, coords[i][1] / stride, coords[i][2] / stride};
    auto [it, inserted] = index.emplace(c, static_cast<std::int64_t>(out.coords.size()));
    if (inserted) out.coords.push_back(c);
    out.parent[i] = it->second;
  }
  return out;
}

GridPoolResult grid_pool(std::span<const VoxelCoord> coords, const Tensor& features, std::int64_t stride,
                         const LinearParams& projection) {
  if (features.rank() != 2 || features.dim(0) != static_cast<std::int64_t>(coords.size())) {
    throw DimensionError("grid_pool: features " + shape_string(features.shape()) + " for " +
                         std::to_string(coords.size()) + " voxels");
  }
  PooledCoords pooled = pool_coords(coords, stride);
  const auto coarse = static_cast<std::int64_t>(pooled.coords.size());
  GridPoolResult out;
  out.features = projection(segment_mean(features, pooled.parent, coarse));
  out.coords = std::move(pooled.coords);
  out.parent = std::move(pooled.parent);
  return out;
}

Tensor grid_unpool(const Tensor& coarse, std::span<const std::int64_t> parent, const Tensor& skip) {
  if (skip.rank() != 2 || static_cast<std::int64_t>(parent.size()) != skip.dim(0)) {
    throw DimensionError("grid_unpool: " + std::to_string(parent.size()) + " parents for skip " +
                         shape_string(skip.shape()));
  }
  for (auto p : parent) {
    if (p < 0 || p >= coarse.dim(0)) {
      throw MappingError("grid_unpool: fine voxel has parent " + std::to_string(p) + " outside " +
                         std::to_string(coarse.dim(0)) + " coarse voxels");
    }
  }
  return add(gather_rows(coarse, parent), skip);
}

SceneGeometry build_geometry(const PointCloud& cloud, const NetworkConfig& config, double cell_size) {
  config.validate();
  SceneGeometry geo;
  geo.voxels = voxelize(cloud, cell_size);
  const int ne = config.num_encoder_stages();
  geo.level_coords.push_back(geo.voxels.coords);
  for (int i = 0; i + 1 < ne; ++i) {
    PooledCoords pooled = pool_coords(geo.level_coords.back(), config.pool_stride);
    geo.parents.push_back(std::move(pooled.parent));
    geo.level_coords.push_back(std::move(pooled.coords));
  }
  for (int i = 0; i < ne; ++i) {
    geo.encoder_contexts.push_back(build_stage_context(geo.level_coords[i], config.curve));
    ++geo.serialize_calls;
  }
  for (int j = 0; j < config.num_decoder_stages(); ++j) {
    geo.decoder_contexts.push_back(build_stage_context(geo.level_coords[skip_level(config, j)], config.curve));
    ++geo.serialize_calls;
  }
  return geo;
}

NetworkParams NetworkParams::create(ParameterStore& store, const NetworkConfig& config, Rng& rng) {
  config.validate();
  NetworkParams p;
  const int ne = config.num_encoder_stages();
  p.embed = LinearParams::create(store, "embed", config.in_channels, config.encoder_channels[0], true, rng);
  for (int i = 0; i < ne; ++i) {
    const auto layer_config = config.encoder_layer_config(i);
    const auto kinds = build_stage(config.encoder_depths[i], config.strategy, config.operators);
    auto& stage = p.encoder.emplace_back();
    for (std::size_t l = 0; l < kinds.size(); ++l) {
      stage.push_back(HybridLayerParams::create(store, enc_prefix(i) + ".layer" + std::to_string(l), kinds[l],
                                                layer_config, rng));
    }
    if (i + 1 < ne) {
      p.down.push_back(LinearParams::create(store, "down" + std::to_string(i), config.encoder_channels[i],
                                            config.encoder_channels[i + 1], true, rng));
    }
  }
  for (int j = 0; j < config.num_decoder_stages(); ++j) {
    const std::int64_t width = config.decoder_channels[j];
    const std::int64_t skip_width = config.encoder_channels[skip_level(config, j)];
    p.up.push_back(LinearParams::create(store, "up" + std::to_string(j), decoder_input_channels(config, j), width,
                                        true, rng));
    const std::int64_t skip_in = config.skip_fusion == SkipFusion::kAdd ? skip_width : width + skip_width;
    p.skip.push_back(LinearParams::create(store, "skip" + std::to_string(j), skip_in, width, true, rng));
    const auto layer_config = config.decoder_layer_config(j);
    const auto kinds = build_stage(config.decoder_depths[j], config.strategy, config.operators);
    auto& stage = p.decoder.emplace_back();
    for (std::size_t l = 0; l < kinds.size(); ++l) {
      stage.push_back(HybridLayerParams::create(store, dec_prefix(j) + ".layer" + std::to_string(l), kinds[l],
                                                layer_config, rng));
    }
  }
  const std::int64_t last = config.decoder_depths.empty() ? config.encoder_channels[0] : config.decoder_channels.back();
  p.head_norm = NormParams::create(store, "head.norm", last);
  p.head = LinearParams::create(store, "head.fc", last, config.num_classes, true, rng);
  return p;
}

NetworkParams NetworkParams::load(const ParameterStore& store, const NetworkConfig& config) {
  NetworkParams p;
  const int ne = config.num_encoder_stages();
  p.embed = LinearParams::load(store, "embed");
  for (int i = 0; i < ne; ++i) {
    const auto layer_config = config.encoder_layer_config(i);
    const auto kinds = build_stage(config.encoder_depths[i], config.strategy, config.operators);
    auto& stage = p.encoder.emplace_back();
    for (std::size_t l = 0; l < kinds.size(); ++l) {
      stage.push_back(
          HybridLayerParams::load(store, enc_prefix(i) + ".layer" + std::to_string(l), kinds[l], layer_config));
    }
    if (i + 1 < ne) p.down.push_back(LinearParams::load(store, "down" + std::to_string(i)));
  }
  for (int j = 0; j < config.num_decoder_stages(); ++j) {
    p.up.push_back(LinearParams::load(store, "up" + std::to_string(j)));
    p.skip.push_back(LinearParams::load(store, "skip" + std::to_string(j)));
    const auto layer_config = config.decoder_layer_config(j);
    const auto kinds = build_stage(config.decoder_depths[j], config.strategy, config.operators);
    auto& stage = p.decoder.emplace_back();
    for (std::size_t l = 0; l < kinds.size(); ++l) {
      stage.push_back(
          HybridLayerParams::load(store, dec_prefix(j) + ".layer" + std::to_string(l), kinds[l], layer_config));
    }
  }
  p.head_norm = NormParams::load(store, "head.norm");
  p.head = LinearParams::load(store, "head.fc");
  return p;
}

ParameterStore init_parameters(const NetworkConfig& config, std::uint64_t seed) {
  ParameterStore store;
  Rng rng(seed);
  NetworkParams::create(store, config, rng);
  return store;
}

ForwardOutput forward(const SceneGeometry& geometry, const NetworkConfig& config, const ParameterStore& params,
                      ForwardTrace* trace) {
  const NetworkParams net = NetworkParams::load(params, config);
  const int ne = config.num_encoder_stages();
  if (!geometry.voxels.features.defined() || geometry.voxels.features.dim(1) != config.in_channels) {
    throw ModelMismatchError("scene has feature width " +
                             std::to_string(geometry.voxels.features.defined() ? geometry.voxels.features.dim(1) : 0) +
                             ", model expects " + std::to_string(config.in_channels));
  }
  if (trace) *trace = ForwardTrace{};

  auto run_stage = [&](Tensor f, const std::vector<HybridLayerParams>& layers, const StageContext& context,
                       const HybridLayerConfig& layer_config) {
    for (const auto& layer : layers) f = hybrid_layer_forward(f, context, layer_config, layer);
    return f;
  };

  Tensor f = net.embed(geometry.voxels.features);
  std::vector<Tensor> skips;
  for (int i = 0; i < ne; ++i) {
    Tensor stage_in = f;
    f = run_stage(f, net.encoder[i], geometry.encoder_contexts[i], config.encoder_layer_config(i));
    if (trace) {
      trace->encoder_voxels.push_back(f.dim(0));
      trace->encoder_stage_change.push_back(max_abs_change(stage_in, f));
    }
    skips.push_back(f);
    if (i + 1 < ne) {
      f = net.down[i](segment_mean(f, geometry.parents[i], static_cast<std::int64_t>(geometry.level_coords[i + 1].size())));
    }
  }
  for (int j = 0; j < config.num_decoder_stages(); ++j) {
    const int level = skip_level(config, j);
    const Tensor& skip = skips[level];
    Tensor coarse = net.up[j](f);
    if (config.skip_fusion == SkipFusion::kAdd) {
      f = grid_unpool(coarse, geometry.parents[level], net.skip[j](skip));
    } else {
      for (auto p : geometry.parents[level]) {
        if (p < 0 || p >= coarse.dim(0)) throw MappingError("grid_unpool: parent index out of range");
      }
      f = net.skip[j](concat_cols(gather_rows(coarse, geometry.parents[level]), skip));
    }
    Tensor stage_in = f;
    f = run_stage(f, net.decoder[j], geometry.decoder_contexts[j], config.decoder_layer_config(j));
    if (trace) {
      trace->decoder_voxels.push_back(f.dim(0));
      trace->decoder_stage_change.push_back(max_abs_change(stage_in, f));
      trace->skip_shapes.push_back(skip.shape());
      trace->decoder_shapes.push_back(f.shape());
    }
  }
  if (trace) trace->serialize_calls = geometry.serialize_calls;

  ForwardOutput out;
  out.voxel_logits = net.head(net.head_norm(f));
  out.point_logits = project_to_points(out.voxel_logits, geometry.voxels.point_to_voxel);
  return out;
}

Tensor forward(const PointCloud& cloud, double cell_size, const NetworkConfig& config, const ParameterStore& params) {
  return forward(build_geometry(cloud, config, cell_size), config, params).point_logits;
}

}  // namespace hybridseg
