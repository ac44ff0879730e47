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

#include "hybridseg/hybrid.hpp"

#include <cmath>

#include "hybridseg/errors.hpp"
#include "hybridseg/ops.hpp"

namespace hybridseg {

std::string_view strategy_name(Strategy strategy) {
  switch (strategy) {
    case Strategy::kInnerAttnFirst:
      return "inner_attn_first";
    case Strategy::kInnerMambaFirst:
      return "inner_mamba_first";
    case Strategy::kOuterAttnFirst:
      return "outer_attn_first";
    case Strategy::kOuterMambaFirst:
      return "outer_mamba_first";
  }
  return "inner_attn_first";
}

Strategy parse_strategy(std::string_view name) {
  for (auto s : {Strategy::kInnerAttnFirst, Strategy::kInnerMambaFirst, Strategy::kOuterAttnFirst,
                 Strategy::kOuterMambaFirst}) {
    if (strategy_name(s) == name) return s;
  }
  throw ConfigError("unknown strategy '" + std::string(name) +
                    "' (expected inner_attn_first, inner_mamba_first, outer_attn_first or outer_mamba_first)");
}

std::string_view operators_name(Operators operators) {
  switch (operators) {
    case Operators::kBoth:
      return "both";
    case Operators::kAttentionOnly:
      return "attention_only";
    case Operators::kMambaOnly:
      return "mamba_only";
  }
  return "both";
}

Operators parse_operators(std::string_view name) {
  for (auto o : {Operators::kBoth, Operators::kAttentionOnly, Operators::kMambaOnly}) {
    if (operators_name(o) == name) return o;
  }
  throw ConfigError("unknown operators '" + std::string(name) + "' (expected both, attention_only or mamba_only)");
}

std::string_view layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::kHybridAttnFirst:
      return "hybrid_attn_first";
    case LayerKind::kHybridMambaFirst:
      return "hybrid_mamba_first";
    case LayerKind::kAttentionOnly:
      return "attention_only";
    case LayerKind::kMambaOnly:
      return "mamba_only";
  }
  return "hybrid_attn_first";
}

void HybridLayerConfig::validate() const {
  if (channels < 1) throw ConfigError("channels: must be >= 1");
  if (attention_group_size < 1) throw ConfigError("attention_group_size: must be >= 1");
  if (mamba_group_size < 1) throw ConfigError("mamba_group_size: must be >= 1");
  if (num_heads < 1 || channels % num_heads != 0) {
    throw ConfigError("heads: " + std::to_string(channels) + " channels not divisible by " +
                      std::to_string(num_heads) + " heads");
  }
  if (ffn_expansion < 1) throw ConfigError("ffn_expansion: must be >= 1");
  if (mamba.expand < 1) throw ConfigError("mamba.expand: must be >= 1");
  if (mamba.state_dim < 1) throw ConfigError("mamba.state_dim: must be >= 1");
  if (mamba.conv_width < 1) throw ConfigError("mamba.conv_width: must be >= 1");
}

std::vector<LayerKind> build_stage(std::int64_t depth, Strategy strategy, Operators operators) {
  if (depth < 1) throw ConfigError("stage depth must be >= 1, got " + std::to_string(depth));
  if (operators != Operators::kBoth) {
    const auto kind = operators == Operators::kAttentionOnly ? LayerKind::kAttentionOnly : LayerKind::kMambaOnly;
    return std::vector<LayerKind>(static_cast<std::size_t>(depth), kind);
  }
  switch (strategy) {
    case Strategy::kInnerAttnFirst:
      return std::vector<LayerKind>(static_cast<std::size_t>(depth), LayerKind::kHybridAttnFirst);
    case Strategy::kInnerMambaFirst:
      return std::vector<LayerKind>(static_cast<std::size_t>(depth), LayerKind::kHybridMambaFirst);
    case Strategy::kOuterAttnFirst:
    case Strategy::kOuterMambaFirst: {
      const bool attn_first = strategy == Strategy::kOuterAttnFirst;
      const auto first = attn_first ? LayerKind::kAttentionOnly : LayerKind::kMambaOnly;
      const auto second = attn_first ? LayerKind::kMambaOnly : LayerKind::kAttentionOnly;
      std::vector<LayerKind> kinds;
      const std::int64_t head = (depth + 1) / 2;
      for (std::int64_t i = 0; i < depth; ++i) kinds.push_back(i < head ? first : second);
      return kinds;
    }
  }
  return {};
}

NeighborTable build_neighbor_table(std::span<const VoxelCoord> coords) {
  const VoxelIndex lookup = build_voxel_index(coords);
  NeighborTable table;
  table.num_voxels = static_cast<std::int64_t>(coords.size());
  table.index.assign(coords.size() * NeighborTable::kOffsets, -1);
  for (std::size_t i = 0; i < coords.size(); ++i) {
    for (int dx = -1; dx <= 1; ++dx) {
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dz = -1; dz <= 1; ++dz) {
          const VoxelCoord probe{coords[i][0] + dx, coords[i][1] + dy, coords[i][2] + dz};
          auto it = lookup.find(probe);
          if (it != lookup.end()) table.index[i * NeighborTable::kOffsets + NeighborTable::slot(dx, dy, dz)] = it->second;
        }
      }
    }
  }
  return table;
}

Tensor submanifold_conv(const Tensor& features, const Tensor& weight, const NeighborTable& neighbors) {
  if (features.rank() != 2 || features.dim(0) != neighbors.num_voxels) {
    throw DimensionError("submanifold_conv: features " + shape_string(features.shape()) + " for " +
                         std::to_string(neighbors.num_voxels) + " voxels");
  }
  const std::int64_t n = features.dim(0);
  const std::int64_t c = features.dim(1);
  if (weight.shape() != Shape{NeighborTable::kOffsets, c, c}) {
    throw DimensionError("submanifold_conv: weight " + shape_string(weight.shape()) + " for " + std::to_string(c) +
                         " channels");
  }
  Tensor out(features.shape());
  auto fv = features.data();
  auto wv = weight.data();
  auto ov = out.mutable_data();
  const auto& nb = neighbors.index;
  for (std::int64_t i = 0; i < n; ++i) {
    double* oi = ov.data() + i * c;
    for (int o = 0; o < NeighborTable::kOffsets; ++o) {
      const std::int64_t j = nb[i * NeighborTable::kOffsets + o];
      if (j < 0) continue;
      const double* fj = fv.data() + j * c;
      const double* wo = wv.data() + o * c * c;
      for (std::int64_t k = 0; k < c; ++k) {
        const double a = fj[k];
        const double* wrow = wo + k * c;
        for (std::int64_t m = 0; m < c; ++m) oi[m] += a * wrow[m];
      }
    }
  }
  if (should_record({&features, &weight})) {
    out.set_requires_grad(true);
    active_tape()->record([features, weight, out, n, c, nb = neighbors.index]() mutable {
      if (!out.has_grad()) return;
      auto go = out.grad();
      auto fv = features.data();
      auto wv = weight.data();
      std::vector<double> gf(features.requires_grad() ? fv.size() : 0, 0.0);
      std::vector<double> gw(weight.requires_grad() ? wv.size() : 0, 0.0);
      for (std::int64_t i = 0; i < n; ++i) {
        const double* gi = go.data() + i * c;
        for (int o = 0; o < NeighborTable::kOffsets; ++o) {
          const std::int64_t j = nb[i * NeighborTable::kOffsets + o];
          if (j < 0) continue;
          const double* fj = fv.data() + j * c;
          const double* wo = wv.data() + o * c * c;
          for (std::int64_t k = 0; k < c; ++k) {
            const double* wrow = wo + k * c;
            if (!gf.empty()) {
              double acc = 0.0;
              for (std::int64_t m = 0; m < c; ++m) acc += gi[m] * wrow[m];
              gf[j * c + k] += acc;
            }
            if (!gw.empty()) {
              double* gwrow = gw.data() + o * c * c + k * c;
              const double a = fj[k];
              for (std::int64_t m = 0; m < c; ++m) gwrow[m] += a * gi[m];
            }
          }
        }
      }
      if (!gf.empty()) {
        auto dst = features.mutable_grad();
        for (std::size_t i = 0; i < gf.size(); ++i) dst[i] += gf[i];
      }
      if (!gw.empty()) {
        auto dst = weight.mutable_grad();
        for (std::size_t i = 0; i < gw.size(); ++i) dst[i] += gw[i];
      }
    });
  }
  return out;
}

XcpeParams XcpeParams::create(ParameterStore& store, const std::string& prefix, std::int64_t channels, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(NeighborTable::kOffsets * channels));
  return XcpeParams{store.add(prefix + ".weight", uniform_tensor(Shape{NeighborTable::kOffsets, channels, channels},
                                                                  bound, rng))};
}

XcpeParams XcpeParams::load(const ParameterStore& store, const std::string& prefix) {
  return XcpeParams{store.at(prefix + ".weight")};
}

Tensor xcpe(const Tensor& features, const NeighborTable& neighbors, const XcpeParams& params) {
  return add(features, submanifold_conv(features, params.weight, neighbors));
}

FfnParams FfnParams::create(ParameterStore& store, const std::string& prefix, std::int64_t channels,
                            std::int64_t expansion, Rng& rng) {
  FfnParams p;
  p.norm = NormParams::create(store, prefix + ".norm", channels);
  p.fc1 = LinearParams::create(store, prefix + ".fc1", channels, expansion * channels, true, rng);
  p.fc2 = LinearParams::create(store, prefix + ".fc2", expansion * channels, channels, true, rng);
  return p;
}

FfnParams FfnParams::load(const ParameterStore& store, const std::string& prefix) {
  FfnParams p;
  p.norm = NormParams::load(store, prefix + ".norm");
  p.fc1 = LinearParams::load(store, prefix + ".fc1");
  p.fc2 = LinearParams::load(store, prefix + ".fc2");
  return p;
}

Tensor ffn(const Tensor& features, const FfnParams& params) {
  return add(features, params.fc2(gelu(params.fc1(params.norm(features)))));
}

HybridLayerParams HybridLayerParams::create(ParameterStore& store, const std::string& prefix, LayerKind kind,
                                            const HybridLayerConfig& config, Rng& rng) {
  config.validate();
  HybridLayerParams p;
  p.kind = kind;
  p.xcpe = XcpeParams::create(store, prefix + ".xcpe", config.channels, rng);
  if (p.has_attention()) p.attention = AttentionParams::create(store, prefix + ".attn", config.channels, config.num_heads, rng);
  if (p.has_mamba()) p.mamba = SsmParams::create(store, prefix + ".mamba", config.channels, config.mamba, rng);
  p.ffn = FfnParams::create(store, prefix + ".ffn", config.channels, config.ffn_expansion, rng);
  return p;
}

HybridLayerParams HybridLayerParams::load(const ParameterStore& store, const std::string& prefix, LayerKind kind,
                                          const HybridLayerConfig& config) {
  HybridLayerParams p;
  p.kind = kind;
  p.xcpe = XcpeParams::load(store, prefix + ".xcpe");
  if (p.has_attention()) p.attention = AttentionParams::load(store, prefix + ".attn", config.num_heads);
  if (p.has_mamba()) p.mamba = SsmParams::load(store, prefix + ".mamba");
  p.ffn = FfnParams::load(store, prefix + ".ffn");
  return p;
}

StageContext build_stage_context(std::span<const VoxelCoord> coords, Curve curve) {
  return StageContext{build_neighbor_table(coords), serialize(coords, curve)};
}

Tensor hybrid_layer_forward(const Tensor& features, const StageContext& context, const HybridLayerConfig& config,
                            const HybridLayerParams& params) {
  if (features.rank() != 2 || features.dim(0) != context.order.size()) {
    throw ConsistencyError("hybrid layer: features " + shape_string(features.shape()) + " do not match an order of " +
                           std::to_string(context.order.size()) + " voxels");
  }
  Tensor f = xcpe(features, context.neighbors, params.xcpe);
  auto attend = [&](const Tensor& x) {
    return attention_sublayer(x, context.order, config.attention_group_size, params.attention);
  };
  auto scan = [&](const Tensor& x) { return mamba_sublayer(x, context.order, config.mamba_group_size, params.mamba); };
  switch (params.kind) {
    case LayerKind::kHybridAttnFirst:
      f = scan(attend(f));
      break;
    case LayerKind::kHybridMambaFirst:
      f = attend(scan(f));
      break;
    case LayerKind::kAttentionOnly:
      f = attend(f);
      break;
    case LayerKind::kMambaOnly:
      f = scan(f);
      break;
  }
  return ffn(f, params.ffn);
}

bool is_output_projection(std::string_view name) {
  auto ends_with = [&](std::string_view suffix) {
    return name.size() >= suffix.size() && name.substr(name.size() - suffix.size()) == suffix;
  };
  return ends_with(".xcpe.weight") || ends_with(".attn.wo") || ends_with(".mamba.wout") ||
         ends_with(".ffn.fc2.weight") || ends_with(".ffn.fc2.bias");
}

void zero_output_projections(ParameterStore& store) {
  for (auto& [name, tensor] : store) {
    if (is_output_projection(name)) {
      for (double& v : tensor.mutable_data()) v = 0.0;
    }
  }
}

}  // namespace hybridseg
