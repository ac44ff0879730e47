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
#include <string>
#include <vector>

#include "hybridseg/parameters.hpp"
#include "hybridseg/serialization.hpp"

namespace hybridseg {

inline constexpr std::int64_t kDefaultAttentionGroupSize = 1024;
inline constexpr int kDefaultHeads = 8;

// Pre-norm and projections of the grouped multi-head attention sub-layer.
struct AttentionParams {
  NormParams norm;
  Tensor wq, wk, wv, wo;  // C x C
  int num_heads = 1;

  std::int64_t channels() const { return wq.dim(0); }
  std::int64_t head_dim() const { return channels() / num_heads; }

  // Throws ConfigError unless channels is divisible by num_heads.
  static AttentionParams create(ParameterStore& store, const std::string& prefix, std::int64_t channels,
                                int num_heads, Rng& rng);
  static AttentionParams load(const ParameterStore& store, const std::string& prefix, int num_heads);
};

// Scaled dot-product attention inside each group, split into `num_heads`
// heads of width C / num_heads. q, k, v are [G x S x C]. Keys in padded
// slots are excluded from the softmax and padded query rows produce zeros.
Tensor masked_group_attention(const Tensor& q, const Tensor& k, const Tensor& v, const GroupedFeatures& grouping,
                              int num_heads);

// MSA(F_g): projections, per-group attention and output projection. The
// residual is added by the caller.
GroupedFeatures grouped_msa(const GroupedFeatures& grouped, const AttentionParams& params);

// Softmax weights of one head in one group, [valid x valid] row-major.
std::vector<double> attention_weights(const GroupedFeatures& grouped, const AttentionParams& params,
                                      std::int64_t group, int head);

// F' = Restore(Partition(F, L) + MSA(Partition(norm(F), L))).
Tensor attention_sublayer(const Tensor& features, const SerializedOrder& order, std::int64_t group_size,
                          const AttentionParams& params);

}  // namespace hybridseg
