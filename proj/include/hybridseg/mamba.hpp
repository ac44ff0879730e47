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
#include <vector>

#include "hybridseg/parameters.hpp"
#include "hybridseg/serialization.hpp"

namespace hybridseg {

inline constexpr std::int64_t kDefaultMambaGroupSize = 4096;

struct MambaOptions {
  std::int64_t expand = 2;       // inner width E = expand * C
  std::int64_t state_dim = 16;   // Dstate
  std::int64_t conv_width = 4;   // depthwise causal kernel
};

// Parameters of one scan direction.
struct ScanParams {
  Tensor a_log;        // E x Dstate, A = -exp(a_log)
  Tensor wb, wc;       // E x Dstate input-dependent B and C projections
  Tensor wdelta;       // E x E
  Tensor bdelta;       // E, softplus(bdelta) is the initial step size
  Tensor d;            // E skip gains
  Tensor conv_weight;  // E x width, conv_weight[e,k] multiplies x[t-k, e]
  Tensor conv_bias;    // E

  static ScanParams create(ParameterStore& store, const std::string& prefix, std::int64_t inner,
                           const MambaOptions& options, Rng& rng);
  static ScanParams load(const ParameterStore& store, const std::string& prefix);
};

// Bidirectional block: shared pre-norm and in/out projections, separate
// per-direction scan parameters.
struct SsmParams {
  NormParams norm;
  Tensor win;   // C x 2E, [x | gate]
  Tensor wout;  // E x C
  ScanParams forward;
  ScanParams backward;

  std::int64_t channels() const { return win.dim(0); }
  std::int64_t inner() const { return wout.dim(0); }

  static SsmParams create(ParameterStore& store, const std::string& prefix, std::int64_t channels,
                          const MambaOptions& options, Rng& rng);
  static SsmParams load(const ParameterStore& store, const std::string& prefix);
};

// Plain-array inputs of one sequence for the reference recurrence.
struct ScanProblem {
  std::int64_t length = 0;    // T
  std::int64_t channels = 0;  // E
  std::int64_t state = 0;     // Dstate
  std::vector<double> x;      // T x E
  std::vector<double> delta;  // T x E
  std::vector<double> a;      // E x Dstate, negative entries
  std::vector<double> b;      // T x Dstate
  std::vector<double> c;      // T x Dstate
  std::vector<double> d;      // E
};

// h_t = exp(delta_t A) h_{t-1} + delta_t B_t x_t, y_t = C_t h_t + D x_t,
// evaluated step by step with h_0 = 0. Returns y as T x E.
std::vector<double> selective_scan_reference(const ScanProblem& problem);

// Differentiable selective scan over grouped sequences laid out as rows of
// [rows x E] (rows = groups * group_size). Each group restarts from a zero
// state and only its first valid_lengths[g] rows are scanned; other rows of
// the output are zero.
Tensor selective_scan(const Tensor& x, const Tensor& delta, const Tensor& a_log, const Tensor& b, const Tensor& c,
                      const Tensor& d, std::int64_t group_size, std::span<const std::int64_t> valid_lengths);

// y[t,e] = bias[e] + sum_k weight[e,k] x[t-k,e] within each group's valid
// prefix (zero history before t = 0); padded rows are zero.
Tensor causal_depthwise_conv(const Tensor& x, const Tensor& weight, const Tensor& bias, std::int64_t group_size,
                             std::span<const std::int64_t> valid_lengths);

// Row index that reverses every group's valid prefix and drops padding.
std::vector<std::int64_t> reverse_within_groups(const GroupedFeatures& grouped);

// BiMamba(F_g) without the residual.
GroupedFeatures bidirectional_mamba(const GroupedFeatures& grouped, const SsmParams& params);

// F'' = Restore(Partition(F', K) + BiMamba(Partition(norm(F'), K))).
Tensor mamba_sublayer(const Tensor& features, const SerializedOrder& order, std::int64_t group_size,
                      const SsmParams& params);

}  // namespace hybridseg
