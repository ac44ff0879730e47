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
#include <vector>

#include "hybridseg/tensor.hpp"

namespace hybridseg {

// Differentiable primitives. Each op computes its output eagerly and, when a
// tape is active and some input requires a gradient, records the matching
// backward rule. Matrices are [rows x cols] row-major.

// out[i,j] = sum_k x[i,k] * weight[k,j] + bias[j]. `bias` may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = Tensor());

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

// Numerically stable softmax along `axis` (negative counts from the back).
Tensor softmax(const Tensor& x, int axis = -1);

// Per-row normalization over the last dimension of an [N x C] matrix.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// Exact (erf) GELU.
Tensor gelu(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor softplus(const Tensor& x);

// out[i,:] = x[index[i],:], or a zero row where index[i] < 0.
// Backward scatter-adds, so repeated indices accumulate.
Tensor gather_rows(const Tensor& x, std::span<const std::int64_t> index);

// Mean of the rows of x sharing a segment id; every segment must be non-empty.
Tensor segment_mean(const Tensor& x, std::span<const std::int64_t> segment, std::int64_t num_segments);

// Columns [begin, end) of an [N x C] matrix.
Tensor slice_cols(const Tensor& x, std::int64_t begin, std::int64_t end);
Tensor concat_cols(const Tensor& a, const Tensor& b);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// sum_i x[i] * weights[i] with constant weights.
Tensor weighted_sum(const Tensor& x, std::span<const double> weights);

// Non-differentiable helpers shared by kernels and oracles.
namespace kernels {
double gelu(double x);
double gelu_grad(double x);
double sigmoid(double x);
double softplus(double x);
// Softmax of one contiguous row in place.
void softmax_row(std::span<double> row);
}  // namespace kernels

}  // namespace hybridseg
