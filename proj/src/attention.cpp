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

#include "hybridseg/attention.hpp"

#include <cmath>

#include "hybridseg/errors.hpp"
#include "hybridseg/ops.hpp"

namespace hybridseg {

namespace {

void check_heads(std::int64_t channels, int num_heads) {
  if (num_heads < 1 || channels % num_heads != 0) {
    throw ConfigError("attention: " + std::to_string(channels) + " channels not divisible by " +
                      std::to_string(num_heads) + " heads");
  }
}

// Scores for one (group, head): probs[i*n + j] = softmax_j(q_i . k_j * scale).
void head_probabilities(const double* q, const double* k, std::int64_t n, std::int64_t c, std::int64_t offset,
                        std::int64_t d, double scale, std::vector<double>& probs) {
  probs.resize(static_cast<std::size_t>(n * n));
  for (std::int64_t i = 0; i < n; ++i) {
    const double* qi = q + i * c + offset;
    double* row = probs.data() + i * n;
    for (std::int64_t j = 0; j < n; ++j) {
      const double* kj = k + j * c + offset;
      double dot = 0.0;
      for (std::int64_t t = 0; t < d; ++t) dot += qi[t] * kj[t];
      row[j] = dot * scale;
    }
    kernels::softmax_row({row, static_cast<std::size_t>(n)});
  }
}

}  // namespace

AttentionParams AttentionParams::create(ParameterStore& store, const std::string& prefix, std::int64_t channels,
                                        int num_heads, Rng& rng) {
  check_heads(channels, num_heads);
  const double bound = 1.0 / std::sqrt(static_cast<double>(channels));
  AttentionParams p;
  p.norm = NormParams::create(store, prefix + ".norm", channels);
  p.wq = store.add(prefix + ".wq", uniform_tensor(Shape{channels, channels}, bound, rng));
  p.wk = store.add(prefix + ".wk", uniform_tensor(Shape{channels, channels}, bound, rng));
  p.wv = store.add(prefix + ".wv", uniform_tensor(Shape{channels, channels}, bound, rng));
  p.wo = store.add(prefix + ".wo", uniform_tensor(Shape{channels, channels}, bound, rng));
  p.num_heads = num_heads;
  return p;
}

AttentionParams AttentionParams::load(const ParameterStore& store, const std::string& prefix, int num_heads) {
  AttentionParams p;
  p.norm = NormParams::load(store, prefix + ".norm");
  p.wq = store.at(prefix + ".wq");
  p.wk = store.at(prefix + ".wk");
  p.wv = store.at(prefix + ".wv");
  p.wo = store.at(prefix + ".wo");
  p.num_heads = num_heads;
  check_heads(p.channels(), num_heads);
  return p;
}

Tensor masked_group_attention(const Tensor& q, const Tensor& k, const Tensor& v, const GroupedFeatures& grouping,
                              int num_heads) {
  const Shape& shape = grouping.values.shape();
  if (q.shape() != shape || k.shape() != shape || v.shape() != shape) {
    throw DimensionError("masked_group_attention: q/k/v must match grouping " + shape_string(shape));
  }
  const std::int64_t groups = shape[0];
  const std::int64_t s = shape[1];
  const std::int64_t c = shape[2];
  check_heads(c, num_heads);
  const std::int64_t d = c / num_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<std::int64_t> valid(static_cast<std::size_t>(groups));
  for (std::int64_t g = 0; g < groups; ++g) valid[g] = grouping.valid_in_group(g);

  Tensor out(shape);
  auto qv = q.data();
  auto kv = k.data();
  auto vv = v.data();
  auto ov = out.mutable_data();
  std::vector<double> probs;
  for (std::int64_t g = 0; g < groups; ++g) {
    const std::int64_t n = valid[g];
    const std::int64_t base = g * s * c;
    for (int h = 0; h < num_heads; ++h) {
      const std::int64_t off = h * d;
      head_probabilities(qv.data() + base, kv.data() + base, n, c, off, d, scale, probs);
      for (std::int64_t i = 0; i < n; ++i) {
        double* oi = ov.data() + base + i * c + off;
        for (std::int64_t j = 0; j < n; ++j) {
          const double p = probs[i * n + j];
          const double* vj = vv.data() + base + j * c + off;
          for (std::int64_t t = 0; t < d; ++t) oi[t] += p * vj[t];
        }
      }
    }
  }

  if (should_record({&q, &k, &v})) {
    out.set_requires_grad(true);
    active_tape()->record([q, k, v, out, groups, s, c, d, num_heads, scale, valid]() mutable {
      if (!out.has_grad()) return;
      auto go = out.grad();
      auto qv = q.data();
      auto kv = k.data();
      auto vv = v.data();
      // Scratch gradients; copied out only for inputs that need them.
      std::vector<double> gq(qv.size(), 0.0), gk(kv.size(), 0.0), gv(vv.size(), 0.0);
      std::vector<double> probs, dprobs;
      for (std::int64_t g = 0; g < groups; ++g) {
        const std::int64_t n = valid[g];
        const std::int64_t base = g * s * c;
        for (int h = 0; h < num_heads; ++h) {
          const std::int64_t off = h * d;
          head_probabilities(qv.data() + base, kv.data() + base, n, c, off, d, scale, probs);
          dprobs.assign(static_cast<std::size_t>(n * n), 0.0);
          for (std::int64_t i = 0; i < n; ++i) {
            const double* goi = go.data() + base + i * c + off;
            for (std::int64_t j = 0; j < n; ++j) {
              const double* vj = vv.data() + base + j * c + off;
              double* gvj = gv.data() + base + j * c + off;
              const double p = probs[i * n + j];
              double dot = 0.0;
              for (std::int64_t t = 0; t < d; ++t) {
                dot += goi[t] * vj[t];
                gvj[t] += p * goi[t];
              }
              dprobs[i * n + j] = dot;
            }
          }
          for (std::int64_t i = 0; i < n; ++i) {
            double row_dot = 0.0;
            for (std::int64_t j = 0; j < n; ++j) row_dot += probs[i * n + j] * dprobs[i * n + j];
            const double* qi = qv.data() + base + i * c + off;
            double* gqi = gq.data() + base + i * c + off;
            for (std::int64_t j = 0; j < n; ++j) {
              const double ds = probs[i * n + j] * (dprobs[i * n + j] - row_dot) * scale;
              if (ds == 0.0) continue;
              const double* kj = kv.data() + base + j * c + off;
              double* gkj = gk.data() + base + j * c + off;
              for (std::int64_t t = 0; t < d; ++t) {
                gqi[t] += ds * kj[t];
                gkj[t] += ds * qi[t];
              }
            }
          }
        }
      }
      auto accumulate = [](const Tensor& t, const std::vector<double>& g) {
        if (!t.requires_grad()) return;
        auto dst = t.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
      };
      accumulate(q, gq);
      accumulate(k, gk);
      accumulate(v, gv);
    });
  }
  return out;
}

GroupedFeatures grouped_msa(const GroupedFeatures& grouped, const AttentionParams& params) {
  if (grouped.channels() != params.channels()) {
    throw DimensionError("grouped_msa: features have " + std::to_string(grouped.channels()) +
                         " channels, parameters expect " + std::to_string(params.channels()));
  }
  Tensor q = linear(grouped.values, params.wq);
  Tensor k = linear(grouped.values, params.wk);
  Tensor v = linear(grouped.values, params.wv);
  Tensor attended = masked_group_attention(q, k, v, grouped, params.num_heads);
  return grouped.with_values(linear(attended, params.wo));
}

std::vector<double> attention_weights(const GroupedFeatures& grouped, const AttentionParams& params,
                                      std::int64_t group, int head) {
  Tensor q = linear(grouped.values, params.wq);
  Tensor k = linear(grouped.values, params.wk);
  const std::int64_t s = grouped.group_size;
  const std::int64_t c = grouped.channels();
  const std::int64_t d = params.head_dim();
  std::vector<double> probs;
  head_probabilities(q.data().data() + group * s * c, k.data().data() + group * s * c, grouped.valid_in_group(group),
                     c, head * d, d, 1.0 / std::sqrt(static_cast<double>(d)), probs);
  return probs;
}

Tensor attention_sublayer(const Tensor& features, const SerializedOrder& order, std::int64_t group_size,
                          const AttentionParams& params) {
  GroupedFeatures grouped = partition(params.norm(features), order, group_size);
  GroupedFeatures mixed = grouped_msa(grouped, params);
  return add(features, restore(mixed, order));
}

}  // namespace hybridseg
