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

#include "hybridseg/mamba.hpp"

#include <cmath>

#include "hybridseg/errors.hpp"
#include "hybridseg/ops.hpp"

namespace hybridseg {

namespace {

double inverse_softplus(double y) { return y + std::log(-std::expm1(-y)); }

void check_lengths(std::int64_t rows, std::int64_t group_size, std::span<const std::int64_t> valid_lengths) {
  if (group_size < 1 || rows != group_size * static_cast<std::int64_t>(valid_lengths.size())) {
    throw DimensionError("scan: " + std::to_string(rows) + " rows do not form " +
                         std::to_string(valid_lengths.size()) + " groups of " + std::to_string(group_size));
  }
  for (auto n : valid_lengths) {
    if (n < 0 || n > group_size) throw DimensionError("scan: valid length " + std::to_string(n) + " out of range");
  }
}

}  // namespace

ScanParams ScanParams::create(ParameterStore& store, const std::string& prefix, std::int64_t inner,
                              const MambaOptions& options, Rng& rng) {
  const std::int64_t n = options.state_dim;
  const double bound = 1.0 / std::sqrt(static_cast<double>(inner));
  ScanParams p;
  // -A in {1..Dstate} per state channel.
  Tensor a_log(Shape{inner, n});
  for (std::int64_t e = 0; e < inner; ++e) {
    for (std::int64_t s = 0; s < n; ++s) a_log.mutable_data()[e * n + s] = std::log(static_cast<double>(s + 1));
  }
  p.a_log = store.add(prefix + ".a_log", a_log);
  p.wb = store.add(prefix + ".wb", uniform_tensor(Shape{inner, n}, bound, rng));
  p.wc = store.add(prefix + ".wc", uniform_tensor(Shape{inner, n}, bound, rng));
  p.wdelta = store.add(prefix + ".wdelta", uniform_tensor(Shape{inner, inner}, bound, rng));
  // Initial step sizes log-uniform in [1e-3, 0.1].
  Tensor bdelta(Shape{inner});
  for (double& v : bdelta.mutable_data()) {
    const double step = std::exp(rng.uniform(std::log(1e-3), std::log(0.1)));
    v = inverse_softplus(step);
  }
  p.bdelta = store.add(prefix + ".bdelta", bdelta);
  p.d = store.add(prefix + ".d", Tensor(Shape{inner}, 1.0));
  p.conv_weight = store.add(prefix + ".conv_weight",
                            uniform_tensor(Shape{inner, options.conv_width},
                                           1.0 / std::sqrt(static_cast<double>(options.conv_width)), rng));
  p.conv_bias = store.add(prefix + ".conv_bias", Tensor(Shape{inner}));
  return p;
}

ScanParams ScanParams::load(const ParameterStore& store, const std::string& prefix) {
  ScanParams p;
  p.a_log = store.at(prefix + ".a_log");
  p.wb = store.at(prefix + ".wb");
  p.wc = store.at(prefix + ".wc");
  p.wdelta = store.at(prefix + ".wdelta");
  p.bdelta = store.at(prefix + ".bdelta");
  p.d = store.at(prefix + ".d");
  p.conv_weight = store.at(prefix + ".conv_weight");
  p.conv_bias = store.at(prefix + ".conv_bias");
  return p;
}

SsmParams SsmParams::create(ParameterStore& store, const std::string& prefix, std::int64_t channels,
                            const MambaOptions& options, Rng& rng) {
  const std::int64_t inner = options.expand * channels;
  SsmParams p;
  p.norm = NormParams::create(store, prefix + ".norm", channels);
  p.win = store.add(prefix + ".win",
                    uniform_tensor(Shape{channels, 2 * inner}, 1.0 / std::sqrt(static_cast<double>(channels)), rng));
  p.wout = store.add(prefix + ".wout",
                     uniform_tensor(Shape{inner, channels}, 1.0 / std::sqrt(static_cast<double>(inner)), rng));
  p.forward = ScanParams::create(store, prefix + ".fwd", inner, options, rng);
  p.backward = ScanParams::create(store, prefix + ".bwd", inner, options, rng);
  return p;
}

SsmParams SsmParams::load(const ParameterStore& store, const std::string& prefix) {
  SsmParams p;
  p.norm = NormParams::load(store, prefix + ".norm");
  p.win = store.at(prefix + ".win");
  p.wout = store.at(prefix + ".wout");
  p.forward = ScanParams::load(store, prefix + ".fwd");
  p.backward = ScanParams::load(store, prefix + ".bwd");
  return p;
}

std::vector<double> selective_scan_reference(const ScanProblem& problem) {
  const auto t_len = problem.length;
  const auto e_len = problem.channels;
  const auto n_len = problem.state;
  std::vector<std::vector<double>> h(static_cast<std::size_t>(e_len), std::vector<double>(n_len, 0.0));
  std::vector<double> y(static_cast<std::size_t>(t_len * e_len), 0.0);
  for (std::int64_t t = 0; t < t_len; ++t) {
    for (std::int64_t e = 0; e < e_len; ++e) {
      const double step = problem.delta[t * e_len + e];
      const double u = problem.x[t * e_len + e];
      double out = 0.0;
      for (std::int64_t n = 0; n < n_len; ++n) {
        const double a_bar = std::exp(step * problem.a[e * n_len + n]);
        const double b_bar = step * problem.b[t * n_len + n];
        h[e][n] = a_bar * h[e][n] + b_bar * u;
        out += problem.c[t * n_len + n] * h[e][n];
      }
      y[t * e_len + e] = out + problem.d[e] * u;
    }
  }
  return y;
}

Tensor selective_scan(const Tensor& x, const Tensor& delta, const Tensor& a_log, const Tensor& b, const Tensor& c,
                      const Tensor& d, std::int64_t group_size, std::span<const std::int64_t> valid_lengths) {
  if (x.rank() != 2 || delta.shape() != x.shape() || a_log.rank() != 2 || a_log.dim(0) != x.dim(1) ||
      b.rank() != 2 || b.dim(0) != x.dim(0) || b.dim(1) != a_log.dim(1) || c.shape() != b.shape() ||
      d.numel() != x.dim(1)) {
    throw DimensionError("selective_scan: inconsistent shapes x" + shape_string(x.shape()) + " delta" +
                         shape_string(delta.shape()) + " A" + shape_string(a_log.shape()) + " B" +
                         shape_string(b.shape()) + " C" + shape_string(c.shape()) + " D" + shape_string(d.shape()));
  }
  const std::int64_t rows = x.dim(0);
  const std::int64_t ne = x.dim(1);
  const std::int64_t ns = a_log.dim(1);
  check_lengths(rows, group_size, valid_lengths);
  std::vector<double> a(static_cast<std::size_t>(ne * ns));
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = -std::exp(a_log.data()[i]);

  Tensor out(x.shape());
  {
    auto xv = x.data();
    auto dv = delta.data();
    auto bv = b.data();
    auto cv = c.data();
    auto skip = d.data();
    auto yv = out.mutable_data();
    std::vector<double> h(static_cast<std::size_t>(ne * ns));
    for (std::size_t g = 0; g < valid_lengths.size(); ++g) {
      std::fill(h.begin(), h.end(), 0.0);
      const std::int64_t r0 = static_cast<std::int64_t>(g) * group_size;
      for (std::int64_t t = r0; t < r0 + valid_lengths[g]; ++t) {
        const double* bt = bv.data() + t * ns;
        const double* ct = cv.data() + t * ns;
        for (std::int64_t e = 0; e < ne; ++e) {
          const double step = dv[t * ne + e];
          const double u = xv[t * ne + e];
          double* he = h.data() + e * ns;
          const double* ae = a.data() + e * ns;
          double acc = 0.0;
          for (std::int64_t s = 0; s < ns; ++s) {
            he[s] = std::exp(step * ae[s]) * he[s] + (step * bt[s]) * u;
            acc += ct[s] * he[s];
          }
          yv[t * ne + e] = acc + skip[e] * u;
        }
      }
    }
  }

  if (should_record({&x, &delta, &a_log, &b, &c, &d})) {
    out.set_requires_grad(true);
    active_tape()->record([x, delta, a_log, b, c, d, out, rows, ne, ns, group_size, a = std::move(a),
                           lengths = std::vector<std::int64_t>(valid_lengths.begin(), valid_lengths.end())]() mutable {
      if (!out.has_grad()) return;
      auto go = out.grad();
      auto xv = x.data();
      auto dv = delta.data();
      auto bv = b.data();
      auto cv = c.data();
      auto skip = d.data();
      std::vector<double> gx(xv.size(), 0.0), gdelta(dv.size(), 0.0), gb(bv.size(), 0.0), gc(cv.size(), 0.0);
      std::vector<double> ga(a.size(), 0.0), gd(static_cast<std::size_t>(ne), 0.0);
      std::vector<double> states;
      std::vector<double> carry(static_cast<std::size_t>(ne * ns));
      for (std::size_t g = 0; g < lengths.size(); ++g) {
        const std::int64_t r0 = static_cast<std::int64_t>(g) * group_size;
        const std::int64_t len = lengths[g];
        if (len == 0) continue;
        // Recompute h_t for the group.
        states.assign(static_cast<std::size_t>(len * ne * ns), 0.0);
        for (std::int64_t i = 0; i < len; ++i) {
          const std::int64_t t = r0 + i;
          const double* bt = bv.data() + t * ns;
          double* hi = states.data() + i * ne * ns;
          const double* hp = i > 0 ? hi - ne * ns : nullptr;
          for (std::int64_t e = 0; e < ne; ++e) {
            const double step = dv[t * ne + e];
            const double u = xv[t * ne + e];
            for (std::int64_t s = 0; s < ns; ++s) {
              const double prev = hp ? hp[e * ns + s] : 0.0;
              hi[e * ns + s] = std::exp(step * a[e * ns + s]) * prev + (step * bt[s]) * u;
            }
          }
        }
        std::fill(carry.begin(), carry.end(), 0.0);
        for (std::int64_t i = len - 1; i >= 0; --i) {
          const std::int64_t t = r0 + i;
          const double* bt = bv.data() + t * ns;
          const double* ct = cv.data() + t * ns;
          const double* hi = states.data() + i * ne * ns;
          const double* hp = i > 0 ? hi - ne * ns : nullptr;
          for (std::int64_t e = 0; e < ne; ++e) {
            const double dy = go[t * ne + e];
            const double step = dv[t * ne + e];
            const double u = xv[t * ne + e];
            gd[e] += dy * u;
            double g_step = 0.0;
            double g_u = dy * skip[e];
            for (std::int64_t s = 0; s < ns; ++s) {
              const std::int64_t es = e * ns + s;
              const double gh = carry[es] + dy * ct[s];
              gc[t * ns + s] += dy * hi[es];
              const double a_bar = std::exp(step * a[es]);
              const double prev = hp ? hp[es] : 0.0;
              const double g_abar = gh * prev * a_bar;
              g_step += g_abar * a[es] + gh * bt[s] * u;
              ga[es] += g_abar * step;
              gb[t * ns + s] += gh * step * u;
              g_u += gh * step * bt[s];
              carry[es] = gh * a_bar;
            }
            gdelta[t * ne + e] += g_step;
            gx[t * ne + e] += g_u;
          }
        }
      }
      auto accumulate = [](const Tensor& t, const std::vector<double>& grad) {
        if (!t.requires_grad()) return;
        auto dst = t.mutable_grad();
        for (std::size_t i = 0; i < grad.size(); ++i) dst[i] += grad[i];
      };
      accumulate(x, gx);
      accumulate(delta, gdelta);
      accumulate(b, gb);
      accumulate(c, gc);
      accumulate(d, gd);
      if (a_log.requires_grad()) {
        // dA/da_log = A.
        auto dst = a_log.mutable_grad();
        for (std::size_t i = 0; i < ga.size(); ++i) dst[i] += ga[i] * a[i];
      }
    });
  }
  return out;
}

Tensor causal_depthwise_conv(const Tensor& x, const Tensor& weight, const Tensor& bias, std::int64_t group_size,
                             std::span<const std::int64_t> valid_lengths) {
  if (x.rank() != 2 || weight.rank() != 2 || weight.dim(0) != x.dim(1) || bias.numel() != x.dim(1)) {
    throw DimensionError("causal_depthwise_conv: x" + shape_string(x.shape()) + " weight" +
                         shape_string(weight.shape()) + " bias" + shape_string(bias.shape()));
  }
  const std::int64_t ne = x.dim(1);
  const std::int64_t width = weight.dim(1);
  check_lengths(x.dim(0), group_size, valid_lengths);
  Tensor out(x.shape());
  auto xv = x.data();
  auto wv = weight.data();
  auto bv = bias.data();
  auto ov = out.mutable_data();
  for (std::size_t g = 0; g < valid_lengths.size(); ++g) {
    const std::int64_t r0 = static_cast<std::int64_t>(g) * group_size;
    for (std::int64_t i = 0; i < valid_lengths[g]; ++i) {
      const std::int64_t t = r0 + i;
      for (std::int64_t e = 0; e < ne; ++e) {
        double acc = bv[e];
        for (std::int64_t k = 0; k < width && k <= i; ++k) acc += wv[e * width + k] * xv[(t - k) * ne + e];
        ov[t * ne + e] = acc;
      }
    }
  }
  if (should_record({&x, &weight, &bias})) {
    out.set_requires_grad(true);
    active_tape()->record([x, weight, bias, out, ne, width, group_size,
                           lengths = std::vector<std::int64_t>(valid_lengths.begin(), valid_lengths.end())]() mutable {
      if (!out.has_grad()) return;
      auto go = out.grad();
      auto xv = x.data();
      auto wv = weight.data();
      std::vector<double> gx(xv.size(), 0.0), gw(wv.size(), 0.0), gb(static_cast<std::size_t>(ne), 0.0);
      for (std::size_t g = 0; g < lengths.size(); ++g) {
        const std::int64_t r0 = static_cast<std::int64_t>(g) * group_size;
        for (std::int64_t i = 0; i < lengths[g]; ++i) {
          const std::int64_t t = r0 + i;
          for (std::int64_t e = 0; e < ne; ++e) {
            const double dy = go[t * ne + e];
            gb[e] += dy;
            for (std::int64_t k = 0; k < width && k <= i; ++k) {
              gw[e * width + k] += dy * xv[(t - k) * ne + e];
              gx[(t - k) * ne + e] += dy * wv[e * width + k];
            }
          }
        }
      }
      auto accumulate = [](const Tensor& t, const std::vector<double>& grad) {
        if (!t.requires_grad()) return;
        auto dst = t.mutable_grad();
        for (std::size_t i = 0; i < grad.size(); ++i) dst[i] += grad[i];
      };
      accumulate(x, gx);
      accumulate(weight, gw);
      accumulate(bias, gb);
    });
  }
  return out;
}

std::vector<std::int64_t> reverse_within_groups(const GroupedFeatures& grouped) {
  const std::int64_t s = grouped.group_size;
  std::vector<std::int64_t> index(static_cast<std::size_t>(grouped.num_groups() * s), -1);
  for (std::int64_t g = 0; g < grouped.num_groups(); ++g) {
    const std::int64_t n = grouped.valid_in_group(g);
    for (std::int64_t i = 0; i < n; ++i) index[g * s + i] = g * s + (n - 1 - i);
  }
  return index;
}

namespace {

Tensor scan_direction(const Tensor& x, const ScanParams& p, std::int64_t group_size,
                      std::span<const std::int64_t> lengths) {
  Tensor conv = silu(causal_depthwise_conv(x, p.conv_weight, p.conv_bias, group_size, lengths));
  Tensor step = softplus(linear(conv, p.wdelta, p.bdelta));
  Tensor bseq = linear(conv, p.wb);
  Tensor cseq = linear(conv, p.wc);
  return selective_scan(conv, step, p.a_log, bseq, cseq, p.d, group_size, lengths);
}

}  // namespace

GroupedFeatures bidirectional_mamba(const GroupedFeatures& grouped, const SsmParams& params) {
  if (grouped.channels() != params.channels()) {
    throw DimensionError("bidirectional_mamba: features have " + std::to_string(grouped.channels()) +
                         " channels, parameters expect " + std::to_string(params.channels()));
  }
  const std::int64_t groups = grouped.num_groups();
  const std::int64_t s = grouped.group_size;
  const std::int64_t rows = groups * s;
  const std::int64_t inner = params.inner();
  std::vector<std::int64_t> lengths(static_cast<std::size_t>(groups));
  for (std::int64_t g = 0; g < groups; ++g) lengths[g] = grouped.valid_in_group(g);
  // Row mask zeroes padded slots on the way in.
  std::vector<std::int64_t> keep(static_cast<std::size_t>(rows), -1);
  for (std::int64_t r = 0; r < rows; ++r) {
    if (grouped.valid_mask[r]) keep[r] = r;
  }

  Tensor input = gather_rows(grouped.values.reshape(Shape{rows, grouped.channels()}), keep);
  Tensor projected = linear(input, params.win);
  Tensor x = slice_cols(projected, 0, inner);
  Tensor gate = silu(slice_cols(projected, inner, 2 * inner));

  Tensor forward = scan_direction(x, params.forward, s, lengths);
  const auto reverse = reverse_within_groups(grouped);
  Tensor backward = gather_rows(scan_direction(gather_rows(x, reverse), params.backward, s, lengths), reverse);

  Tensor mixed = mul(add(forward, backward), gate);
  Tensor out = gather_rows(linear(mixed, params.wout), keep);
  return grouped.with_values(out.reshape(grouped.values.shape()));
}

Tensor mamba_sublayer(const Tensor& features, const SerializedOrder& order, std::int64_t group_size,
                      const SsmParams& params) {
  GroupedFeatures grouped = partition(params.norm(features), order, group_size);
  GroupedFeatures mixed = bidirectional_mamba(grouped, params);
  return add(features, restore(mixed, order));
}

}  // namespace hybridseg
