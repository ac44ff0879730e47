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

#include "hybridseg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "hybridseg/errors.hpp"

namespace hybridseg {

namespace kernels {

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) {
  if (x > 30.0) return x;
  return std::log1p(std::exp(x));
}

void softmax_row(std::span<double> row) {
  const double mx = *std::max_element(row.begin(), row.end());
  double total = 0.0;
  for (double& v : row) {
    v = std::exp(v - mx);
    total += v;
  }
  for (double& v : row) v /= total;
}

}  // namespace kernels

namespace {

Shape with_last(Shape shape, std::int64_t last) {
  shape.back() = last;
  return shape;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

template <typename Fn, typename Grad>
Tensor unary_map(const Tensor& x, Fn fn, Grad grad) {
  Tensor out(x.shape());
  auto xv = x.data();
  auto ov = out.mutable_data();
  for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = fn(xv[i]);
  if (should_record({&x})) {
    out.set_requires_grad(true);
    active_tape()->record([x, out, grad]() mutable {
      if (!out.has_grad()) return;
      auto go = out.grad();
      auto xv = x.data();
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += go[i] * grad(xv[i]);
    });
  }
  return out;
}

}  // namespace

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.rank() != 2 || x.rank() < 1 || x.shape().back() != weight.dim(0)) {
    throw DimensionError("linear: input " + shape_string(x.shape()) + " incompatible with weight " +
                         shape_string(weight.shape()));
  }
  const std::int64_t cin = weight.dim(0);
  const std::int64_t cout = weight.dim(1);
  if (bias.defined() && bias.numel() != cout) {
    throw DimensionError("linear: bias " + shape_string(bias.shape()) + " does not match weight " +
                         shape_string(weight.shape()));
  }
  const std::int64_t rows = x.numel() / cin;
  Tensor out(with_last(x.shape(), cout));
  auto xv = x.data();
  auto wv = weight.data();
  auto ov = out.mutable_data();
  for (std::int64_t i = 0; i < rows; ++i) {
    double* orow = ov.data() + i * cout;
    if (bias.defined()) std::copy(bias.data().begin(), bias.data().end(), orow);
    const double* xrow = xv.data() + i * cin;
    for (std::int64_t k = 0; k < cin; ++k) {
      const double a = xrow[k];
      if (a == 0.0) continue;
      const double* wrow = wv.data() + k * cout;
      for (std::int64_t j = 0; j < cout; ++j) orow[j] += a * wrow[j];
    }
  }
  if (should_record({&x, &weight, &bias})) {
    out.set_requires_grad(true);
    active_tape()->record([x, weight, bias, out, rows, cin, cout]() mutable {
      if (!out.has_grad()) return;
      auto go = out.grad();
      auto xv = x.data();
      auto wv = weight.data();
      if (x.requires_grad()) {
        auto gx = x.mutable_grad();
        for (std::int64_t i = 0; i < rows; ++i) {
          const double* grow = go.data() + i * cout;
          double* gxrow = gx.data() + i * cin;
          for (std::int64_t k = 0; k < cin; ++k) {
            const double* wrow = wv.data() + k * cout;
            double acc = 0.0;
            for (std::int64_t j = 0; j < cout; ++j) acc += grow[j] * wrow[j];
            gxrow[k] += acc;
          }
        }
      }
      if (weight.requires_grad()) {
        auto gw = weight.mutable_grad();
        for (std::int64_t i = 0; i < rows; ++i) {
          const double* grow = go.data() + i * cout;
          const double* xrow = xv.data() + i * cin;
          for (std::int64_t k = 0; k < cin; ++k) {
            const double a = xrow[k];
            if (a == 0.0) continue;
            double* gwrow = gw.data() + k * cout;
            for (std::int64_t j = 0; j < cout; ++j) gwrow[j] += a * grow[j];
          }
        }
      }
      if (bias.defined() && bias.requires_grad()) {
        auto gb = bias.mutable_grad();
        for (std::int64_t i = 0; i < rows; ++i) {
          const double* grow = go.data() + i * cout;
          for (std::int64_t j = 0; j < cout; ++j) gb[j] += grow[j];
        }
      }
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  auto av = a.data();
  auto bv = b.data();
  auto ov = out.mutable_data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  if (should_record({&a, &b})) {
    out.set_requires_grad(true);
    active_tape()->record([a, b, out]() mutable {
      if (!out.has_grad()) return;
      auto go = out.grad();
      if (a.requires_grad()) {
        auto ga = a.mutable_grad();
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
      }
      if (b.requires_grad()) {
        auto gb = b.mutable_grad();
        for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  auto av = a.data();
  auto bv = b.data();
  auto ov = out.mutable_data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  if (should_record({&a, &b})) {
    out.set_requires_grad(true);
    active_tape()->record([a, b, out]() mutable {
      if (!out.has_grad()) return;
      auto go = out.grad();
      auto av = a.data();
      auto bv = b.data();
      if (a.requires_grad()) {
        auto ga = a.mutable_grad();
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bv[i];
      }
      if (b.requires_grad()) {
        auto gb = b.mutable_grad();
        for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * av[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double factor) {
  return unary_map(a, [factor](double v) { return v * factor; }, [factor](double) { return factor; });
}

Tensor softmax(const Tensor& x, int axis) {
  const int r = x.rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw DimensionError("softmax: axis out of range for " + shape_string(x.shape()));
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  for (int i = axis + 1; i < r; ++i) inner *= x.dim(i);
  const std::int64_t len = x.dim(axis);

  Tensor out(x.shape());
  auto xv = x.data();
  auto ov = out.mutable_data();
  std::vector<double> row(static_cast<std::size_t>(len));
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t in = 0; in < inner; ++in) {
      const std::int64_t base = o * len * inner + in;
      for (std::int64_t k = 0; k < len; ++k) row[k] = xv[base + k * inner];
      kernels::softmax_row(row);
      for (std::int64_t k = 0; k < len; ++k) ov[base + k * inner] = row[k];
    }
  }
  if (should_record({&x})) {
    out.set_requires_grad(true);
    active_tape()->record([x, out, outer, inner, len]() mutable {
      if (!out.has_grad()) return;
      auto go = out.grad();
      auto ov = out.data();
      auto gx = x.mutable_grad();
      for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t in = 0; in < inner; ++in) {
          const std::int64_t base = o * len * inner + in;
          double dot = 0.0;
          for (std::int64_t k = 0; k < len; ++k) dot += go[base + k * inner] * ov[base + k * inner];
          for (std::int64_t k = 0; k < len; ++k) {
            const auto idx = base + k * inner;
            gx[idx] += ov[idx] * (go[idx] - dot);
          }
        }
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::int64_t c = x.shape().back();
  if (gamma.numel() != c || beta.numel() != c) {
    throw DimensionError("layer_norm: input " + shape_string(x.shape()) + " with gamma " +
                         shape_string(gamma.shape()) + " and beta " + shape_string(beta.shape()));
  }
  const std::int64_t rows = x.numel() / c;
  Tensor out(x.shape());
  auto xv = x.data();
  auto gv = gamma.data();
  auto bv = beta.data();
  auto ov = out.mutable_data();
  // xhat and 1/sigma per row are kept for the backward rule.
  std::vector<double> xhat(xv.size());
  std::vector<double> inv_std(static_cast<std::size_t>(rows));
  for (std::int64_t i = 0; i < rows; ++i) {
    const double* row = xv.data() + i * c;
    double mu = 0.0;
    for (std::int64_t k = 0; k < c; ++k) mu += row[k];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::int64_t k = 0; k < c; ++k) var += (row[k] - mu) * (row[k] - mu);
    var /= static_cast<double>(c);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[i] = is;
    for (std::int64_t k = 0; k < c; ++k) {
      const double h = (row[k] - mu) * is;
      xhat[i * c + k] = h;
      ov[i * c + k] = h * gv[k] + bv[k];
    }
  }
  if (should_record({&x, &gamma, &beta})) {
    out.set_requires_grad(true);
    active_tape()->record([x, gamma, beta, out, rows, c, xhat = std::move(xhat),
                           inv_std = std::move(inv_std)]() mutable {
      if (!out.has_grad()) return;
      auto go = out.grad();
      auto gv = gamma.data();
      if (gamma.requires_grad() || beta.requires_grad()) {
        for (std::int64_t i = 0; i < rows; ++i) {
          for (std::int64_t k = 0; k < c; ++k) {
            const auto idx = i * c + k;
            if (gamma.requires_grad()) gamma.mutable_grad()[k] += go[idx] * xhat[idx];
            if (beta.requires_grad()) beta.mutable_grad()[k] += go[idx];
          }
        }
      }
      if (x.requires_grad()) {
        auto gx = x.mutable_grad();
        const double inv_c = 1.0 / static_cast<double>(c);
        for (std::int64_t i = 0; i < rows; ++i) {
          double mean_g = 0.0, mean_gx = 0.0;
          for (std::int64_t k = 0; k < c; ++k) {
            const double g = go[i * c + k] * gv[k];
            mean_g += g;
            mean_gx += g * xhat[i * c + k];
          }
          mean_g *= inv_c;
          mean_gx *= inv_c;
          for (std::int64_t k = 0; k < c; ++k) {
            const auto idx = i * c + k;
            const double g = go[idx] * gv[k];
            gx[idx] += inv_std[i] * (g - mean_g - xhat[idx] * mean_gx);
          }
        }
      }
    });
  }
  return out;
}

Tensor gelu(const Tensor& x) { return unary_map(x, kernels::gelu, kernels::gelu_grad); }

Tensor silu(const Tensor& x) {
  return unary_map(
      x, [](double v) { return v * kernels::sigmoid(v); },
      [](double v) {
        const double s = kernels::sigmoid(v);
        return s * (1.0 + v * (1.0 - s));
      });
}

Tensor softplus(const Tensor& x) { return unary_map(x, kernels::softplus, kernels::sigmoid); }

Tensor gather_rows(const Tensor& x, std::span<const std::int64_t> index) {
  if (x.rank() < 1) throw DimensionError("gather_rows: scalar input");
  const std::int64_t n = x.dim(0);
  const std::int64_t c = x.numel() / n;
  for (auto i : index) {
    if (i >= n) {
      throw MappingError("gather_rows: index " + std::to_string(i) + " out of range for " + std::to_string(n) +
                         " rows");
    }
  }
  Shape shape = x.shape();
  shape[0] = static_cast<std::int64_t>(index.size());
  Tensor out(shape);
  auto xv = x.data();
  auto ov = out.mutable_data();
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] < 0) continue;
    std::copy_n(xv.data() + index[r] * c, c, ov.data() + static_cast<std::int64_t>(r) * c);
  }
  if (should_record({&x})) {
    out.set_requires_grad(true);
    active_tape()->record([x, out, c, idx = std::vector<std::int64_t>(index.begin(), index.end())]() mutable {
      if (!out.has_grad()) return;
      auto go = out.grad();
      auto gx = x.mutable_grad();
      for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] < 0) continue;
        const double* src = go.data() + static_cast<std::int64_t>(r) * c;
        double* dst = gx.data() + idx[r] * c;
        for (std::int64_t k = 0; k < c; ++k) dst[k] += src[k];
      }
    });
  }
  return out;
}

Tensor segment_mean(const Tensor& x, std::span<const std::int64_t> segment, std::int64_t num_segments) {
  const std::int64_t n = x.dim(0);
  const std::int64_t c = x.numel() / n;
  if (static_cast<std::int64_t>(segment.size()) != n) {
    throw DimensionError("segment_mean: " + std::to_string(segment.size()) + " segment ids for " +
                         std::to_string(n) + " rows");
  }
  std::vector<double> counts(static_cast<std::size_t>(num_segments), 0.0);
  for (auto s : segment) {
    if (s < 0 || s >= num_segments) throw MappingError("segment_mean: segment id " + std::to_string(s) + " out of range");
    counts[s] += 1.0;
  }
  for (double cnt : counts) {
    if (cnt == 0.0) throw MappingError("segment_mean: empty segment");
  }
  Shape shape = x.shape();
  shape[0] = num_segments;
  Tensor out(shape);
  auto xv = x.data();
  auto ov = out.mutable_data();
  for (std::int64_t i = 0; i < n; ++i) {
    double* dst = ov.data() + segment[i] * c;
    const double* src = xv.data() + i * c;
    for (std::int64_t k = 0; k < c; ++k) dst[k] += src[k];
  }
  for (std::int64_t s = 0; s < num_segments; ++s) {
    for (std::int64_t k = 0; k < c; ++k) ov[s * c + k] /= counts[s];
  }
  if (should_record({&x})) {
    out.set_requires_grad(true);
    active_tape()->record([x, out, c, n, seg = std::vector<std::int64_t>(segment.begin(), segment.end()),
                           counts = std::move(counts)]() mutable {
      if (!out.has_grad()) return;
      auto go = out.grad();
      auto gx = x.mutable_grad();
      for (std::int64_t i = 0; i < n; ++i) {
        const double inv = 1.0 / counts[seg[i]];
        for (std::int64_t k = 0; k < c; ++k) gx[i * c + k] += go[seg[i] * c + k] * inv;
      }
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& x, std::int64_t begin, std::int64_t end) {
  const std::int64_t c = x.shape().back();
  if (begin < 0 || end > c || begin >= end) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                         shape_string(x.shape()));
  }
  const std::int64_t rows = x.numel() / c;
  const std::int64_t w = end - begin;
  Tensor out(with_last(x.shape(), w));
  auto xv = x.data();
  auto ov = out.mutable_data();
  for (std::int64_t i = 0; i < rows; ++i) std::copy_n(xv.data() + i * c + begin, w, ov.data() + i * w);
  if (should_record({&x})) {
    out.set_requires_grad(true);
    active_tape()->record([x, out, rows, c, w, begin]() mutable {
      if (!out.has_grad()) return;
      auto go = out.grad();
      auto gx = x.mutable_grad();
      for (std::int64_t i = 0; i < rows; ++i) {
        for (std::int64_t k = 0; k < w; ++k) gx[i * c + begin + k] += go[i * w + k];
      }
    });
  }
  return out;
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  const std::int64_t ca = a.shape().back();
  const std::int64_t cb = b.shape().back();
  const std::int64_t rows = a.numel() / ca;
  if (b.numel() / cb != rows) {
    throw DimensionError("concat_cols: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  const std::int64_t w = ca + cb;
  Tensor out(with_last(a.shape(), w));
  auto av = a.data();
  auto bv = b.data();
  auto ov = out.mutable_data();
  for (std::int64_t i = 0; i < rows; ++i) {
    std::copy_n(av.data() + i * ca, ca, ov.data() + i * w);
    std::copy_n(bv.data() + i * cb, cb, ov.data() + i * w + ca);
  }
  if (should_record({&a, &b})) {
    out.set_requires_grad(true);
    active_tape()->record([a, b, out, rows, ca, cb, w]() mutable {
      if (!out.has_grad()) return;
      auto go = out.grad();
      if (a.requires_grad()) {
        auto ga = a.mutable_grad();
        for (std::int64_t i = 0; i < rows; ++i)
          for (std::int64_t k = 0; k < ca; ++k) ga[i * ca + k] += go[i * w + k];
      }
      if (b.requires_grad()) {
        auto gb = b.mutable_grad();
        for (std::int64_t i = 0; i < rows; ++i)
          for (std::int64_t k = 0; k < cb; ++k) gb[i * cb + k] += go[i * w + ca + k];
      }
    });
  }
  return out;
}

Tensor weighted_sum(const Tensor& x, std::span<const double> weights) {
  if (static_cast<std::int64_t>(weights.size()) != x.numel()) {
    throw DimensionError("weighted_sum: " + std::to_string(weights.size()) + " weights for " +
                         shape_string(x.shape()));
  }
  auto xv = x.data();
  double total = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) total += xv[i] * weights[i];
  Tensor out = Tensor::scalar(total);
  if (should_record({&x})) {
    out.set_requires_grad(true);
    active_tape()->record([x, out, w = std::vector<double>(weights.begin(), weights.end())]() mutable {
      if (!out.has_grad()) return;
      const double g = out.grad()[0];
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < w.size(); ++i) gx[i] += g * w[i];
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  std::vector<double> ones(static_cast<std::size_t>(x.numel()), 1.0);
  return weighted_sum(x, ones);
}

Tensor mean(const Tensor& x) {
  std::vector<double> w(static_cast<std::size_t>(x.numel()), 1.0 / static_cast<double>(x.numel()));
  return weighted_sum(x, w);
}

}  // namespace hybridseg
