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

#include "hybridseg/parameters.hpp"

#include <cmath>

#include "hybridseg/errors.hpp"
#include "hybridseg/ops.hpp"

namespace hybridseg {

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.mutable_data()) v = rng.uniform(-bound, bound);
  return t;
}

Tensor& ParameterStore::add(const std::string& name, Tensor value) {
  auto [it, inserted] = tensors_.emplace(name, std::move(value));
  if (!inserted) throw ConsistencyError("duplicate parameter name '" + name + "'");
  return it->second;
}

const Tensor& ParameterStore::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ModelMismatchError("missing parameter '" + name + "'");
  return it->second;
}

Tensor& ParameterStore::at(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ModelMismatchError("missing parameter '" + name + "'");
  return it->second;
}

ParameterStore ParameterStore::bind() const {
  ParameterStore out;
  for (const auto& [name, t] : tensors_) {
    Tensor a = t.alias();
    a.set_requires_grad(true);
    out.tensors_.emplace(name, std::move(a));
  }
  return out;
}

ParameterStore ParameterStore::clone() const {
  ParameterStore out;
  for (const auto& [name, t] : tensors_) out.tensors_.emplace(name, t.clone());
  return out;
}

std::vector<std::string> ParameterStore::names() const {
  std::vector<std::string> out;
  out.reserve(tensors_.size());
  for (const auto& [name, t] : tensors_) out.push_back(name);
  return out;
}

std::int64_t ParameterStore::total_elements() const {
  std::int64_t n = 0;
  for (const auto& [name, t] : tensors_) n += t.numel();
  return n;
}

LinearParams LinearParams::create(ParameterStore& store, const std::string& prefix, std::int64_t in,
                                  std::int64_t out, bool with_bias, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  LinearParams p;
  p.weight = store.add(prefix + ".weight", uniform_tensor(Shape{in, out}, bound, rng));
  if (with_bias) p.bias = store.add(prefix + ".bias", Tensor(Shape{out}));
  return p;
}

LinearParams LinearParams::load(const ParameterStore& store, const std::string& prefix) {
  LinearParams p;
  p.weight = store.at(prefix + ".weight");
  if (store.contains(prefix + ".bias")) p.bias = store.at(prefix + ".bias");
  return p;
}

Tensor LinearParams::operator()(const Tensor& x) const { return linear(x, weight, bias); }

NormParams NormParams::create(ParameterStore& store, const std::string& prefix, std::int64_t channels) {
  NormParams p;
  p.gamma = store.add(prefix + ".gamma", Tensor(Shape{channels}, 1.0));
  p.beta = store.add(prefix + ".beta", Tensor(Shape{channels}));
  return p;
}

NormParams NormParams::load(const ParameterStore& store, const std::string& prefix) {
  return NormParams{store.at(prefix + ".gamma"), store.at(prefix + ".beta")};
}

Tensor NormParams::operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }

}  // namespace hybridseg
