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
#include <map>
#include <random>
#include <string>
#include <vector>

#include "hybridseg/tensor.hpp"

namespace hybridseg {

// Seeded generator used for every random draw in the library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double normal(double mean, double stddev) { return std::normal_distribution<double>(mean, stddev)(engine_); }
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
  }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

Tensor uniform_tensor(Shape shape, double bound, Rng& rng);

// Named model parameters in a fixed (lexicographic) order.
class ParameterStore {
 public:
  // Throws ConsistencyError on duplicate names.
  Tensor& add(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  // Throws ModelMismatchError for unknown names.
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);

  // Handles sharing this store's values, each with its own gradient buffer
  // and requires_grad set. One bound copy per concurrent forward pass.
  ParameterStore bind() const;
  // Independent deep copy.
  ParameterStore clone() const;

  std::vector<std::string> names() const;
  std::size_t size() const { return tensors_.size(); }
  std::int64_t total_elements() const;

  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }

 private:
  std::map<std::string, Tensor> tensors_;
};

// Weight and bias of a fully connected map in -> out.
struct LinearParams {
  Tensor weight;  // in x out
  Tensor bias;    // out, may be undefined

  static LinearParams create(ParameterStore& store, const std::string& prefix, std::int64_t in, std::int64_t out,
                             bool with_bias, Rng& rng);
  static LinearParams load(const ParameterStore& store, const std::string& prefix);
  Tensor operator()(const Tensor& x) const;
};

struct NormParams {
  Tensor gamma;
  Tensor beta;

  static NormParams create(ParameterStore& store, const std::string& prefix, std::int64_t channels);
  static NormParams load(const ParameterStore& store, const std::string& prefix);
  Tensor operator()(const Tensor& x) const;
};

}  // namespace hybridseg
