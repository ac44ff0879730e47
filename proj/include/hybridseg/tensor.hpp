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
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace hybridseg {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major float64 array with optional gradient buffer.
//
// Tensor is a handle: copies share the same storage, like a smart pointer.
// Use clone() for a deep copy and alias() for a handle that shares values but
// owns an independent gradient buffer (used to give each forward invocation
// its own gradients for shared parameters).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value) { return Tensor(Shape{1}, {value}); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  std::int64_t dim(int axis) const;
  std::int64_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);

  bool has_grad() const;
  std::span<const double> grad() const;
  // Allocates a zero gradient on first use.
  std::span<double> mutable_grad() const;
  void zero_grad();

  Tensor clone() const;
  Tensor alias() const;
  // Same storage viewed under a different shape with equal element count.
  Tensor reshape(Shape shape) const;

  bool same_storage(const Tensor& other) const;

 private:
  struct Impl {
    Shape shape;
    std::shared_ptr<std::vector<double>> values;
    std::shared_ptr<std::vector<double>> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;
};

// Records backward rules of differentiable operations in execution order.
// A tape lives for one forward invocation and is discarded after backward().
class Tape {
 public:
  void record(std::function<void()> backward_rule);
  // Seeds d(root)/d(root) = 1 and replays the rules in reverse order.
  void backward(Tensor& root);
  std::size_t size() const { return rules_.size(); }
  void clear() { rules_.clear(); }

 private:
  std::vector<std::function<void()>> rules_;
};

// Makes a tape the recording target for operations on the current thread.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Recording target for the current thread, or nullptr.
Tape* active_tape();

// True when an op consuming `inputs` must record a backward rule.
bool should_record(std::initializer_list<const Tensor*> inputs);

}  // namespace hybridseg
