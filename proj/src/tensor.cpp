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

#include "hybridseg/tensor.hpp"

#include <sstream>

#include "hybridseg/errors.hpp"

namespace hybridseg {

namespace {
thread_local Tape* g_active_tape = nullptr;
}  // namespace

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) {
  for (auto d : shape) {
    if (d <= 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape));
  }
  impl_ = std::make_shared<Impl>();
  const auto n = static_cast<std::size_t>(shape_numel(shape));
  impl_->shape = std::move(shape);
  impl_->values = std::make_shared<std::vector<double>>(n, fill);
  impl_->grad = std::make_shared<std::vector<double>>();
}

Tensor::Tensor(Shape shape, std::vector<double> values) {
  for (auto d : shape) {
    if (d <= 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape));
  }
  if (static_cast<std::int64_t>(values.size()) != shape_numel(shape)) {
    throw DimensionError("tensor of shape " + shape_string(shape) + " given " +
                         std::to_string(values.size()) + " values");
  }
  impl_ = std::make_shared<Impl>();
  impl_->shape = std::move(shape);
  impl_->values = std::make_shared<std::vector<double>>(std::move(values));
  impl_->grad = std::make_shared<std::vector<double>>();
}

const Shape& Tensor::shape() const { return impl_->shape; }

std::int64_t Tensor::dim(int axis) const {
  const int r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw DimensionError("axis out of range for " + shape_string(shape()));
  return impl_->shape[static_cast<std::size_t>(axis)];
}

std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(impl_->values->size()); }

std::span<const double> Tensor::data() const { return *impl_->values; }
std::span<double> Tensor::mutable_data() { return *impl_->values; }

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape()));
  return (*impl_->values)[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  impl_->requires_grad = flag;
  return *this;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad->empty(); }

std::span<const double> Tensor::grad() const {
  if (impl_->grad->empty()) throw ConsistencyError("tensor has no gradient");
  return *impl_->grad;
}

std::span<double> Tensor::mutable_grad() const {
  if (impl_->grad->empty()) impl_->grad->assign(impl_->values->size(), 0.0);
  return *impl_->grad;
}

void Tensor::zero_grad() { impl_->grad->clear(); }

Tensor Tensor::clone() const {
  Tensor out(impl_->shape, *impl_->values);
  out.impl_->requires_grad = impl_->requires_grad;
  return out;
}

Tensor Tensor::alias() const {
  Tensor out;
  out.impl_ = std::make_shared<Impl>();
  out.impl_->shape = impl_->shape;
  out.impl_->values = impl_->values;
  out.impl_->grad = std::make_shared<std::vector<double>>();
  out.impl_->requires_grad = impl_->requires_grad;
  return out;
}

Tensor Tensor::reshape(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw DimensionError("cannot reshape " + shape_string(impl_->shape) + " to " + shape_string(shape));
  }
  // Gradient storage is shared too, so rules written against either view
  // accumulate into the same buffer.
  Tensor out;
  out.impl_ = std::make_shared<Impl>();
  out.impl_->shape = std::move(shape);
  out.impl_->values = impl_->values;
  out.impl_->grad = impl_->grad;
  out.impl_->requires_grad = impl_->requires_grad;
  return out;
}

bool Tensor::same_storage(const Tensor& other) const {
  return impl_ && other.impl_ && impl_->values == other.impl_->values;
}

void Tape::record(std::function<void()> backward_rule) { rules_.push_back(std::move(backward_rule)); }

void Tape::backward(Tensor& root) {
  if (root.numel() != 1) throw DimensionError("backward() needs a scalar root, got " + shape_string(root.shape()));
  root.mutable_grad()[0] += 1.0;
  for (auto it = rules_.rbegin(); it != rules_.rend(); ++it) (*it)();
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (g_active_tape == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t != nullptr && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

}  // namespace hybridseg
