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

#include "hybridseg/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "hybridseg/errors.hpp"

namespace hybridseg {

namespace {

double evaluate(const std::function<Tensor()>& f) {
  const double value = f().item();
  if (!std::isfinite(value)) throw NumericError("grad_check: objective is not finite");
  return value;
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                           const GradCheckOptions& options) {
  std::vector<bool> saved_flags;
  for (auto& t : inputs) {
    saved_flags.push_back(t.requires_grad());
    t.set_requires_grad(true);
    t.zero_grad();
  }

  {
    Tape tape;
    TapeScope scope(tape);
    Tensor root = f();
    if (!std::isfinite(root.item())) throw NumericError("grad_check: objective is not finite");
    tape.backward(root);
  }
  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) {
    if (t.has_grad()) {
      analytic.emplace_back(t.grad().begin(), t.grad().end());
    } else {
      analytic.emplace_back(static_cast<std::size_t>(t.numel()), 0.0);
    }
  }

  GradCheckReport report;
  const double h = options.step;
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    Tensor& t = inputs[ti];
    const auto n = static_cast<std::size_t>(t.numel());
    std::size_t stride = 1;
    if (options.max_entries_per_tensor > 0 && n > options.max_entries_per_tensor) {
      stride = (n + options.max_entries_per_tensor - 1) / options.max_entries_per_tensor;
    }
    for (std::size_t i = 0; i < n; i += stride) {
      auto values = t.mutable_data();
      const double original = values[i];
      values[i] = original + h;
      const double up = evaluate(f);
      values[i] = original - h;
      const double down = evaluate(f);
      values[i] = original;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[ti][i];
      const double abs_err = std::abs(a - numeric);
      const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      report.max_absolute_error = std::max(report.max_absolute_error, abs_err);
      report.max_relative_error = std::max(report.max_relative_error, abs_err / denom);
      ++report.entries_checked;
    }
  }

  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    inputs[ti].zero_grad();
    inputs[ti].set_requires_grad(saved_flags[ti]);
  }
  report.passed = report.max_relative_error <= options.tolerance;
  return report;
}

}  // namespace hybridseg
