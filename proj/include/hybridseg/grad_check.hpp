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

#include <cstddef>
#include <functional>
#include <vector>

#include "hybridseg/tensor.hpp"

namespace hybridseg {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-6;
  // Denominator floor of the relative error |a - n| / max(|a|, |n|, floor),
  // so that entries with near-zero gradient are judged on absolute error.
  double floor = 1e-3;
  // Upper bound on checked entries per tensor; 0 checks everything. When
  // capped, entries are taken at an even stride.
  std::size_t max_entries_per_tensor = 0;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
  std::size_t entries_checked = 0;
  bool passed = false;
};

// Compares the reverse-mode gradient of the scalar `f` with respect to each
// tensor in `inputs` against central differences (f(x+h) - f(x-h)) / 2h.
// `f` must read the current values of `inputs` on every call. The inputs are
// temporarily flagged requires_grad and restored afterwards.
GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                           const GradCheckOptions& options = {});

}  // namespace hybridseg
