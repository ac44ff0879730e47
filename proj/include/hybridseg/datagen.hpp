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

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "hybridseg/pointcloud.hpp"

namespace hybridseg {

// Object kinds the generator knows how to draw. Labels are positions in
// SceneSpec::classes, so a spec may use any subset in any order.
inline const std::vector<std::string>& default_scene_classes() {
  static const std::vector<std::string> names{"floor", "wall", "ceiling", "table", "chair", "cabinet", "lamp", "clutter"};
  return names;
}

struct SceneSpec {
  std::uint64_t seed = 0;
  std::array<double, 3> extents{4.0, 4.0, 2.5};  // room size in meters
  std::int64_t min_objects = 4;
  std::int64_t max_objects = 8;
  std::vector<std::string> classes = default_scene_classes();
  std::int64_t points = 2048;
  double color_noise = 0.05;
  double position_noise = 0.005;  // Gaussian, truncated at 3 sigma
  int placement_retries = 200;

  // Throws ConfigError.
  void validate() const;
};

// Points sampled on labeled planes, boxes and cylinders. Features are an RGB
// pseudo-color per class plus Gaussian noise. Pure function of the spec.
// Throws GenerationError when objects cannot be placed without overlap.
PointCloud generate_scene(const SceneSpec& spec);

}  // namespace hybridseg
