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

#include "hybridseg/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "hybridseg/errors.hpp"
#include "hybridseg/parameters.hpp"

namespace hybridseg {
namespace {

enum class Kind { kFloor, kWall, kCeiling, kTable, kChair, kCabinet, kLamp, kClutter };

constexpr std::array<std::array<double, 3>, 8> kBaseColor{{
    {0.55, 0.45, 0.35},
    {0.85, 0.85, 0.80},
    {0.95, 0.95, 0.98},
    {0.60, 0.35, 0.15},
    {0.20, 0.30, 0.70},
    {0.45, 0.55, 0.35},
    {0.95, 0.85, 0.30},
    {0.70, 0.20, 0.50},
}};

Kind kind_of(const std::string& name) {
  const auto& names = default_scene_classes();
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw ConfigError("datagen.classes: unknown class '" + name + "'");
  return static_cast<Kind>(it - names.begin());
}

bool is_structure(Kind k) { return k == Kind::kFloor || k == Kind::kWall || k == Kind::kCeiling; }

// Axis-aligned rectangle o + s*u + t*v, or a vertical cylinder surface.
struct Patch {
  Kind kind;
  bool cylinder = false;
  bool disk = false;
  std::array<double, 3> o{};
  std::array<double, 3> u{};
  std::array<double, 3> v{};
  double radius = 0.0;
  double height = 0.0;
  double area = 0.0;
};

double norm3(const std::array<double, 3>& a) { return std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]); }

Patch rect(Kind kind, std::array<double, 3> o, std::array<double, 3> u, std::array<double, 3> v) {
  Patch p{kind};
  p.o = o;
  p.u = u;
  p.v = v;
  p.area = norm3(u) * norm3(v);
  return p;
}

// Top and four sides; the bottom rests on something and is never visible.
void add_box(std::vector<Patch>& out, Kind kind, double x0, double y0, double z0, double x1, double y1, double z1) {
  const double dx = x1 - x0, dy = y1 - y0, dz = z1 - z0;
  out.push_back(rect(kind, {x0, y0, z1}, {dx, 0, 0}, {0, dy, 0}));
  out.push_back(rect(kind, {x0, y0, z0}, {dx, 0, 0}, {0, 0, dz}));
  out.push_back(rect(kind, {x0, y1, z0}, {dx, 0, 0}, {0, 0, dz}));
  out.push_back(rect(kind, {x0, y0, z0}, {0, dy, 0}, {0, 0, dz}));
  out.push_back(rect(kind, {x1, y0, z0}, {0, dy, 0}, {0, 0, dz}));
}

void add_cylinder(std::vector<Patch>& out, Kind kind, double cx, double cy, double z0, double z1, double r) {
  Patch side{kind};
  side.cylinder = true;
  side.o = {cx, cy, z0};
  side.radius = r;
  side.height = z1 - z0;
  side.area = 2.0 * std::numbers::pi * r * side.height;
  out.push_back(side);
  Patch top{kind};
  top.disk = true;
  top.o = {cx, cy, z1};
  top.radius = r;
  top.area = std::numbers::pi * r * r;
  out.push_back(top);
}

struct Footprint {
  double x0, y0, x1, y1;
};

bool overlaps(const Footprint& a, const Footprint& b, double gap) {
  return a.x0 < b.x1 + gap && b.x0 < a.x1 + gap && a.y0 < b.y1 + gap && b.y0 < a.y1 + gap;
}

std::array<double, 2> object_size(Kind kind, Rng& rng) {
  switch (kind) {
    case Kind::kTable: return {rng.uniform(0.8, 1.4), rng.uniform(0.6, 0.9)};
    case Kind::kChair: return {0.45, 0.45};
    case Kind::kCabinet: return {rng.uniform(0.5, 1.0), rng.uniform(0.4, 0.6)};
    case Kind::kLamp: return {0.3, 0.3};
    default: return {rng.uniform(0.15, 0.4), rng.uniform(0.15, 0.4)};
  }
}

void add_object(std::vector<Patch>& out, Kind kind, const Footprint& f, Rng& rng) {
  const double leg = 0.05;
  switch (kind) {
    case Kind::kTable: {
      add_box(out, kind, f.x0, f.y0, 0.70, f.x1, f.y1, 0.75);
      for (double x : {f.x0, f.x1 - leg}) {
        for (double y : {f.y0, f.y1 - leg}) add_box(out, kind, x, y, 0.0, x + leg, y + leg, 0.70);
      }
      break;
    }
    case Kind::kChair: {
      add_box(out, kind, f.x0, f.y0, 0.40, f.x1, f.y1, 0.45);
      add_box(out, kind, f.x0, f.y1 - leg, 0.45, f.x1, f.y1, 0.90);
      for (double x : {f.x0, f.x1 - leg}) {
        for (double y : {f.y0, f.y1 - leg}) add_box(out, kind, x, y, 0.0, x + leg, y + leg, 0.40);
      }
      break;
    }
    case Kind::kCabinet: add_box(out, kind, f.x0, f.y0, 0.0, f.x1, f.y1, rng.uniform(1.0, 1.8)); break;
    case Kind::kLamp: {
      const double cx = 0.5 * (f.x0 + f.x1), cy = 0.5 * (f.y0 + f.y1);
      add_cylinder(out, kind, cx, cy, 0.0, 1.4, 0.02);
      add_cylinder(out, kind, cx, cy, 1.4, 1.6, 0.15);
      break;
    }
    default: add_box(out, kind, f.x0, f.y0, 0.0, f.x1, f.y1, rng.uniform(0.1, 0.4)); break;
  }
}

std::array<double, 3> sample_on(const Patch& p, Rng& rng) {
  if (p.cylinder) {
    const double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
    return {p.o[0] + p.radius * std::cos(a), p.o[1] + p.radius * std::sin(a), p.o[2] + rng.uniform(0.0, p.height)};
  }
  if (p.disk) {
    const double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double r = p.radius * std::sqrt(rng.uniform(0.0, 1.0));
    return {p.o[0] + r * std::cos(a), p.o[1] + r * std::sin(a), p.o[2]};
  }
  const double s = rng.uniform(0.0, 1.0), t = rng.uniform(0.0, 1.0);
  return {p.o[0] + s * p.u[0] + t * p.v[0], p.o[1] + s * p.u[1] + t * p.v[1], p.o[2] + s * p.u[2] + t * p.v[2]};
}

double truncated_normal(Rng& rng, double sigma) {
  if (sigma <= 0.0) return 0.0;
  return std::clamp(rng.normal(0.0, sigma), -3.0 * sigma, 3.0 * sigma);
}

}  // namespace

void SceneSpec::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (!(extents[a] > 0.0) || !std::isfinite(extents[a])) throw ConfigError("datagen.extents: must be positive");
  }
  if (classes.size() < 2) throw ConfigError("datagen.classes: need at least 2 classes");
  std::set<std::string> seen;
  for (const auto& c : classes) {
    kind_of(c);
    if (!seen.insert(c).second) throw ConfigError("datagen.classes: duplicate class '" + c + "'");
  }
  if (min_objects < 0 || max_objects < min_objects) throw ConfigError("datagen.objects: need 0 <= min <= max");
  if (points < 1) throw ConfigError("datagen.points: must be >= 1");
  if (!(color_noise >= 0.0) || !(position_noise >= 0.0)) throw ConfigError("datagen.noise: must be >= 0");
  if (placement_retries < 1) throw ConfigError("datagen.placement_retries: must be >= 1");
}

PointCloud generate_scene(const SceneSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const auto [lx, ly, lz] = spec.extents;

  std::vector<std::int32_t> label_of(8, kIgnoreLabel);
  std::vector<Kind> furniture;
  for (std::size_t i = 0; i < spec.classes.size(); ++i) {
    const Kind k = kind_of(spec.classes[i]);
    label_of[static_cast<int>(k)] = static_cast<std::int32_t>(i);
    if (!is_structure(k)) furniture.push_back(k);
  }
  auto present = [&](Kind k) { return label_of[static_cast<int>(k)] != kIgnoreLabel; };

  std::vector<Patch> patches;
  if (present(Kind::kFloor)) patches.push_back(rect(Kind::kFloor, {0, 0, 0}, {lx, 0, 0}, {0, ly, 0}));
  if (present(Kind::kCeiling)) patches.push_back(rect(Kind::kCeiling, {0, 0, lz}, {lx, 0, 0}, {0, ly, 0}));
  if (present(Kind::kWall)) {
    patches.push_back(rect(Kind::kWall, {0, 0, 0}, {lx, 0, 0}, {0, 0, lz}));
    patches.push_back(rect(Kind::kWall, {0, ly, 0}, {lx, 0, 0}, {0, 0, lz}));
    patches.push_back(rect(Kind::kWall, {0, 0, 0}, {0, ly, 0}, {0, 0, lz}));
    patches.push_back(rect(Kind::kWall, {lx, 0, 0}, {0, ly, 0}, {0, 0, lz}));
  }
  const std::size_t structure_patches = patches.size();

  if (!furniture.empty()) {
    // Every furniture kind appears once before any repeats.
    std::vector<Kind> kinds = furniture;
    std::shuffle(kinds.begin(), kinds.end(), rng.engine());
    const auto count = rng.uniform_int(spec.min_objects, spec.max_objects);
    while (static_cast<std::int64_t>(kinds.size()) < count) {
      kinds.push_back(furniture[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(furniture.size()) - 1))]);
    }
    kinds.resize(static_cast<std::size_t>(count));

    const double margin = 0.05, gap = 0.1;
    std::vector<Footprint> placed;
    for (Kind kind : kinds) {
      const auto [w, d] = object_size(kind, rng);
      bool ok = false;
      for (int attempt = 0; attempt < spec.placement_retries && !ok; ++attempt) {
        if (w + 2 * margin > lx || d + 2 * margin > ly) break;
        const double x0 = rng.uniform(margin, lx - margin - w);
        const double y0 = rng.uniform(margin, ly - margin - d);
        Footprint f{x0, y0, x0 + w, y0 + d};
        if (std::none_of(placed.begin(), placed.end(), [&](const Footprint& o) { return overlaps(f, o, gap); })) {
          placed.push_back(f);
          add_object(patches, kind, f, rng);
          ok = true;
        }
      }
      if (!ok) {
        throw GenerationError("could not place object " + std::to_string(placed.size() + 1) + " of " +
                              std::to_string(kinds.size()) + " after " + std::to_string(spec.placement_retries) +
                              " attempts (seed " + std::to_string(spec.seed) + ")");
      }
    }
  }
  if (patches.empty()) throw GenerationError("scene has no surfaces to sample");

  // Room shells get 45% of the points and objects the rest, so small furniture
  // is not drowned out by the much larger wall area.
  double structure_area = 0.0, object_area = 0.0;
  for (std::size_t i = 0; i < patches.size(); ++i) (i < structure_patches ? structure_area : object_area) += patches[i].area;
  std::vector<double> weights(patches.size());
  for (std::size_t i = 0; i < patches.size(); ++i) {
    if (i < structure_patches) {
      weights[i] = patches[i].area / structure_area * (object_area > 0.0 ? 0.45 : 1.0);
    } else {
      weights[i] = patches[i].area / object_area * (structure_area > 0.0 ? 0.55 : 1.0);
    }
  }
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());

  PointCloud cloud;
  cloud.feature_dim = 3;
  cloud.positions.reserve(static_cast<std::size_t>(spec.points));
  cloud.features.reserve(static_cast<std::size_t>(spec.points * 3));
  cloud.labels.reserve(static_cast<std::size_t>(spec.points));
  for (std::int64_t i = 0; i < spec.points; ++i) {
    const Patch& p = patches[pick(rng.engine())];
    auto pos = sample_on(p, rng);
    for (double& c : pos) c += truncated_normal(rng, spec.position_noise);
    cloud.positions.push_back(pos);
    for (double c : kBaseColor[static_cast<int>(p.kind)]) {
      cloud.features.push_back(c + (spec.color_noise > 0.0 ? rng.normal(0.0, spec.color_noise) : 0.0));
    }
    cloud.labels.push_back(label_of[static_cast<int>(p.kind)]);
  }
  return cloud;
}

}  // namespace hybridseg
