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
#include <filesystem>
#include <string>
#include <string_view>

#include "hybridseg/network.hpp"
#include "hybridseg/training.hpp"

namespace hybridseg {

struct DataConfig {
  std::string train_dir = "data/train";
  std::string val_dir;  // empty: validate on the training scenes
  double cell_size = 0.05;
};

struct OutputConfig {
  std::string checkpoint = "model.htm";
  std::string log = "metrics.csv";
};

// Everything one `train` run needs. Every key is optional in the file and
// falls back to the defaults here; unknown keys are rejected.
struct RunConfig {
  std::uint64_t seed = 0;
  DataConfig data;
  OutputConfig output;
  NetworkConfig model;
  TrainConfig train;

  // Throws ConfigError with the dotted path of the first bad field.
  void validate() const;
};

RunConfig parse_run_config(std::string_view json_text);
std::string serialize_run_config(const RunConfig& config);
RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const std::filesystem::path& path, const RunConfig& config);

// Built-in presets: "tiny" (desk-scale overfit run) and "paper-scale".
RunConfig preset_config(std::string_view name);

}  // namespace hybridseg
