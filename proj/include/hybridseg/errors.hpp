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

#include <stdexcept>
#include <string>

namespace hybridseg {

// Base of every exception thrown by the library. Each subclass maps to one
// failure family so the CLI can translate it into an exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes that cannot be combined.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Malformed or empty input data (clouds, files, coordinates).
class InputError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value; message carries the offending field path.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Index maps that point outside their target.
class MappingError : public Error {
 public:
  using Error::Error;
};

// Value outside the representable domain (curve coordinates, schedule steps).
class RangeError : public Error {
 public:
  using Error::Error;
};

// Two structures that should describe the same thing disagree.
class ConsistencyError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf where finite values are required, or undefined metric/loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Model and data disagree (class counts, parameter shapes).
class ModelMismatchError : public Error {
 public:
  using Error::Error;
};

// Synthetic scene generation could not place its objects.
class GenerationError : public Error {
 public:
  using Error::Error;
};

}  // namespace hybridseg
