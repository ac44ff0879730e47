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

#include "hybridseg/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "hybridseg/errors.hpp"

namespace hybridseg {
namespace {

static_assert(std::endian::native == std::endian::little, "file formats assume a little-endian host");

class Writer {
 public:
  template <typename T>
  void put(T value) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void put_bytes(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  std::string get_string(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw InputError(what_ + ": truncated at byte " + std::to_string(pos_));
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  std::string what_;
};

}  // namespace

std::vector<std::uint8_t> encode_pcs1(const PointCloud& cloud) {
  cloud.validate();
  Writer w;
  w.put_bytes("PCS1");
  w.put<std::uint64_t>(static_cast<std::uint64_t>(cloud.size()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cloud.feature_dim));
  for (std::int64_t i = 0; i < cloud.size(); ++i) {
    for (double c : cloud.positions[i]) w.put<float>(static_cast<float>(c));
    for (double f : cloud.feature_row(i)) w.put<float>(static_cast<float>(f));
    w.put<std::int32_t>(cloud.labels[i]);
  }
  return w.take();
}

PointCloud decode_pcs1(std::span<const std::uint8_t> bytes) {
  Reader r(bytes, "PCS1 cloud");
  if (r.get_string(4) != "PCS1") throw InputError("PCS1 cloud: bad magic");
  const auto n = r.get<std::uint64_t>();
  const auto cf = r.get<std::uint32_t>();
  const std::uint64_t per_point = 4ULL * (3 + cf) + 4;
  if (n == 0 || r.remaining() != n * per_point) {
    throw InputError("PCS1 cloud: header says " + std::to_string(n) + " points of width " + std::to_string(cf) +
                     " but " + std::to_string(r.remaining()) + " payload bytes follow");
  }
  PointCloud cloud;
  cloud.feature_dim = cf;
  cloud.positions.resize(n);
  cloud.features.resize(n * cf);
  cloud.labels.resize(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    for (auto& c : cloud.positions[i]) c = r.get<float>();
    for (std::uint32_t f = 0; f < cf; ++f) cloud.features[i * cf + f] = r.get<float>();
    cloud.labels[i] = r.get<std::int32_t>();
  }
  cloud.validate();
  return cloud;
}

std::string format_text_cloud(const PointCloud& cloud) {
  cloud.validate();
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (std::int64_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.positions[i];
    os << p[0] << ' ' << p[1] << ' ' << p[2];
    for (double f : cloud.feature_row(i)) os << ' ' << f;
    os << ' ' << cloud.labels[i] << '\n';
  }
  return os.str();
}

PointCloud parse_text_cloud(std::string_view text) {
  PointCloud cloud;
  std::int64_t width = -1;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string line(text.substr(start, end - start));
    start = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;

    std::istringstream is(line);
    std::vector<std::string> tokens;
    for (std::string t; is >> t;) tokens.push_back(t);
    if (tokens.size() < 4) throw InputError("text cloud line " + std::to_string(line_no) + ": need x y z ... label");
    const auto cols = static_cast<std::int64_t>(tokens.size()) - 4;
    if (width < 0) width = cols;
    if (cols != width) {
      throw InputError("text cloud line " + std::to_string(line_no) + ": " + std::to_string(cols) +
                       " features, expected " + std::to_string(width));
    }
    std::vector<double> values;
    for (std::size_t t = 0; t + 1 < tokens.size(); ++t) {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(tokens[t], &used));
        if (used != tokens[t].size()) throw std::invalid_argument("trailing characters");
      } catch (const std::exception&) {
        throw InputError("text cloud line " + std::to_string(line_no) + ": bad number '" + tokens[t] + "'");
      }
    }
    std::int32_t label = 0;
    const auto& lt = tokens.back();
    auto [ptr, ec] = std::from_chars(lt.data(), lt.data() + lt.size(), label);
    if (ec != std::errc() || ptr != lt.data() + lt.size()) {
      throw InputError("text cloud line " + std::to_string(line_no) + ": bad label '" + lt + "'");
    }
    cloud.positions.push_back({values[0], values[1], values[2]});
    cloud.features.insert(cloud.features.end(), values.begin() + 3, values.end());
    cloud.labels.push_back(label);
    if (end == text.size()) break;
  }
  cloud.feature_dim = std::max<std::int64_t>(width, 0);
  cloud.validate();
  return cloud;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError("short write to '" + path.string() + "'");
}

void write_point_cloud(const std::filesystem::path& path, const PointCloud& cloud, CloudFormat format) {
  if (format == CloudFormat::kBinary) {
    write_file_bytes(path, encode_pcs1(cloud));
  } else {
    const auto text = format_text_cloud(cloud);
    write_file_bytes(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
  }
}

PointCloud read_point_cloud(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    if (bytes.size() >= 4 && std::memcmp(bytes.data(), "PCS1", 4) == 0) return decode_pcs1(bytes);
    return parse_text_cloud({reinterpret_cast<const char*>(bytes.data()), bytes.size()});
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

std::vector<std::filesystem::path> scene_files(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) throw InputError("data directory '" + dir.string() + "' does not exist");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto ext = entry.path().extension();
    if (ext == ".pcs" || ext == ".txt") files.push_back(entry.path());
  }
  if (files.empty()) throw InputError("data directory '" + dir.string() + "' holds no .pcs or .txt clouds");
  std::sort(files.begin(), files.end());
  return files;
}

std::vector<PointCloud> load_scenes(const std::filesystem::path& dir) {
  std::vector<PointCloud> out;
  for (const auto& f : scene_files(dir)) out.push_back(read_point_cloud(f));
  return out;
}

std::vector<std::uint8_t> encode_htm1(const NamedTensors& tensors) {
  Writer w;
  w.put_bytes("HTM1");
  w.put<std::uint64_t>(tensors.size());
  for (const auto& [name, t] : tensors) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.put_bytes(name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.put<std::uint64_t>(static_cast<std::uint64_t>(d));
    for (double v : t.data()) w.put<double>(v);
  }
  return w.take();
}

NamedTensors decode_htm1(std::span<const std::uint8_t> bytes) {
  Reader r(bytes, "HTM1 container");
  if (r.get_string(4) != "HTM1") throw InputError("HTM1 container: bad magic");
  const auto count = r.get<std::uint64_t>();
  NamedTensors out;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name = r.get_string(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint32_t>();
    if (rank == 0 || rank > 8) throw InputError("HTM1 container: tensor '" + name + "' has rank " + std::to_string(rank));
    Shape shape;
    std::uint64_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto dim = r.get<std::uint64_t>();
      if (dim == 0 || dim > r.remaining()) throw InputError("HTM1 container: tensor '" + name + "' has a bad shape");
      shape.push_back(static_cast<std::int64_t>(dim));
      numel *= dim;
    }
    if (numel * sizeof(double) > r.remaining()) throw InputError("HTM1 container: tensor '" + name + "' is truncated");
    std::vector<double> values(numel);
    for (auto& v : values) v = r.get<double>();
    if (!out.emplace(name, Tensor(shape, std::move(values))).second) {
      throw InputError("HTM1 container: duplicate tensor '" + name + "'");
    }
  }
  if (!r.done()) throw InputError("HTM1 container: trailing bytes");
  return out;
}

void write_checkpoint(const std::filesystem::path& path, const ParameterStore& params, const OptimState* optimizer) {
  NamedTensors all;
  for (const auto& [name, t] : params) {
    if (name.starts_with(kOptimizerPrefix)) throw ConsistencyError("parameter name '" + name + "' uses the reserved opt/ prefix");
    all.emplace(name, t);
  }
  if (optimizer) {
    const std::string prefix(kOptimizerPrefix);
    for (const auto& [name, t] : params) {
      auto m = optimizer->first_moment.find(name);
      auto v = optimizer->second_moment.find(name);
      if (m == optimizer->first_moment.end() || v == optimizer->second_moment.end()) continue;
      all.emplace(prefix + "m/" + name, Tensor(t.shape(), m->second));
      all.emplace(prefix + "v/" + name, Tensor(t.shape(), v->second));
    }
    all.emplace(prefix + "step", Tensor::scalar(static_cast<double>(optimizer->step)));
  }
  write_file_bytes(path, encode_htm1(all));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  NamedTensors all;
  try {
    all = decode_htm1(read_file_bytes(path));
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
  Checkpoint out;
  OptimState state;
  bool has_state = false;
  for (auto& [name, t] : all) {
    if (!name.starts_with(kOptimizerPrefix)) {
      out.params.add(name, t);
      continue;
    }
    has_state = true;
    const std::string rest = name.substr(kOptimizerPrefix.size());
    const auto values = t.data();
    if (rest == "step") {
      state.step = static_cast<std::int64_t>(values[0]);
    } else if (rest.starts_with("m/")) {
      state.first_moment[rest.substr(2)].assign(values.begin(), values.end());
    } else if (rest.starts_with("v/")) {
      state.second_moment[rest.substr(2)].assign(values.begin(), values.end());
    } else {
      throw InputError(path.string() + ": unknown optimizer entry '" + name + "'");
    }
  }
  if (has_state) out.optimizer = std::move(state);
  return out;
}

}  // namespace hybridseg
