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

#include "hybridseg/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "hybridseg/errors.hpp"

namespace hybridseg {
namespace {

using nlohmann::json;

// Reads fields of one JSON object, remembering which keys were consumed so
// leftovers can be reported as unknown.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  template <typename T, typename Fn>
  void field(const char* key, Fn&& read) {
    seen_.insert(key);
    if (auto it = j_.find(key); it != j_.end()) read(*it, child(key));
  }

  void integer(const char* key, std::int64_t& out) {
    field<std::int64_t>(key, [&](const json& v, const std::string& p) { out = as_int(v, p); });
  }
  void seed(const char* key, std::uint64_t& out) {
    field<std::uint64_t>(key, [&](const json& v, const std::string& p) {
      if (!v.is_number_unsigned()) throw ConfigError(p + ": expected a non-negative integer");
      out = v.get<std::uint64_t>();
    });
  }
  void number(const char* key, double& out) {
    field<double>(key, [&](const json& v, const std::string& p) {
      if (!v.is_number()) throw ConfigError(p + ": expected a number");
      out = v.get<double>();
    });
  }
  void boolean(const char* key, bool& out) {
    field<bool>(key, [&](const json& v, const std::string& p) {
      if (!v.is_boolean()) throw ConfigError(p + ": expected true or false");
      out = v.get<bool>();
    });
  }
  void string(const char* key, std::string& out) {
    field<std::string>(key, [&](const json& v, const std::string& p) {
      if (!v.is_string()) throw ConfigError(p + ": expected a string");
      out = v.get<std::string>();
    });
  }
  template <typename T>
  void int_list(const char* key, std::vector<T>& out) {
    field<T>(key, [&](const json& v, const std::string& p) {
      if (!v.is_array()) throw ConfigError(p + ": expected a list of integers");
      out.clear();
      for (std::size_t i = 0; i < v.size(); ++i) out.push_back(static_cast<T>(as_int(v[i], p + "[" + std::to_string(i) + "]")));
    });
  }
  template <typename Parse, typename T>
  void named(const char* key, T& out, Parse parse) {
    field<T>(key, [&](const json& v, const std::string& p) {
      if (!v.is_string()) throw ConfigError(p + ": expected a string");
      try {
        out = parse(v.get<std::string>());
      } catch (const Error& e) {
        throw ConfigError(p + ": " + e.what());
      }
    });
  }
  template <typename Fn>
  void object(const char* key, Fn&& read) {
    field<int>(key, [&](const json& v, const std::string& p) {
      ObjectReader sub(v, p);
      read(sub);
      sub.finish();
    });
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(child(key) + ": unknown key");
    }
  }

 private:
  static std::int64_t as_int(const json& v, const std::string& p) {
    if (!v.is_number_integer()) throw ConfigError(p + ": expected an integer");
    return v.get<std::int64_t>();
  }
  std::string where() const { return path_.empty() ? "<root>" : path_; }
  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json to_json(const RunConfig& c) {
  const auto& m = c.model;
  const auto& t = c.train;
  return json{
      {"seed", c.seed},
      {"data", {{"train_dir", c.data.train_dir}, {"val_dir", c.data.val_dir}, {"cell_size", c.data.cell_size}}},
      {"output", {{"checkpoint", c.output.checkpoint}, {"log", c.output.log}}},
      {"model",
       {{"in_channels", m.in_channels},
        {"num_classes", m.num_classes},
        {"encoder_depths", m.encoder_depths},
        {"decoder_depths", m.decoder_depths},
        {"encoder_channels", m.encoder_channels},
        {"decoder_channels", m.decoder_channels},
        {"encoder_heads", m.encoder_heads},
        {"decoder_heads", m.decoder_heads},
        {"attention_group_size", m.attention_group_size},
        {"mamba_group_size", m.mamba_group_size},
        {"ffn_expansion", m.ffn_expansion},
        {"strategy", std::string(strategy_name(m.strategy))},
        {"operators", std::string(operators_name(m.operators))},
        {"curve", std::string(curve_name(m.curve))},
        {"pool_stride", m.pool_stride},
        {"skip_fusion", std::string(skip_fusion_name(m.skip_fusion))},
        {"mamba",
         {{"expand", m.mamba.expand}, {"state_dim", m.mamba.state_dim}, {"conv_width", m.mamba.conv_width}}}}},
      {"train",
       {{"epochs", t.epochs},
        {"batch_size", t.batch_size},
        {"max_lr", t.max_lr},
        {"pct_start", t.pct_start},
        {"div_factor", t.div_factor},
        {"final_div_factor", t.final_div_factor},
        {"beta1", t.beta1},
        {"beta2", t.beta2},
        {"eps", t.eps},
        {"weight_decay", t.weight_decay},
        {"rotate_augment", t.rotate_augment}}},
  };
}

}  // namespace

void RunConfig::validate() const {
  if (data.train_dir.empty()) throw ConfigError("data.train_dir: must not be empty");
  if (!(data.cell_size > 0.0)) throw ConfigError("data.cell_size: must be > 0");
  if (output.checkpoint.empty()) throw ConfigError("output.checkpoint: must not be empty");
  model.validate();
  train.validate();
}

RunConfig parse_run_config(std::string_view json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("<root>: not valid JSON: ") + e.what());
  }
  RunConfig c;
  ObjectReader r(root, "");
  r.seed("seed", c.seed);
  r.object("data", [&](ObjectReader& d) {
    d.string("train_dir", c.data.train_dir);
    d.string("val_dir", c.data.val_dir);
    d.number("cell_size", c.data.cell_size);
  });
  r.object("output", [&](ObjectReader& o) {
    o.string("checkpoint", c.output.checkpoint);
    o.string("log", c.output.log);
  });
  r.object("model", [&](ObjectReader& m) {
    auto& n = c.model;
    m.integer("in_channels", n.in_channels);
    m.integer("num_classes", n.num_classes);
    m.int_list("encoder_depths", n.encoder_depths);
    m.int_list("decoder_depths", n.decoder_depths);
    m.int_list("encoder_channels", n.encoder_channels);
    m.int_list("decoder_channels", n.decoder_channels);
    m.int_list("encoder_heads", n.encoder_heads);
    m.int_list("decoder_heads", n.decoder_heads);
    m.integer("attention_group_size", n.attention_group_size);
    m.integer("mamba_group_size", n.mamba_group_size);
    m.integer("ffn_expansion", n.ffn_expansion);
    m.named("strategy", n.strategy, [](const std::string& s) { return parse_strategy(s); });
    m.named("operators", n.operators, [](const std::string& s) { return parse_operators(s); });
    m.named("curve", n.curve, [](const std::string& s) { return parse_curve(s); });
    m.integer("pool_stride", n.pool_stride);
    m.named("skip_fusion", n.skip_fusion, [](const std::string& s) { return parse_skip_fusion(s); });
    m.object("mamba", [&](ObjectReader& s) {
      s.integer("expand", n.mamba.expand);
      s.integer("state_dim", n.mamba.state_dim);
      s.integer("conv_width", n.mamba.conv_width);
    });
  });
  r.object("train", [&](ObjectReader& t) {
    auto& x = c.train;
    t.integer("epochs", x.epochs);
    t.integer("batch_size", x.batch_size);
    t.number("max_lr", x.max_lr);
    t.number("pct_start", x.pct_start);
    t.number("div_factor", x.div_factor);
    t.number("final_div_factor", x.final_div_factor);
    t.number("beta1", x.beta1);
    t.number("beta2", x.beta2);
    t.number("eps", x.eps);
    t.number("weight_decay", x.weight_decay);
    t.boolean("rotate_augment", x.rotate_augment);
  });
  r.finish();
  c.validate();
  return c;
}

std::string serialize_run_config(const RunConfig& config) { return to_json(config).dump(2) + "\n"; }

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

void save_run_config(const std::filesystem::path& path, const RunConfig& config) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write config '" + path.string() + "'");
  out << serialize_run_config(config);
}

RunConfig preset_config(std::string_view name) {
  RunConfig c;
  if (name == "tiny") {
    auto& m = c.model;
    m.encoder_depths = {1, 1, 1, 2, 1};
    m.decoder_depths = {1, 1, 1, 1};
    m.encoder_channels = {4, 8, 16, 16, 16};
    m.decoder_channels = {16, 16, 8, 4};
    m.encoder_heads = {1, 2, 2, 2, 2};
    m.decoder_heads = {2, 2, 2, 1};
    m.attention_group_size = 64;
    m.mamba_group_size = 64;
    m.ffn_expansion = 2;
    m.mamba.expand = 2;
    m.mamba.state_dim = 4;
    c.train.epochs = 200;
    c.train.batch_size = 2;
    c.train.max_lr = 5e-3;
    c.data.train_dir = "data/tiny";
    c.output.checkpoint = "tiny.htm";
    c.output.log = "tiny_metrics.csv";
    return c;
  }
  if (name == "paper-scale") {
    // Defaults already carry the full-size architecture; batch 12 for 800 epochs.
    c.train.epochs = 800;
    c.train.batch_size = 12;
    c.data.train_dir = "data/train";
    c.data.val_dir = "data/val";
    return c;
  }
  throw ConfigError("preset: unknown name '" + std::string(name) + "' (expected tiny or paper-scale)");
}

}  // namespace hybridseg
