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

#include "hybridseg/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>

#include <CLI11.hpp>

#include "hybridseg/config.hpp"
#include "hybridseg/datagen.hpp"
#include "hybridseg/errors.hpp"
#include "hybridseg/io.hpp"
#include "hybridseg/serialization.hpp"
#include "hybridseg/training.hpp"

namespace hybridseg {

namespace fs = std::filesystem;

std::uint64_t scene_seed(std::uint64_t base, std::uint64_t index) {
  // splitmix64 of the pair
  std::uint64_t z = base * 0x9e3779b97f4a7c15ULL + index + 0x632be59bd9b4e019ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

namespace {

struct GenDataArgs {
  std::int64_t scenes = 8;
  std::uint64_t seed = 0;
  std::string out;
  std::int64_t points = 2048;
  bool force = false;
  bool text = false;
};

struct TrainArgs {
  std::string config;
  std::string preset;
  std::string strategy;
  std::string operators;
  std::string data;
  std::string checkpoint;
  std::string log;
  std::int64_t epochs = 0;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string config;
  std::string dump;
  double cell_size = 0.0;
};

struct InspectArgs {
  std::string data;
  std::string curve = "hilbert";
  std::string out;
  double cell_size = 0.05;
};

int gen_data(const GenDataArgs& a, std::ostream& out) {
  if (a.scenes < 1) throw ConfigError("--scenes: must be >= 1");
  if (a.points < 1) throw ConfigError("--points: must be >= 1");
  const fs::path dir(a.out);
  std::vector<fs::path> targets;
  for (std::int64_t i = 0; i < a.scenes; ++i) {
    std::ostringstream name;
    name << "scene_" << std::setw(4) << std::setfill('0') << i << (a.text ? ".txt" : ".pcs");
    targets.push_back(dir / name.str());
  }
  if (!a.force) {
    for (const auto& t : targets) {
      if (fs::exists(t)) throw InputError("'" + t.string() + "' already exists; pass --force to overwrite");
    }
  }
  // Generate everything before touching the disk so a failure writes nothing.
  std::vector<PointCloud> clouds;
  for (std::int64_t i = 0; i < a.scenes; ++i) {
    SceneSpec spec;
    spec.seed = scene_seed(a.seed, static_cast<std::uint64_t>(i));
    spec.points = a.points;
    clouds.push_back(generate_scene(spec));
  }
  fs::create_directories(dir);
  for (std::size_t i = 0; i < clouds.size(); ++i) {
    write_point_cloud(targets[i], clouds[i], a.text ? CloudFormat::kText : CloudFormat::kBinary);
  }
  out << "wrote " << clouds.size() << " scenes to " << dir.string() << "\n";
  return kExitOk;
}

void check_labels(const std::vector<PointCloud>& scenes, const NetworkConfig& model) {
  for (const auto& s : scenes) {
    if (s.feature_dim != model.in_channels) {
      throw ModelMismatchError("data has " + std::to_string(s.feature_dim) + " feature channels, model expects " +
                               std::to_string(model.in_channels));
    }
    for (auto l : s.labels) {
      if (l != kIgnoreLabel && (l < 0 || l >= model.num_classes)) {
        throw ModelMismatchError("data label " + std::to_string(l) + " outside the model's " +
                                 std::to_string(model.num_classes) + " classes");
      }
    }
  }
}

std::string config_path_for(const std::string& checkpoint) { return checkpoint + ".config.json"; }

int train_cmd(const TrainArgs& a, std::ostream& out) {
  if (!a.config.empty() && !a.preset.empty()) throw ConfigError("--config and --preset are mutually exclusive");
  RunConfig cfg = a.config.empty() ? preset_config(a.preset.empty() ? "tiny" : a.preset) : load_run_config(a.config);
  if (!a.strategy.empty()) cfg.model.strategy = parse_strategy(a.strategy);
  if (!a.operators.empty()) cfg.model.operators = parse_operators(a.operators);
  if (!a.data.empty()) cfg.data.train_dir = a.data;
  if (!a.checkpoint.empty()) cfg.output.checkpoint = a.checkpoint;
  if (!a.log.empty()) cfg.output.log = a.log;
  if (a.epochs > 0) cfg.train.epochs = a.epochs;
  if (a.seed_set) cfg.seed = a.seed;
  cfg.validate();

  TrainInputs in;
  in.train_scenes = load_scenes(cfg.data.train_dir);
  if (!cfg.data.val_dir.empty()) in.val_scenes = load_scenes(cfg.data.val_dir);
  check_labels(in.train_scenes, cfg.model);
  check_labels(in.val_scenes, cfg.model);
  in.model = cfg.model;
  in.train = cfg.train;
  in.cell_size = cfg.data.cell_size;
  in.seed = cfg.seed;
  in.log_path = cfg.output.log;
  in.checkpoint_path = cfg.output.checkpoint;
  in.on_epoch = [&out](const EpochLog& row) {
    out << "epoch " << row.epoch << " loss " << std::setprecision(6) << row.train_loss << " val_miou "
        << row.val_miou << "\n";
  };
  save_run_config(config_path_for(cfg.output.checkpoint), cfg);
  const TrainResult result = train(in);
  out << "strategy " << strategy_name(cfg.model.strategy) << " operators " << operators_name(cfg.model.operators)
      << "\n";
  out << "final val mIoU " << std::fixed << std::setprecision(2) << result.log.back().val_miou << " (best "
      << result.best_miou << " at epoch " << result.best_epoch << ")\n";
  return kExitOk;
}

void check_parameter_shapes(const ParameterStore& expected, const ParameterStore& actual) {
  for (const auto& [name, t] : expected) {
    if (!actual.contains(name)) throw ModelMismatchError("checkpoint lacks parameter '" + name + "'");
    if (actual.at(name).shape() != t.shape()) {
      throw ModelMismatchError("parameter '" + name + "' is " + shape_string(actual.at(name).shape()) +
                               " in the checkpoint but " + shape_string(t.shape()) + " in the config");
    }
  }
  if (actual.size() != expected.size()) throw ModelMismatchError("checkpoint holds parameters the config does not define");
}

int eval_cmd(const EvalArgs& a, std::ostream& out) {
  const RunConfig cfg = load_run_config(a.config.empty() ? config_path_for(a.checkpoint) : a.config);
  Checkpoint ckpt = read_checkpoint(a.checkpoint);
  check_parameter_shapes(init_parameters(cfg.model, 0), ckpt.params);
  const auto files = scene_files(a.data);
  std::vector<PointCloud> scenes;
  for (const auto& f : files) scenes.push_back(read_point_cloud(f));
  check_labels(scenes, cfg.model);
  const double cell = a.cell_size > 0.0 ? a.cell_size : cfg.data.cell_size;
  const EvalResult r = evaluate(scenes, cfg.model, ckpt.params, cell);

  out << "class,iou\n";
  for (std::size_t c = 0; c < r.miou.per_class.size(); ++c) {
    out << c << ',';
    if (r.miou.per_class[c]) {
      out << std::fixed << std::setprecision(2) << 100.0 * *r.miou.per_class[c];
    } else {
      out << "n/a";
    }
    out << '\n';
  }
  out << std::fixed << std::setprecision(2) << "mIoU " << r.miou.mean_percent << "\naccuracy "
      << 100.0 * r.accuracy << "\n";

  if (!a.dump.empty()) {
    fs::create_directories(a.dump);
    for (std::size_t i = 0; i < scenes.size(); ++i) {
      PointCloud labeled = scenes[i];
      labeled.labels = r.predictions[i];
      write_point_cloud(fs::path(a.dump) / files[i].filename().replace_extension(".pcs"), labeled);
    }
  }
  return kExitOk;
}

int inspect_cmd(const InspectArgs& a, std::ostream& out) {
  if (!(a.cell_size > 0.0)) throw ConfigError("--cell: must be > 0");
  const PointCloud cloud = read_point_cloud(a.data);
  const SparseVoxelSet voxels = voxelize(cloud, a.cell_size);
  const SerializedOrder order = serialize(voxels, parse_curve(a.curve));

  std::ofstream file;
  if (!a.out.empty()) {
    file.open(a.out);
    if (!file) throw InputError("cannot write '" + a.out + "'");
  }
  std::ostream& csv = a.out.empty() ? out : file;
  csv << "index,x,y,z,key,rank\n";
  for (std::int64_t i = 0; i < voxels.size(); ++i) {
    const auto& c = voxels.coords[i];
    csv << i << ',' << c[0] << ',' << c[1] << ',' << c[2] << ',' << order.keys[i] << ',' << order.inv_perm[i] << '\n';
  }
  if (!a.out.empty()) {
    out << voxels.size() << " voxels, curve " << curve_name(order.curve) << ", mean adjacent distance "
        << mean_adjacent_distance(voxels.coords, order.perm) << "\n";
  }
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hybrid attention / state-space 3D semantic segmentation"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Write synthetic labeled indoor scenes");
  gen_cmd->add_option("--scenes", gen.scenes, "Number of scenes")->required();
  gen_cmd->add_option("--seed", gen.seed, "Base seed");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--points", gen.points, "Points per scene");
  gen_cmd->add_flag("--force", gen.force, "Overwrite existing files");
  gen_cmd->add_flag("--text", gen.text, "Write the whitespace text format instead of PCS1");

  TrainArgs tr;
  auto* train_sub = app.add_subcommand("train", "Train a model");
  train_sub->add_option("--config", tr.config, "JSON run config");
  train_sub->add_option("--preset", tr.preset, "Built-in config: tiny or paper-scale");
  train_sub->add_option("--strategy", tr.strategy, "inner_attn_first, inner_mamba_first, outer_attn_first, outer_mamba_first");
  train_sub->add_option("--operators", tr.operators, "both, attention_only or mamba_only");
  train_sub->add_option("--data", tr.data, "Training scene directory");
  train_sub->add_option("--checkpoint", tr.checkpoint, "Checkpoint path");
  train_sub->add_option("--log", tr.log, "Metric CSV path");
  train_sub->add_option("--epochs", tr.epochs, "Override epoch count");
  auto* seed_opt = train_sub->add_option("--seed", tr.seed, "Override seed");

  EvalArgs ev;
  auto* eval_sub = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_sub->add_option("--checkpoint", ev.checkpoint, "Checkpoint path")->required();
  eval_sub->add_option("--data", ev.data, "Scene directory")->required();
  eval_sub->add_option("--config", ev.config, "Run config (default <checkpoint>.config.json)");
  eval_sub->add_option("--cell", ev.cell_size, "Override voxel size");
  eval_sub->add_option("--dump-predictions", ev.dump, "Write predicted labels as clouds to this directory");

  InspectArgs ins;
  auto* inspect_sub = app.add_subcommand("inspect-serialization", "Dump curve keys and ranks of one cloud as CSV");
  inspect_sub->add_option("--data", ins.data, "Point cloud file")->required();
  inspect_sub->add_option("--curve", ins.curve, "hilbert or z_order");
  inspect_sub->add_option("--cell", ins.cell_size, "Voxel size");
  inspect_sub->add_option("--out", ins.out, "CSV path (default stdout)");

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, m;
    const int code = app.exit(e, o, m);
    out << o.str();
    err << m.str();
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (gen_cmd->parsed()) return gen_data(gen, out);
    if (train_sub->parsed()) {
      tr.seed_set = seed_opt->count() > 0;
      return train_cmd(tr, out);
    }
    if (eval_sub->parsed()) return eval_cmd(ev, out);
    if (inspect_sub->parsed()) return inspect_cmd(ins, out);
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ModelMismatchError& e) {
    err << "model/data mismatch: " << e.what() << "\n";
    return kExitMismatch;
  } catch (const MappingError& e) {
    err << "model/data mismatch: " << e.what() << "\n";
    return kExitMismatch;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const InputError& e) {
    err << "input error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const GenerationError& e) {
    err << "generation error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const RangeError& e) {
    err << "input error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitInternal;
}

}  // namespace hybridseg
