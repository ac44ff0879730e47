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

#include "hybridseg/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <sstream>
#include <thread>

#include "hybridseg/errors.hpp"
#include "hybridseg/io.hpp"
#include "hybridseg/ops.hpp"

namespace hybridseg {

Tensor cross_entropy(const Tensor& logits, std::span<const std::int32_t> labels) {
  if (logits.rank() != 2 || logits.dim(0) != static_cast<std::int64_t>(labels.size())) {
    throw DimensionError("cross_entropy: logits " + shape_string(logits.shape()) + " for " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::int64_t p = logits.dim(0);
  const std::int64_t k = logits.dim(1);
  std::int64_t scored = 0;
  for (auto l : labels) {
    if (l == kIgnoreLabel) continue;
    if (l < 0 || l >= k) throw MappingError("cross_entropy: label " + std::to_string(l) + " outside [0, " + std::to_string(k) + ")");
    ++scored;
  }
  if (scored == 0) throw NumericError("cross_entropy: every point is ignored, loss is undefined");

  auto lv = logits.data();
  std::vector<double> probs(static_cast<std::size_t>(p * k));
  double total = 0.0;
  for (std::int64_t i = 0; i < p; ++i) {
    std::span<double> row(probs.data() + i * k, static_cast<std::size_t>(k));
    std::copy_n(lv.data() + i * k, k, row.begin());
    if (labels[i] == kIgnoreLabel) continue;
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    total += -(row[labels[i]] - mx - std::log(z));
    kernels::softmax_row(row);
  }
  const double inv = 1.0 / static_cast<double>(scored);
  Tensor out = Tensor::scalar(total * inv);
  if (should_record({&logits})) {
    out.set_requires_grad(true);
    active_tape()->record([logits, out, p, k, inv, probs = std::move(probs),
                           lab = std::vector<std::int32_t>(labels.begin(), labels.end())]() mutable {
      if (!out.has_grad()) return;
      const double g = out.grad()[0] * inv;
      auto gl = logits.mutable_grad();
      for (std::int64_t i = 0; i < p; ++i) {
        if (lab[i] == kIgnoreLabel) continue;
        for (std::int64_t c = 0; c < k; ++c) {
          gl[i * k + c] += g * (probs[i * k + c] - (c == lab[i] ? 1.0 : 0.0));
        }
      }
    });
  }
  return out;
}

void adamw_step(ParameterStore& params, const std::map<std::string, std::vector<double>>& grads, OptimState& state,
                const AdamWConfig& config) {
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(config.beta1, t);
  const double correction2 = 1.0 - std::pow(config.beta2, t);
  for (auto& [name, tensor] : params) {
    auto values = tensor.mutable_data();
    auto& m = state.first_moment[name];
    auto& v = state.second_moment[name];
    if (m.empty()) m.assign(values.size(), 0.0);
    if (v.empty()) v.assign(values.size(), 0.0);
    if (m.size() != values.size() || v.size() != values.size()) {
      throw DimensionError("adamw_step: optimizer state for '" + name + "' has the wrong size");
    }
    const std::vector<double>* g = nullptr;
    if (auto it = grads.find(name); it != grads.end()) {
      if (it->second.size() != values.size()) throw DimensionError("adamw_step: gradient for '" + name + "' has the wrong size");
      g = &it->second;
    }
    const double shrink = 1.0 - config.lr * config.weight_decay;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double gi = g ? (*g)[i] : 0.0;
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * gi;
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * gi * gi;
      values[i] *= shrink;
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      values[i] -= config.lr * m_hat / (std::sqrt(v_hat) + config.eps);
    }
  }
}

double onecycle_lr(std::int64_t step, std::int64_t total_steps, double max_lr, double pct_start, double div,
                   double final_div) {
  if (total_steps < 1) throw RangeError("onecycle_lr: total_steps must be >= 1");
  if (step < 0 || step > total_steps) {
    throw RangeError("onecycle_lr: step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) + "]");
  }
  auto cosine = [](double from, double to, double frac) {
    return to + (from - to) * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
  };
  const double warm = pct_start * static_cast<double>(total_steps);
  const double s = static_cast<double>(step);
  if (s <= warm) {
    return cosine(max_lr / div, max_lr, warm > 0.0 ? s / warm : 1.0);
  }
  return cosine(max_lr, max_lr / final_div, (s - warm) / (static_cast<double>(total_steps) - warm));
}

ConfusionMatrix::ConfusionMatrix(std::int64_t num_classes)
    : num_classes_(num_classes), counts_(static_cast<std::size_t>(num_classes * num_classes), 0) {
  if (num_classes < 1) throw ConfigError("confusion matrix needs at least one class");
}

void ConfusionMatrix::add(std::int32_t label, std::int32_t prediction) {
  if (label == kIgnoreLabel) return;
  if (label < 0 || label >= num_classes_ || prediction < 0 || prediction >= num_classes_) {
    throw MappingError("confusion matrix: label " + std::to_string(label) + " / prediction " +
                       std::to_string(prediction) + " outside [0, " + std::to_string(num_classes_) + ")");
  }
  ++counts_[static_cast<std::size_t>(label * num_classes_ + prediction)];
}

void ConfusionMatrix::add(std::span<const std::int32_t> labels, std::span<const std::int32_t> predictions) {
  if (labels.size() != predictions.size()) throw DimensionError("confusion matrix: label/prediction length mismatch");
  for (std::size_t i = 0; i < labels.size(); ++i) add(labels[i], predictions[i]);
}

std::int64_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::int64_t{0}); }

double ConfusionMatrix::accuracy() const {
  const auto n = total();
  if (n == 0) return 0.0;
  std::int64_t hit = 0;
  for (std::int64_t c = 0; c < num_classes_; ++c) hit += count(static_cast<std::int32_t>(c), static_cast<std::int32_t>(c));
  return static_cast<double>(hit) / static_cast<double>(n);
}

MiouResult miou(const ConfusionMatrix& matrix) {
  const auto k = matrix.num_classes();
  MiouResult out;
  out.per_class.resize(static_cast<std::size_t>(k));
  double sum = 0.0;
  int present = 0;
  for (std::int64_t c = 0; c < k; ++c) {
    std::int64_t tp = matrix.count(static_cast<std::int32_t>(c), static_cast<std::int32_t>(c));
    std::int64_t fn = 0, fp = 0;
    for (std::int64_t o = 0; o < k; ++o) {
      if (o == c) continue;
      fn += matrix.count(static_cast<std::int32_t>(c), static_cast<std::int32_t>(o));
      fp += matrix.count(static_cast<std::int32_t>(o), static_cast<std::int32_t>(c));
    }
    const std::int64_t denom = tp + fp + fn;
    if (denom == 0) continue;
    const double iou = static_cast<double>(tp) / static_cast<double>(denom);
    out.per_class[c] = iou;
    sum += iou;
    ++present;
  }
  if (present == 0) throw NumericError("mIoU is undefined: no class has any label or prediction");
  out.mean_percent = 100.0 * sum / present;
  return out;
}

std::vector<std::int32_t> argmax_rows(const Tensor& logits) {
  const std::int64_t rows = logits.dim(0);
  const std::int64_t k = logits.dim(1);
  std::vector<std::int32_t> out(static_cast<std::size_t>(rows));
  auto lv = logits.data();
  for (std::int64_t i = 0; i < rows; ++i) {
    const double* row = lv.data() + i * k;
    out[i] = static_cast<std::int32_t>(std::max_element(row, row + k) - row);
  }
  return out;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs: must be >= 1");
  if (batch_size < 1) throw ConfigError("train.batch_size: must be >= 1");
  if (!(max_lr > 0.0)) throw ConfigError("train.max_lr: must be > 0");
  if (!(pct_start >= 0.0 && pct_start < 1.0)) throw ConfigError("train.pct_start: must be in [0, 1)");
  if (!(div_factor >= 1.0)) throw ConfigError("train.div_factor: must be >= 1");
  if (!(final_div_factor >= 1.0)) throw ConfigError("train.final_div_factor: must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("train.beta1: must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train.beta2: must be in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("train.eps: must be > 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay: must be >= 0");
}

std::string format_log_row(const EpochLog& row) {
  std::ostringstream os;
  os << row.epoch << ',' << row.step << ',' << std::setprecision(10) << row.lr << ',' << row.train_loss << ','
     << row.val_miou;
  return os.str();
}

int worker_threads() {
  int n = static_cast<int>(std::thread::hardware_concurrency());
  if (n < 1) n = 1;
  if (const char* env = std::getenv("HTM_THREADS")) {
    const int cap = std::atoi(env);
    if (cap >= 1) n = std::min(n, cap);
  }
  return n;
}

namespace {

struct SceneGradient {
  double loss = 0.0;
  std::map<std::string, std::vector<double>> grads;
};

SceneGradient scene_gradient(const SceneGeometry& geometry, const PointCloud& cloud, const NetworkConfig& config,
                             const ParameterStore& params) {
  ParameterStore bound = params.bind();
  Tape tape;
  SceneGradient out;
  {
    TapeScope scope(tape);
    Tensor logits = forward(geometry, config, bound).point_logits;
    Tensor loss = cross_entropy(logits, cloud.labels);
    out.loss = loss.item();
    if (std::isfinite(out.loss)) tape.backward(loss);
  }
  if (std::isfinite(out.loss)) {
    for (const auto& [name, t] : bound) {
      if (t.has_grad()) out.grads.emplace(name, std::vector<double>(t.grad().begin(), t.grad().end()));
    }
  }
  return out;
}

// Rotates positions about the vertical axis through the cloud's centroid.
PointCloud rotate_about_vertical(const PointCloud& cloud, double angle) {
  PointCloud out = cloud;
  double cx = 0.0, cy = 0.0;
  for (const auto& p : cloud.positions) {
    cx += p[0];
    cy += p[1];
  }
  cx /= static_cast<double>(cloud.size());
  cy /= static_cast<double>(cloud.size());
  const double c = std::cos(angle), s = std::sin(angle);
  for (auto& p : out.positions) {
    const double x = p[0] - cx, y = p[1] - cy;
    p[0] = cx + c * x - s * y;
    p[1] = cy + s * x + c * y;
  }
  return out;
}

std::uint64_t batch_seed(std::uint64_t seed, std::int64_t epoch, std::int64_t batch) {
  std::uint64_t h = seed * 0x9e3779b97f4a7c15ULL;
  h ^= static_cast<std::uint64_t>(epoch) + 0x632be59bd9b4e019ULL + (h << 6) + (h >> 2);
  h ^= static_cast<std::uint64_t>(batch) + 0x85ebca6b0f6a5b2dULL + (h << 6) + (h >> 2);
  return h;
}

}  // namespace

EvalResult evaluate(const std::vector<SceneGeometry>& scenes, const std::vector<PointCloud>& clouds,
                    const NetworkConfig& config, const ParameterStore& params) {
  EvalResult out;
  out.confusion = ConfusionMatrix(config.num_classes);
  out.predictions.resize(scenes.size());
  const int threads = std::max(1, std::min<int>(worker_threads(), static_cast<int>(scenes.size())));
  auto work = [&](int worker) {
    for (std::size_t i = static_cast<std::size_t>(worker); i < scenes.size(); i += static_cast<std::size_t>(threads)) {
      out.predictions[i] = argmax_rows(forward(scenes[i], config, params).point_logits);
    }
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < threads; ++w) pool.emplace_back(work, w);
  }
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    for (auto l : clouds[i].labels) {
      if (l != kIgnoreLabel && (l < 0 || l >= config.num_classes)) {
        throw ModelMismatchError("scene label " + std::to_string(l) + " outside the model's " +
                                 std::to_string(config.num_classes) + " classes");
      }
    }
    out.confusion.add(clouds[i].labels, out.predictions[i]);
  }
  out.miou = miou(out.confusion);
  out.accuracy = out.confusion.accuracy();
  return out;
}

EvalResult evaluate(const std::vector<PointCloud>& scenes, const NetworkConfig& config, const ParameterStore& params,
                    double cell_size) {
  std::vector<SceneGeometry> geometry;
  geometry.reserve(scenes.size());
  for (const auto& s : scenes) geometry.push_back(build_geometry(s, config, cell_size));
  return evaluate(geometry, scenes, config, params);
}

TrainResult train(const TrainInputs& inputs) {
  inputs.model.validate();
  inputs.train.validate();
  if (inputs.train_scenes.empty()) throw InputError("training set is empty");
  const auto& cfg = inputs.train;
  const auto& train_clouds = inputs.train_scenes;
  const auto& val_clouds = inputs.val_scenes.empty() ? inputs.train_scenes : inputs.val_scenes;

  std::vector<SceneGeometry> train_geo, val_geo;
  for (const auto& s : train_clouds) train_geo.push_back(build_geometry(s, inputs.model, inputs.cell_size));
  if (inputs.val_scenes.empty()) {
    val_geo = train_geo;
  } else {
    for (const auto& s : val_clouds) val_geo.push_back(build_geometry(s, inputs.model, inputs.cell_size));
  }

  TrainResult result;
  result.final_params = init_parameters(inputs.model, inputs.seed);
  result.best_params = result.final_params.clone();
  result.best_miou = -1.0;
  ParameterStore& params = result.final_params;

  const auto num_scenes = static_cast<std::int64_t>(train_clouds.size());
  const std::int64_t batches_per_epoch = (num_scenes + cfg.batch_size - 1) / cfg.batch_size;
  const std::int64_t total_steps = batches_per_epoch * cfg.epochs;
  Rng shuffle_rng(inputs.seed ^ 0x5bd1e995ULL);
  const int threads = worker_threads();

  std::ofstream log_file;
  if (!inputs.log_path.empty()) {
    log_file.open(inputs.log_path);
    if (!log_file) throw InputError("cannot open metric log '" + inputs.log_path + "'");
    log_file << kMetricLogHeader << '\n';
  }

  std::vector<std::int64_t> order(static_cast<std::size_t>(num_scenes));
  std::iota(order.begin(), order.end(), std::int64_t{0});
  for (std::int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng.engine());
    double epoch_loss = 0.0;
    double lr = 0.0;
    for (std::int64_t b = 0; b < batches_per_epoch; ++b) {
      const std::uint64_t bseed = batch_seed(inputs.seed, epoch, b);
      const std::int64_t begin = b * cfg.batch_size;
      const std::int64_t end = std::min(num_scenes, begin + cfg.batch_size);
      const auto count = static_cast<std::size_t>(end - begin);

      std::vector<SceneGeometry> augmented;
      if (cfg.rotate_augment) {
        Rng rot(bseed);
        for (std::int64_t i = begin; i < end; ++i) {
          const double angle = rot.uniform(0.0, 2.0 * std::numbers::pi);
          augmented.push_back(
              build_geometry(rotate_about_vertical(train_clouds[order[i]], angle), inputs.model, inputs.cell_size));
        }
      }
      auto geometry_of = [&](std::size_t k) -> const SceneGeometry& {
        return cfg.rotate_augment ? augmented[k] : train_geo[order[begin + static_cast<std::int64_t>(k)]];
      };

      std::vector<SceneGradient> parts(count);
      const auto workers = static_cast<std::size_t>(std::max(1, std::min<int>(threads, static_cast<int>(count))));
      auto work = [&](std::size_t w) {
        for (std::size_t k = w; k < count; k += workers) {
          parts[k] = scene_gradient(geometry_of(k), train_clouds[order[begin + static_cast<std::int64_t>(k)]],
                                    inputs.model, params);
        }
      };
      if (workers == 1) {
        work(0);
      } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
      }

      // Reduce in scene order so results do not depend on thread timing.
      std::map<std::string, std::vector<double>> grads;
      double batch_loss = 0.0;
      for (const auto& part : parts) {
        if (!std::isfinite(part.loss)) {
          std::ostringstream os;
          os << "non-finite training loss at epoch " << epoch << ", batch " << b << " (batch seed " << bseed << ")";
          throw NumericError(os.str());
        }
        batch_loss += part.loss;
        for (const auto& [name, g] : part.grads) {
          auto& acc = grads[name];
          if (acc.empty()) acc.assign(g.size(), 0.0);
          for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
        }
      }
      const double inv = 1.0 / static_cast<double>(count);
      for (auto& [name, g] : grads) {
        for (double& v : g) v *= inv;
      }
      batch_loss *= inv;

      const std::int64_t step = (epoch - 1) * batches_per_epoch + b;
      lr = onecycle_lr(step, total_steps, cfg.max_lr, cfg.pct_start, cfg.div_factor, cfg.final_div_factor);
      adamw_step(params, grads, result.optimizer,
                 AdamWConfig{lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay});
      epoch_loss += batch_loss;
    }

    EpochLog row;
    row.epoch = epoch;
    row.step = epoch * batches_per_epoch;
    row.lr = lr;
    row.train_loss = epoch_loss / static_cast<double>(batches_per_epoch);
    row.val_miou = evaluate(val_geo, val_clouds, inputs.model, params).miou.mean_percent;
    result.log.push_back(row);
    if (log_file) log_file << format_log_row(row) << '\n' << std::flush;
    if (row.val_miou > result.best_miou) {
      result.best_miou = row.val_miou;
      result.best_epoch = epoch;
      result.best_params = params.clone();
      if (!inputs.checkpoint_path.empty()) write_checkpoint(inputs.checkpoint_path, params, &result.optimizer);
    }
    if (inputs.on_epoch) inputs.on_epoch(row);
  }
  return result;
}

}  // namespace hybridseg
