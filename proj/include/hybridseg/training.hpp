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
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hybridseg/network.hpp"
#include "hybridseg/parameters.hpp"
#include "hybridseg/pointcloud.hpp"

namespace hybridseg {

// Mean over non-ignored points of -log softmax(logits)[label]. Throws
// NumericError when every label is ignored, MappingError for labels >= K.
Tensor cross_entropy(const Tensor& logits, std::span<const std::int32_t> labels);

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

struct OptimState {
  std::map<std::string, std::vector<double>> first_moment;
  std::map<std::string, std::vector<double>> second_moment;
  std::int64_t step = 0;
};

// One AdamW update with bias-corrected moments. Weight decay is decoupled:
// p <- p - lr * wd * p happens before, and independently of, the Adam step.
// Parameters without an entry in `grads` are treated as having zero gradient.
void adamw_step(ParameterStore& params, const std::map<std::string, std::vector<double>>& grads, OptimState& state,
                const AdamWConfig& config);

// Cosine warm-up from max_lr/div to max_lr over pct_start * total_steps, then
// cosine annealing to max_lr/final_div. Throws RangeError outside
// [0, total_steps].
double onecycle_lr(std::int64_t step, std::int64_t total_steps, double max_lr, double pct_start, double div,
                   double final_div);

class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::int64_t num_classes);

  // Points labeled kIgnoreLabel are skipped. Throws MappingError for labels
  // or predictions outside [0, num_classes).
  void add(std::int32_t label, std::int32_t prediction);
  void add(std::span<const std::int32_t> labels, std::span<const std::int32_t> predictions);

  std::int64_t num_classes() const { return num_classes_; }
  std::int64_t count(std::int32_t label, std::int32_t prediction) const {
    return counts_[static_cast<std::size_t>(label * num_classes_ + prediction)];
  }
  std::int64_t total() const;
  double accuracy() const;

 private:
  std::int64_t num_classes_;
  std::vector<std::int64_t> counts_;
};

struct MiouResult {
  std::vector<std::optional<double>> per_class;  // nullopt when TP+FP+FN == 0
  double mean_percent = 0.0;
};

// IoU_c = TP / (TP + FP + FN); classes with an empty denominator are left out
// of the mean. Throws NumericError when every class is empty.
MiouResult miou(const ConfusionMatrix& matrix);

std::vector<std::int32_t> argmax_rows(const Tensor& logits);

struct TrainConfig {
  std::int64_t epochs = 100;
  std::int64_t batch_size = 2;
  double max_lr = 1e-3;
  double pct_start = 0.3;
  double div_factor = 10.0;
  double final_div_factor = 1e3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
  bool rotate_augment = false;

  // Throws ConfigError with a "train.<field>" path.
  void validate() const;
};

struct EpochLog {
  std::int64_t epoch = 0;
  std::int64_t step = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_miou = 0.0;
};

inline constexpr const char* kMetricLogHeader = "epoch,step,lr,train_loss,val_miou";
std::string format_log_row(const EpochLog& row);

struct TrainInputs {
  std::vector<PointCloud> train_scenes;
  std::vector<PointCloud> val_scenes;  // empty: evaluate on train_scenes
  NetworkConfig model;
  TrainConfig train;
  double cell_size = 0.05;
  std::uint64_t seed = 0;
  std::string log_path;         // CSV metric log, optional
  std::string checkpoint_path;  // best-mIoU checkpoint, optional
  std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
  ParameterStore final_params;
  ParameterStore best_params;
  OptimState optimizer;
  std::vector<EpochLog> log;
  double best_miou = 0.0;
  std::int64_t best_epoch = 0;
};

// Seeded epochs of shuffled mini-batches with per-epoch validation. Throws
// NumericError naming the batch seed when a loss is not finite.
TrainResult train(const TrainInputs& inputs);

struct EvalResult {
  ConfusionMatrix confusion{2};
  MiouResult miou;
  double accuracy = 0.0;
  std::vector<std::vector<std::int32_t>> predictions;  // per scene, per point
};

EvalResult evaluate(const std::vector<PointCloud>& scenes, const NetworkConfig& config, const ParameterStore& params,
                    double cell_size);
EvalResult evaluate(const std::vector<SceneGeometry>& scenes, const std::vector<PointCloud>& clouds,
                    const NetworkConfig& config, const ParameterStore& params);

// Worker-thread cap: HTM_THREADS when set, else hardware concurrency.
int worker_threads();

}  // namespace hybridseg
