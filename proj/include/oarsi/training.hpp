// Copyright 2026 The oarsi-mt Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Adam, the multi-task loss, the two learning-rate schedules, per-fold
// training with snapshot selection, and proxy-task pretraining.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "oarsi/dataset.hpp"
#include "oarsi/json_util.hpp"
#include "oarsi/metrics.hpp"
#include "oarsi/model.hpp"
#include "oarsi/preprocess.hpp"
#include "oarsi/synth.hpp"

namespace oarsi {

enum class Schedule { kTransfer, kScratch };
std::string to_string(Schedule s);
Schedule schedule_from_string(const std::string& s);

struct TrainConfig {
  Schedule schedule = Schedule::kScratch;
  int epochs = 20;
  double lr_stage_head = 1e-2;   // transfer, epochs 1-2, backbone frozen
  double lr_stage_full = 1e-3;   // transfer, epoch 3
  double lr_stage_final = 1e-4;  // transfer, epochs 4..
  double scratch_lr = 1e-4;
  std::vector<int> scratch_drop_epochs{10, 15};  // LR divided after these epochs
  double scratch_drop_factor = 10.0;
  double weight_decay = 1e-4;
  double dropout_p = 0.5;
  int batch_size = 32;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  std::vector<double> task_weights;  // empty = all 1, else one per head
  SamplerScheme sampler = SamplerScheme::kNone;
  double noise_sigma = 0.02;  // augmentation, [0,1] domain
  double gamma_low = 0.9;
  double gamma_high = 1.1;
  KappaWeighting kappa = KappaWeighting::kQuadratic;

  void validate() const;
  Json to_json() const;
  static TrainConfig from_json(const Json& j);
};

struct EpochStage {
  double lr = 0;
  bool backbone_trainable = true;
};

/// Stage in effect for 1-based `epoch`; switches happen before the
/// epoch's first batch.
EpochStage stage_for_epoch(const TrainConfig& cfg, int epoch);
std::vector<double> lr_trace(const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// optimizer

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0;
};

struct AdamSlot {
  std::vector<double> m, v;
  std::int64_t step = 0;
};

/// One classic Adam step with coupled L2: g' = g + wd * theta, moments on
/// g', bias correction by the slot's own step count. Throws TrainingError
/// naming `name` on a non-finite gradient.
template <typename T>
void adam_update(std::span<T> param, std::span<const T> grad, AdamSlot& slot, const AdamHyper& h,
                 const std::string& name);

/// Adam over a model's parameter list. Parameters without requires_grad
/// (frozen) and buffers are skipped entirely: no moment update, no decay,
/// no step count.
template <typename T>
class Adam {
 public:
  explicit Adam(ParamList<T> params) : params_(std::move(params)) {}
  void step(const AdamHyper& h);
  void zero_grad();
  const std::map<std::string, AdamSlot>& slots() const { return slots_; }

 private:
  ParamList<T> params_;
  std::map<std::string, AdamSlot> slots_;
};

/// sum_t w_t * CE_t with batch-mean cross entropy per head. `targets[t]`
/// must hold one label per batch row.
template <typename T>
Tensor<T> multi_task_loss(Tape<T>& tape, const std::vector<Tensor<T>>& logits,
                          const std::vector<std::vector<int>>& targets,
                          const std::vector<double>& task_weights);

// ---------------------------------------------------------------------------
// fold training

struct Example {
  std::string exam_id;
  NormalizedImage image;
  Grades grades;
};

struct FoldData {
  std::vector<Example> train;
  std::vector<Example> val;
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0;
  bool backbone_frozen = false;
  double train_loss = 0;
  std::vector<double> val_kappa;  // per head; NaN when undefined
  std::vector<double> val_ba;     // per head, percent
  std::uint64_t backbone_checksum = 0;

  /// Mean over heads with a defined kappa; -inf when none is defined.
  double mean_kappa() const;
};

struct Snapshot {
  ModelConfig model;
  std::vector<NamedTensor> weights;
  int fold = 0;
  int epoch = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::map<std::string, double> val_kappa;  // per head task name
  std::map<std::string, double> val_ba;

  Json meta_json() const;
  /// Writes <stem>.weights and <stem>.meta.json.
  void save(const std::filesystem::path& stem) const;
  static Snapshot load(const std::filesystem::path& stem);
};

/// Index of the epoch maximizing mean validation kappa; ties go to the
/// later epoch.
std::size_t select_snapshot(const std::vector<EpochRecord>& history);

struct FoldRun {
  int fold = 0;
  std::string config_hash;
  std::filesystem::path log_csv;  // empty = no log
  std::function<void(const EpochRecord&)> on_epoch;
};

struct FoldResult {
  Snapshot snapshot;
  std::vector<EpochRecord> history;
  std::uint64_t initial_backbone_checksum = 0;
};

/// Trains one fold. Transfer requires `pretrained` backbone tensors and
/// scratch forbids them (ConfigError otherwise). The model's dropout is
/// taken from the train config.
FoldResult run_fold(ModelConfig model_cfg, const TrainConfig& cfg, const FoldData& data,
                    const std::vector<NamedTensor>* pretrained, const FoldRun& run);

std::string history_csv(const std::vector<EpochRecord>& history, const std::vector<HeadSpec>& heads);

/// Eval-mode probabilities per exam and head over center crops of the
/// training crop size, batched.
std::vector<std::vector<TaskPrediction>> predict_examples(Model<float>& model,
                                                          const std::vector<const NormalizedImage*>& images,
                                                          int batch_size = 64);

// ---------------------------------------------------------------------------
// proxy pretraining

struct PretrainConfig {
  int samples = 600;
  int epochs = 6;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  int batch_size = 32;
  std::uint64_t seed = 0;
  RenderParams render;

  void validate() const;
  Json to_json() const;
  static PretrainConfig from_json(const Json& j);
};

struct PretrainResult {
  std::vector<NamedTensor> backbone;
  std::vector<double> epoch_loss;
  double final_accuracy = 0;  // on the training samples, eval mode
};

/// Trains the backbone plus a temporary linear head on the auxiliary
/// osteophyte-count task and returns the backbone tensors.
PretrainResult pretrain_proxy(const ModelConfig& model_cfg, const PretrainConfig& cfg,
                              const PreprocessParams& prep, int threads = 1);

}  // namespace oarsi
