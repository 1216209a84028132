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

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "oarsi/blocks.hpp"
#include "oarsi/json_util.hpp"
#include "oarsi/serialize.hpp"
#include "oarsi/tasks.hpp"

namespace oarsi {

struct HeadSpec {
  std::string task;
  int classes = 0;
  bool operator==(const HeadSpec&) const = default;
};

struct StemSpec {
  int out_channels = 16;
  int kernel = 3;
  int stride = 2;
  bool avg_pool = true;  // 2x2/2 average pooling after the stem
  bool operator==(const StemSpec&) const = default;
};

/// Declarative description of backbone + pooling + heads.
struct ModelConfig {
  std::string name = "custom";
  StemSpec stem;
  std::vector<BlockSpec> blocks;
  PoolingSpec pooling;
  std::vector<HeadSpec> heads;
  double dropout_p = 0.5;
  bool include_kl_head = true;

  std::vector<std::string> violations() const;
  void validate() const;
  int feature_width() const;

  Json to_json() const;
  static ModelConfig from_json(const Json& j);

  bool operator==(const ModelConfig&) const = default;
};

/// The fixed head list: all seven tasks, or the six OARSI tasks.
std::vector<HeadSpec> default_heads(bool include_kl_head);

enum class MiniVariant { kResNet, kSeResNet, kSeResNeXt };

/// Desk-scale backbone: 4 stages of one block, base width 16, strides
/// 1/2/2/2. kResNet uses basic blocks; the SE variants use bottlenecks
/// (expansion 4), kSeResNeXt with cardinality 8.
ModelConfig mini_config(MiniVariant variant, bool include_kl_head = true,
                        PoolingSpec pooling = {});
MiniVariant mini_variant_from_string(const std::string& s);

struct TaskPrediction {
  std::vector<double> probabilities;
  int grade = 0;
};

template <typename T>
class Model {
 public:
  Model() = default;

  /// Deterministic given the seed: He-normal fan-in weights, zero biases,
  /// unit/zero batch-norm affine terms.
  static Model build(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::size_t num_heads() const { return heads_.size(); }

  /// Pooled backbone features [N, feature_width].
  Tensor<T> features(Tape<T>& tape, const Tensor<T>& batch, Mode mode);

  /// One logits tensor [N,classes] per configured head, in head order.
  std::vector<Tensor<T>> forward(Tape<T>& tape, const Tensor<T>& batch, Mode mode);

  /// Eval-mode forward returning softmax probabilities per exam and head.
  std::vector<std::vector<TaskPrediction>> predict(const Tensor<T>& batch);

  ParamList<T> parameters() const;
  ParamList<T> backbone_parameters() const;
  ParamList<T> head_parameters(std::size_t head) const;

  /// Frozen backbone parameters get no gradient; its batch norms run in
  /// eval mode so running statistics stay fixed too.
  void set_backbone_trainable(bool flag);
  bool backbone_trainable() const { return backbone_trainable_; }

  std::vector<NamedTensor> state() const;
  std::vector<NamedTensor> backbone_state() const;
  /// Replaces all tensors; names and shapes must match exactly.
  void load_state(const std::vector<NamedTensor>& tensors);
  /// Replaces backbone tensors. `heads.*` entries in the source are ignored.
  void load_backbone_state(const std::vector<NamedTensor>& tensors);

  void save_weights(const std::filesystem::path& path) const;
  void load_weights(const std::filesystem::path& path);
  void save_backbone_weights(const std::filesystem::path& path) const;
  void load_backbone_weights(const std::filesystem::path& path);

  Model clone() const;

 private:
  ModelConfig config_;
  Conv2d<T> stem_conv_;
  BatchNorm2d<T> stem_norm_;
  std::vector<ResidualBlock<T>> blocks_;
  PoolHead<T> pool_;
  std::vector<Linear<T>> heads_;
  bool backbone_trainable_ = true;
};

/// FNV-1a digest of the serialized tensors.
std::uint64_t checksum(const std::vector<NamedTensor>& tensors);

}  // namespace oarsi
