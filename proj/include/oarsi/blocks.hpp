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

// Network building blocks: convolution/batch-norm layers, the
// squeeze-excitation gate, basic and bottleneck residual blocks (with
// optional group cardinality) and the pooling head (plain average, GWAP,
// GWAP with a hidden layer).

#pragma once

#include <string>
#include <vector>

#include "oarsi/ops.hpp"
#include "oarsi/rng.hpp"
#include "oarsi/tensor.hpp"

namespace oarsi {

using ops::Mode;

inline constexpr int kBottleneckExpansion = 4;

enum class BlockKind { kBasic, kBottleneck };

struct BlockSpec {
  BlockKind kind = BlockKind::kBasic;
  int in_channels = 16;
  int out_channels = 16;
  int stride = 1;
  int groups = 1;       // cardinality; 1 for plain ResNet blocks
  int group_width = 0;  // channels per group when groups > 1
  bool se_enabled = false;
  int se_reduction = 16;

  /// Width of the inner 3x3 convolution.
  int mid_channels() const;
  std::vector<std::string> violations() const;
  /// Throws ConfigError listing every violation.
  void validate() const;

  bool operator==(const BlockSpec&) const = default;
};

enum class PoolingKind { kAvg, kGwap, kGwapHidden };

struct PoolingSpec {
  PoolingKind kind = PoolingKind::kAvg;
  int hidden_width = 0;

  std::vector<std::string> violations() const;
  bool operator==(const PoolingSpec&) const = default;
};

std::string to_string(BlockKind kind);
std::string to_string(PoolingKind kind);
BlockKind block_kind_from_string(const std::string& s);
PoolingKind pooling_kind_from_string(const std::string& s);

/// A named tensor owned by a layer. Buffers (batch-norm running statistics)
/// are serialized with the weights but never optimized.
template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
  bool is_buffer = false;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_channels, int out_channels, int kernel, ops::Conv2dOptions opt, bool with_bias,
         Rng& rng);

  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x) const {
    return ops::conv2d(tape, x, weight, bias, opt);
  }
  void collect(const std::string& prefix, ParamList<T>& out) const;

  Tensor<T> weight;
  Tensor<T> bias;  // undefined when the layer has no bias
  ops::Conv2dOptions opt;
};

template <typename T>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  explicit BatchNorm2d(int channels);

  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x, Mode mode) {
    return ops::batch_norm2d(tape, x, gamma, beta, state, mode);
  }
  void collect(const std::string& prefix, ParamList<T>& out) const;

  Tensor<T> gamma;
  Tensor<T> beta;
  ops::BatchNormState<T> state;
};

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(int in_features, int out_features, Rng& rng);

  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x) const {
    return ops::linear(tape, x, weight, bias);
  }
  void collect(const std::string& prefix, ParamList<T>& out) const;

  Tensor<T> weight;
  Tensor<T> bias;
};

/// Channel gate: x * sigmoid(W2 relu(W1 avg(x) + b1) + b2).
template <typename T>
class SeGate {
 public:
  SeGate() = default;
  SeGate(int channels, int reduction, Rng& rng);

  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& features) const;
  void collect(const std::string& prefix, ParamList<T>& out) const;

  Linear<T> squeeze;  // C -> C/r
  Linear<T> excite;   // C/r -> C
  int reduction = 16;
};

/// relu(branch(x) + shortcut(x)), with the SE gate on the branch output.
template <typename T>
class ResidualBlock {
 public:
  ResidualBlock() = default;
  ResidualBlock(const BlockSpec& spec, Rng& rng);

  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x, Mode mode);
  void collect(const std::string& prefix, ParamList<T>& out) const;
  const BlockSpec& spec() const { return spec_; }
  bool has_projection() const { return has_projection_; }

  // Basic: conv1/bn1 (3x3), conv2/bn2 (3x3).
  // Bottleneck: conv1/bn1 (1x1), conv2/bn2 (3x3, grouped), conv3/bn3 (1x1).
  std::vector<Conv2d<T>> convs;
  std::vector<BatchNorm2d<T>> norms;
  Conv2d<T> proj_conv;
  BatchNorm2d<T> proj_norm;
  SeGate<T> se;

 private:
  BlockSpec spec_;
  bool has_projection_ = false;
};

/// Global pooling to [N,C]. GWAP computes a spatial softmax over a learned
/// 1x1-conv score map and returns the weighted spatial sum per channel.
template <typename T>
class PoolHead {
 public:
  PoolHead() = default;
  PoolHead(const PoolingSpec& spec, int channels, Rng& rng);

  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& features) const;
  /// Spatial weight map [N,1,H,W] (GWAP variants only).
  Tensor<T> weight_map(Tape<T>& tape, const Tensor<T>& features) const;
  void collect(const std::string& prefix, ParamList<T>& out) const;
  const PoolingSpec& spec() const { return spec_; }

  Conv2d<T> hidden;  // gwap_hidden only
  Conv2d<T> score;   // gwap variants

 private:
  PoolingSpec spec_;
};

}  // namespace oarsi
