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

// Differentiable operations. Every op takes the tape first, computes the
// forward value eagerly and, when any input requires a gradient and the
// tape is recording, appends its backward rule.
//
// All forward outputs are checked for non-finite values; a NaN/Inf raises
// NumericError naming the op instead of being stored.

#pragma once

#include <span>

#include "oarsi/tensor.hpp"

namespace oarsi::ops {

enum class Mode { kTrain, kEval };

struct Conv2dOptions {
  int stride = 1;
  int padding = 0;
  int groups = 1;
};

/// input [N,Cin,H,W], weight [Cout,Cin/groups,kH,kW], bias [Cout] or
/// undefined. Output [N,Cout,(H+2p-kH)/s+1,(W+2p-kW)/s+1].
template <typename T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>& bias, Conv2dOptions opt);

/// Running statistics of a batch-norm layer. Updated in place in train mode.
template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);
};

template <typename T>
Tensor<T> batch_norm2d(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& gamma,
                       const Tensor<T>& beta, BatchNormState<T>& state, Mode mode);

template <typename T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(Tape<T>& tape, const Tensor<T>& x);
template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& x, T factor);
template <typename T>
Tensor<T> negate(Tape<T>& tape, const Tensor<T>& x) {
  return scale(tape, x, T(-1));
}

/// x [N,C,H,W] times gate [N,C] broadcast over H,W.
template <typename T>
Tensor<T> mul_channels(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& gate);

template <typename T>
Tensor<T> avg_pool2d(Tape<T>& tape, const Tensor<T>& x, int kernel, int stride);
/// [N,C,H,W] -> [N,C].
template <typename T>
Tensor<T> global_avg_pool(Tape<T>& tape, const Tensor<T>& x);

/// Softmax over the H*W positions of a single-channel map [N,1,H,W].
template <typename T>
Tensor<T> spatial_softmax(Tape<T>& tape, const Tensor<T>& logits);
/// features [N,C,H,W], weights [N,1,H,W] -> [N,C], sum over positions.
template <typename T>
Tensor<T> weighted_spatial_sum(Tape<T>& tape, const Tensor<T>& features,
                               const Tensor<T>& weights);

/// input [N,F], weight [O,F], bias [O] -> [N,O].
template <typename T>
Tensor<T> linear(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>& bias);

/// Inverted dropout: survivors scaled by 1/(1-p) in train mode; identity in
/// eval mode. Draws from the tape's RNG.
template <typename T>
Tensor<T> dropout(Tape<T>& tape, const Tensor<T>& x, double p, Mode mode);

/// Row-wise softmax of [N,K].
template <typename T>
Tensor<T> softmax(Tape<T>& tape, const Tensor<T>& logits);

/// Mean negative log-likelihood of integer targets under softmax(logits).
template <typename T>
Tensor<T> cross_entropy(Tape<T>& tape, const Tensor<T>& logits, std::span<const int> targets);

/// Sum of all elements -> scalar [1].
template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& x);

/// Non-differentiable helper: row-wise softmax computed in double.
template <typename T>
std::vector<double> softmax_rows(const Tensor<T>& logits);

}  // namespace oarsi::ops
