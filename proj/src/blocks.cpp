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

#include "oarsi/blocks.hpp"

#include <cmath>
#include <random>

namespace oarsi {
namespace {

template <typename T>
Tensor<T> he_normal(Shape shape, std::int64_t fan_in, Rng& rng) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  t.set_requires_grad(true);
  return t;
}

template <typename T>
Tensor<T> filled(Shape shape, T value, bool trainable) {
  Tensor<T> t(std::move(shape), value);
  t.set_requires_grad(trainable);
  return t;
}

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (const auto& p : parts) out += (out.empty() ? "" : "; ") + p;
  return out;
}

}  // namespace

int BlockSpec::mid_channels() const {
  if (kind == BlockKind::kBasic) return out_channels;
  if (groups > 1) return groups * group_width;
  return out_channels / kBottleneckExpansion;
}

std::vector<std::string> BlockSpec::violations() const {
  std::vector<std::string> v;
  if (in_channels < 1) v.push_back("in_channels must be >= 1");
  if (out_channels < 1) v.push_back("out_channels must be >= 1");
  if (stride < 1) v.push_back("stride must be >= 1");
  if (groups < 1) v.push_back("groups must be >= 1");
  if (groups > 1 && kind != BlockKind::kBottleneck) v.push_back("groups > 1 requires a bottleneck block");
  if (groups > 1 && group_width < 1) v.push_back("group_width must be >= 1 when groups > 1");
  if (kind == BlockKind::kBottleneck && out_channels % kBottleneckExpansion != 0) {
    v.push_back("bottleneck out_channels must be a multiple of " +
                std::to_string(kBottleneckExpansion));
  }
  if (kind == BlockKind::kBottleneck && groups == 1 && out_channels / kBottleneckExpansion < 1) {
    v.push_back("bottleneck out_channels too small");
  }
  if (se_enabled) {
    if (se_reduction < 1) {
      v.push_back("se_reduction must be >= 1");
    } else if (out_channels % se_reduction != 0) {
      v.push_back("se_reduction " + std::to_string(se_reduction) +
                  " does not divide gated channels " + std::to_string(out_channels));
    }
  }
  return v;
}

void BlockSpec::validate() const {
  auto v = violations();
  if (!v.empty()) throw ConfigError("invalid block: " + join(v));
}

std::vector<std::string> PoolingSpec::violations() const {
  std::vector<std::string> v;
  if (kind == PoolingKind::kGwapHidden && hidden_width < 1) {
    v.push_back("gwap_hidden requires hidden_width >= 1");
  }
  return v;
}

std::string to_string(BlockKind kind) {
  return kind == BlockKind::kBasic ? "basic" : "bottleneck";
}

std::string to_string(PoolingKind kind) {
  switch (kind) {
    case PoolingKind::kAvg: return "avg";
    case PoolingKind::kGwap: return "gwap";
    case PoolingKind::kGwapHidden: return "gwap_hidden";
  }
  return "avg";
}

BlockKind block_kind_from_string(const std::string& s) {
  if (s == "basic") return BlockKind::kBasic;
  if (s == "bottleneck") return BlockKind::kBottleneck;
  throw ConfigError("unknown block kind '" + s + "' (expected basic|bottleneck)");
}

PoolingKind pooling_kind_from_string(const std::string& s) {
  if (s == "avg") return PoolingKind::kAvg;
  if (s == "gwap") return PoolingKind::kGwap;
  if (s == "gwap_hidden") return PoolingKind::kGwapHidden;
  throw ConfigError("unknown pooling kind '" + s + "' (expected avg|gwap|gwap_hidden)");
}

template <typename T>
Conv2d<T>::Conv2d(int in_channels, int out_channels, int kernel, ops::Conv2dOptions o,
                  bool with_bias, Rng& rng)
    : opt(o) {
  if (in_channels % o.groups != 0 || out_channels % o.groups != 0) {
    throw ConfigError("conv: groups=" + std::to_string(o.groups) + " must divide " +
                      std::to_string(in_channels) + " and " + std::to_string(out_channels));
  }
  const int cg = in_channels / o.groups;
  weight = he_normal<T>(Shape{out_channels, cg, kernel, kernel},
                        static_cast<std::int64_t>(cg) * kernel * kernel, rng);
  if (with_bias) bias = filled<T>(Shape{out_channels}, T{0}, true);
}

template <typename T>
void Conv2d<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  out.push_back({prefix + ".weight", weight, false});
  if (bias.defined()) out.push_back({prefix + ".bias", bias, false});
}

template <typename T>
BatchNorm2d<T>::BatchNorm2d(int channels) {
  gamma = filled<T>(Shape{channels}, T{1}, true);
  beta = filled<T>(Shape{channels}, T{0}, true);
  state.running_mean = filled<T>(Shape{channels}, T{0}, false);
  state.running_var = filled<T>(Shape{channels}, T{1}, false);
}

template <typename T>
void BatchNorm2d<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  out.push_back({prefix + ".gamma", gamma, false});
  out.push_back({prefix + ".beta", beta, false});
  out.push_back({prefix + ".running_mean", state.running_mean, true});
  out.push_back({prefix + ".running_var", state.running_var, true});
}

template <typename T>
Linear<T>::Linear(int in_features, int out_features, Rng& rng) {
  weight = he_normal<T>(Shape{out_features, in_features}, in_features, rng);
  bias = filled<T>(Shape{out_features}, T{0}, true);
}

template <typename T>
void Linear<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  out.push_back({prefix + ".weight", weight, false});
  out.push_back({prefix + ".bias", bias, false});
}

template <typename T>
SeGate<T>::SeGate(int channels, int r, Rng& rng) : reduction(r) {
  if (r < 1 || channels % r != 0) {
    throw ConfigError("se_gate: reduction " + std::to_string(r) + " does not divide " +
                      std::to_string(channels) + " channels");
  }
  squeeze = Linear<T>(channels, channels / r, rng);
  excite = Linear<T>(channels / r, channels, rng);
}

template <typename T>
Tensor<T> SeGate<T>::forward(Tape<T>& tape, const Tensor<T>& features) const {
  if (features.rank() != 4 || features.dim(1) != squeeze.weight.dim(1)) {
    throw ConfigError("se_gate: expected [N," + std::to_string(squeeze.weight.dim(1)) +
                      ",H,W], got " + shape_str(features.shape()));
  }
  auto pooled = ops::global_avg_pool(tape, features);
  auto hidden = ops::relu(tape, squeeze.forward(tape, pooled));
  auto gate = ops::sigmoid(tape, excite.forward(tape, hidden));
  return ops::mul_channels(tape, features, gate);
}

template <typename T>
void SeGate<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  squeeze.collect(prefix + ".squeeze", out);
  excite.collect(prefix + ".excite", out);
}

template <typename T>
ResidualBlock<T>::ResidualBlock(const BlockSpec& spec, Rng& rng) : spec_(spec) {
  spec.validate();
  const int mid = spec.mid_channels();
  if (spec.kind == BlockKind::kBasic) {
    convs.emplace_back(spec.in_channels, mid, 3, ops::Conv2dOptions{spec.stride, 1, 1}, false, rng);
    norms.emplace_back(mid);
    convs.emplace_back(mid, spec.out_channels, 3, ops::Conv2dOptions{1, 1, 1}, false, rng);
    norms.emplace_back(spec.out_channels);
  } else {
    convs.emplace_back(spec.in_channels, mid, 1, ops::Conv2dOptions{1, 0, 1}, false, rng);
    norms.emplace_back(mid);
    convs.emplace_back(mid, mid, 3, ops::Conv2dOptions{spec.stride, 1, spec.groups}, false, rng);
    norms.emplace_back(mid);
    convs.emplace_back(mid, spec.out_channels, 1, ops::Conv2dOptions{1, 0, 1}, false, rng);
    norms.emplace_back(spec.out_channels);
  }
  has_projection_ = spec.stride != 1 || spec.in_channels != spec.out_channels;
  if (has_projection_) {
    proj_conv = Conv2d<T>(spec.in_channels, spec.out_channels, 1,
                          ops::Conv2dOptions{spec.stride, 0, 1}, false, rng);
    proj_norm = BatchNorm2d<T>(spec.out_channels);
  }
  if (spec.se_enabled) se = SeGate<T>(spec.out_channels, spec.se_reduction, rng);
}

template <typename T>
Tensor<T> ResidualBlock<T>::forward(Tape<T>& tape, const Tensor<T>& x, Mode mode) {
  if (x.rank() != 4 || x.dim(1) != spec_.in_channels) {
    throw ConfigError("residual block expects " + std::to_string(spec_.in_channels) +
                      " input channels, got " + shape_str(x.shape()));
  }
  Tensor<T> h = x;
  for (std::size_t i = 0; i < convs.size(); ++i) {
    h = norms[i].forward(tape, convs[i].forward(tape, h), mode);
    if (i + 1 < convs.size()) h = ops::relu(tape, h);
  }
  if (spec_.se_enabled) h = se.forward(tape, h);
  Tensor<T> shortcut = x;
  if (has_projection_) shortcut = proj_norm.forward(tape, proj_conv.forward(tape, x), mode);
  return ops::relu(tape, ops::add(tape, h, shortcut));
}

template <typename T>
void ResidualBlock<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  for (std::size_t i = 0; i < convs.size(); ++i) {
    convs[i].collect(prefix + ".conv" + std::to_string(i + 1), out);
    norms[i].collect(prefix + ".bn" + std::to_string(i + 1), out);
  }
  if (has_projection_) {
    proj_conv.collect(prefix + ".proj.conv", out);
    proj_norm.collect(prefix + ".proj.bn", out);
  }
  if (spec_.se_enabled) se.collect(prefix + ".se", out);
}

template <typename T>
PoolHead<T>::PoolHead(const PoolingSpec& spec, int channels, Rng& rng) : spec_(spec) {
  auto v = spec.violations();
  if (!v.empty()) throw ConfigError("invalid pooling: " + join(v));
  switch (spec.kind) {
    case PoolingKind::kAvg:
      break;
    case PoolingKind::kGwap:
      score = Conv2d<T>(channels, 1, 1, ops::Conv2dOptions{}, true, rng);
      break;
    case PoolingKind::kGwapHidden:
      hidden = Conv2d<T>(channels, spec.hidden_width, 1, ops::Conv2dOptions{}, true, rng);
      score = Conv2d<T>(spec.hidden_width, 1, 1, ops::Conv2dOptions{}, true, rng);
      break;
  }
}

template <typename T>
Tensor<T> PoolHead<T>::weight_map(Tape<T>& tape, const Tensor<T>& features) const {
  if (spec_.kind == PoolingKind::kAvg) {
    throw UsageError("weight_map: plain average pooling has no learned weight map");
  }
  Tensor<T> h = features;
  if (spec_.kind == PoolingKind::kGwapHidden) h = ops::relu(tape, hidden.forward(tape, h));
  return ops::spatial_softmax(tape, score.forward(tape, h));
}

template <typename T>
Tensor<T> PoolHead<T>::forward(Tape<T>& tape, const Tensor<T>& features) const {
  if (spec_.kind == PoolingKind::kAvg) return ops::global_avg_pool(tape, features);
  return ops::weighted_spatial_sum(tape, features, weight_map(tape, features));
}

template <typename T>
void PoolHead<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  if (spec_.kind == PoolingKind::kGwapHidden) hidden.collect(prefix + ".hidden", out);
  if (spec_.kind != PoolingKind::kAvg) score.collect(prefix + ".score", out);
}

template class Conv2d<float>;
template class Conv2d<double>;
template class BatchNorm2d<float>;
template class BatchNorm2d<double>;
template class Linear<float>;
template class Linear<double>;
template class SeGate<float>;
template class SeGate<double>;
template class ResidualBlock<float>;
template class ResidualBlock<double>;
template class PoolHead<float>;
template class PoolHead<double>;

}  // namespace oarsi
