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

#include "oarsi/model.hpp"

#include <algorithm>
#include <map>

#include "oarsi/rng.hpp"

namespace oarsi {

std::vector<HeadSpec> default_heads(bool include_kl_head) {
  std::vector<HeadSpec> heads;
  for (std::size_t t = include_kl_head ? 0 : 1; t < kNumTasks; ++t) {
    heads.push_back({std::string(kTaskNames[t]), kTaskClasses[t]});
  }
  return heads;
}

std::vector<std::string> ModelConfig::violations() const {
  std::vector<std::string> v;
  if (stem.out_channels < 1) v.push_back("stem.out_channels must be >= 1");
  if (stem.kernel < 1 || stem.kernel % 2 == 0) v.push_back("stem.kernel must be odd and >= 1");
  if (stem.stride < 1) v.push_back("stem.stride must be >= 1");
  int channels = stem.out_channels;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& b = blocks[i];
    for (const auto& e : b.violations()) v.push_back("blocks[" + std::to_string(i) + "]: " + e);
    if (b.in_channels != channels) {
      v.push_back("blocks[" + std::to_string(i) + "].in_channels=" + std::to_string(b.in_channels) +
                  " but previous stage emits " + std::to_string(channels));
    }
    channels = b.out_channels;
  }
  for (const auto& e : pooling.violations()) v.push_back("pooling: " + e);
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) v.push_back("dropout_p must lie in [0,1)");
  if (heads != default_heads(include_kl_head)) {
    v.push_back(include_kl_head
                    ? "heads must be KL:5, FO_L:4, FO_M:4, TO_L:4, TO_M:4, JSN_L:4, JSN_M:4"
                    : "heads must be FO_L:4, FO_M:4, TO_L:4, TO_M:4, JSN_L:4, JSN_M:4 "
                      "when include_kl_head is false");
  }
  return v;
}

void ModelConfig::validate() const {
  auto v = violations();
  if (v.empty()) return;
  std::string msg = "invalid model config:";
  for (const auto& e : v) msg += " " + e + ";";
  msg.pop_back();
  throw ConfigError(msg);
}

int ModelConfig::feature_width() const {
  return blocks.empty() ? stem.out_channels : blocks.back().out_channels;
}

Json ModelConfig::to_json() const {
  Json j;
  j["name"] = name;
  j["stem"] = {{"out_channels", stem.out_channels},
               {"kernel", stem.kernel},
               {"stride", stem.stride},
               {"avg_pool", stem.avg_pool}};
  j["blocks"] = Json::array();
  for (const auto& b : blocks) {
    j["blocks"].push_back({{"kind", to_string(b.kind)},
                           {"in_channels", b.in_channels},
                           {"out_channels", b.out_channels},
                           {"stride", b.stride},
                           {"groups", b.groups},
                           {"group_width", b.group_width},
                           {"se_enabled", b.se_enabled},
                           {"se_reduction", b.se_reduction}});
  }
  j["pooling"] = {{"kind", to_string(pooling.kind)}, {"hidden_width", pooling.hidden_width}};
  j["heads"] = Json::array();
  for (const auto& h : heads) j["heads"].push_back({{"task", h.task}, {"classes", h.classes}});
  j["dropout_p"] = dropout_p;
  j["include_kl_head"] = include_kl_head;
  return j;
}

ModelConfig ModelConfig::from_json(const Json& j) {
  const std::string ctx = "model";
  reject_unknown_keys(j, {"name", "preset", "stem", "blocks", "pooling", "heads", "dropout_p",
                          "include_kl_head"},
                      ctx);
  ModelConfig c;
  bool include_kl = true;
  read_opt(j, "include_kl_head", include_kl, ctx);
  PoolingSpec pooling;
  if (j.contains("pooling")) {
    const auto& p = j["pooling"];
    reject_unknown_keys(p, {"kind", "hidden_width"}, ctx + ".pooling");
    std::string kind = "avg";
    read_opt(p, "kind", kind, ctx + ".pooling");
    pooling.kind = pooling_kind_from_string(kind);
    read_opt(p, "hidden_width", pooling.hidden_width, ctx + ".pooling");
  }
  if (j.contains("preset")) {
    if (j.contains("blocks") || j.contains("stem")) {
      throw ConfigError(ctx + ": 'preset' cannot be combined with explicit stem/blocks");
    }
    c = mini_config(mini_variant_from_string(j["preset"].get<std::string>()), include_kl, pooling);
  } else {
    c.include_kl_head = include_kl;
    c.pooling = pooling;
    c.heads = default_heads(include_kl);
  }
  read_opt(j, "name", c.name, ctx);
  if (j.contains("stem")) {
    const auto& s = j["stem"];
    reject_unknown_keys(s, {"out_channels", "kernel", "stride", "avg_pool"}, ctx + ".stem");
    read_opt(s, "out_channels", c.stem.out_channels, ctx + ".stem");
    read_opt(s, "kernel", c.stem.kernel, ctx + ".stem");
    read_opt(s, "stride", c.stem.stride, ctx + ".stem");
    read_opt(s, "avg_pool", c.stem.avg_pool, ctx + ".stem");
  }
  if (j.contains("blocks")) {
    if (!j["blocks"].is_array()) throw ConfigError(ctx + ".blocks: expected an array");
    c.blocks.clear();
    for (std::size_t i = 0; i < j["blocks"].size(); ++i) {
      const auto& b = j["blocks"][i];
      const std::string bctx = ctx + ".blocks[" + std::to_string(i) + "]";
      reject_unknown_keys(b, {"kind", "in_channels", "out_channels", "stride", "groups",
                              "group_width", "se_enabled", "se_reduction"},
                          bctx);
      BlockSpec spec;
      std::string kind = "basic";
      read_opt(b, "kind", kind, bctx);
      spec.kind = block_kind_from_string(kind);
      read_opt(b, "in_channels", spec.in_channels, bctx);
      read_opt(b, "out_channels", spec.out_channels, bctx);
      read_opt(b, "stride", spec.stride, bctx);
      read_opt(b, "groups", spec.groups, bctx);
      read_opt(b, "group_width", spec.group_width, bctx);
      read_opt(b, "se_enabled", spec.se_enabled, bctx);
      read_opt(b, "se_reduction", spec.se_reduction, bctx);
      c.blocks.push_back(spec);
    }
  }
  if (j.contains("heads")) {
    c.heads.clear();
    for (const auto& h : j["heads"]) {
      reject_unknown_keys(h, {"task", "classes"}, ctx + ".heads");
      HeadSpec hs;
      read_opt(h, "task", hs.task, ctx + ".heads");
      read_opt(h, "classes", hs.classes, ctx + ".heads");
      c.heads.push_back(hs);
    }
  }
  read_opt(j, "dropout_p", c.dropout_p, ctx);
  c.validate();
  return c;
}

ModelConfig mini_config(MiniVariant variant, bool include_kl_head, PoolingSpec pooling) {
  ModelConfig c;
  c.stem = StemSpec{16, 3, 2, true};
  c.pooling = pooling;
  c.include_kl_head = include_kl_head;
  c.heads = default_heads(include_kl_head);
  const int base = 16;
  const int strides[4] = {1, 2, 2, 2};
  int in = c.stem.out_channels;
  for (int stage = 0; stage < 4; ++stage) {
    BlockSpec b;
    b.in_channels = in;
    b.stride = strides[stage];
    const int width = base << stage;
    switch (variant) {
      case MiniVariant::kResNet:
        c.name = "mini-resnet";
        b.kind = BlockKind::kBasic;
        b.out_channels = width;
        break;
      case MiniVariant::kSeResNet:
        c.name = "mini-se-resnet";
        b.kind = BlockKind::kBottleneck;
        b.out_channels = width * kBottleneckExpansion;
        b.se_enabled = true;
        break;
      case MiniVariant::kSeResNeXt:
        c.name = "mini-se-resnext";
        b.kind = BlockKind::kBottleneck;
        b.out_channels = width * kBottleneckExpansion;
        b.groups = 8;
        b.group_width = width / 4;
        b.se_enabled = true;
        break;
    }
    b.se_reduction = 16;
    c.blocks.push_back(b);
    in = b.out_channels;
  }
  return c;
}

MiniVariant mini_variant_from_string(const std::string& s) {
  if (s == "mini-resnet") return MiniVariant::kResNet;
  if (s == "mini-se-resnet") return MiniVariant::kSeResNet;
  if (s == "mini-se-resnext") return MiniVariant::kSeResNeXt;
  throw ConfigError("unknown preset '" + s +
                    "' (expected mini-resnet|mini-se-resnet|mini-se-resnext)");
}

template <typename T>
Model<T> Model<T>::build(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Model m;
  m.config_ = config;
  Rng rng(seed);
  const auto& s = config.stem;
  m.stem_conv_ = Conv2d<T>(1, s.out_channels, s.kernel,
                           ops::Conv2dOptions{s.stride, s.kernel / 2, 1}, false, rng);
  m.stem_norm_ = BatchNorm2d<T>(s.out_channels);
  for (const auto& b : config.blocks) m.blocks_.emplace_back(b, rng);
  m.pool_ = PoolHead<T>(config.pooling, config.feature_width(), rng);
  for (const auto& h : config.heads) m.heads_.emplace_back(config.feature_width(), h.classes, rng);
  return m;
}

template <typename T>
Tensor<T> Model<T>::features(Tape<T>& tape, const Tensor<T>& batch, Mode mode) {
  if (batch.rank() != 4 || batch.dim(1) != 1) {
    throw DataError("model expects single-channel input [N,1,H,W], got " +
                    shape_str(batch.shape()));
  }
  const Mode backbone_mode = backbone_trainable_ ? mode : Mode::kEval;
  auto h = ops::relu(tape, stem_norm_.forward(tape, stem_conv_.forward(tape, batch), backbone_mode));
  if (config_.stem.avg_pool) h = ops::avg_pool2d(tape, h, 2, 2);
  for (auto& block : blocks_) h = block.forward(tape, h, backbone_mode);
  return pool_.forward(tape, h);
}

template <typename T>
std::vector<Tensor<T>> Model<T>::forward(Tape<T>& tape, const Tensor<T>& batch, Mode mode) {
  auto pooled = features(tape, batch, mode);
  std::vector<Tensor<T>> logits;
  logits.reserve(heads_.size());
  for (const auto& head : heads_) {
    logits.push_back(head.forward(tape, ops::dropout(tape, pooled, config_.dropout_p, mode)));
  }
  return logits;
}

template <typename T>
std::vector<std::vector<TaskPrediction>> Model<T>::predict(const Tensor<T>& batch) {
  Tape<T> tape;
  tape.set_recording(false);
  auto logits = forward(tape, batch, Mode::kEval);
  const auto n = static_cast<std::size_t>(batch.dim(0));
  std::vector<std::vector<TaskPrediction>> out(n, std::vector<TaskPrediction>(heads_.size()));
  for (std::size_t h = 0; h < heads_.size(); ++h) {
    const auto probs = ops::softmax_rows(logits[h]);
    const auto k = static_cast<std::size_t>(logits[h].dim(1));
    for (std::size_t i = 0; i < n; ++i) {
      auto& tp = out[i][h];
      tp.probabilities.assign(probs.begin() + static_cast<std::ptrdiff_t>(i * k),
                              probs.begin() + static_cast<std::ptrdiff_t>((i + 1) * k));
      tp.grade = static_cast<int>(std::max_element(tp.probabilities.begin(), tp.probabilities.end()) -
                                  tp.probabilities.begin());
    }
  }
  return out;
}

template <typename T>
ParamList<T> Model<T>::backbone_parameters() const {
  ParamList<T> out;
  stem_conv_.collect("backbone.stem.conv", out);
  stem_norm_.collect("backbone.stem.bn", out);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    blocks_[i].collect("backbone.blocks." + std::to_string(i), out);
  }
  pool_.collect("backbone.pool", out);
  return out;
}

template <typename T>
ParamList<T> Model<T>::head_parameters(std::size_t head) const {
  ParamList<T> out;
  heads_.at(head).collect("heads." + config_.heads.at(head).task, out);
  return out;
}

template <typename T>
ParamList<T> Model<T>::parameters() const {
  auto out = backbone_parameters();
  for (std::size_t h = 0; h < heads_.size(); ++h) {
    auto hp = head_parameters(h);
    out.insert(out.end(), hp.begin(), hp.end());
  }
  return out;
}

template <typename T>
void Model<T>::set_backbone_trainable(bool flag) {
  backbone_trainable_ = flag;
  for (auto& p : backbone_parameters()) {
    if (!p.is_buffer) p.tensor.set_requires_grad(flag);
  }
}

namespace {

template <typename T>
std::vector<NamedTensor> to_named(const ParamList<T>& params) {
  std::vector<NamedTensor> out;
  out.reserve(params.size());
  for (const auto& p : params) {
    NamedTensor t;
    t.name = p.name;
    t.shape = p.tensor.shape();
    t.data.assign(p.tensor.data().begin(), p.tensor.data().end());
    out.push_back(std::move(t));
  }
  return out;
}

template <typename T>
void assign(NamedParam<T>& p, const NamedTensor& src) {
  if (src.shape != p.tensor.shape()) {
    throw LoadError("tensor '" + p.name + "' has shape " + shape_str(src.shape) +
                    " in weights but " + shape_str(p.tensor.shape()) + " in the model");
  }
  auto dst = p.tensor.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(src.data[i]);
}

template <typename T>
void load_into(ParamList<T> params, const std::vector<NamedTensor>& tensors, bool skip_heads) {
  std::map<std::string, const NamedTensor*> by_name;
  for (const auto& t : tensors) {
    if (skip_heads && t.name.rfind("heads.", 0) == 0) continue;
    by_name[t.name] = &t;
  }
  for (auto& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw LoadError("tensor '" + p.name + "' missing from weights");
  }
  for (const auto& t : tensors) {
    if (skip_heads && t.name.rfind("heads.", 0) == 0) continue;
    const bool known = std::any_of(params.begin(), params.end(),
                                   [&](const NamedParam<T>& p) { return p.name == t.name; });
    if (!known) throw LoadError("tensor '" + t.name + "' in weights has no counterpart in the model");
  }
  for (auto& p : params) assign(p, *by_name.at(p.name));
}

}  // namespace

template <typename T>
std::vector<NamedTensor> Model<T>::state() const {
  return to_named(parameters());
}

template <typename T>
std::vector<NamedTensor> Model<T>::backbone_state() const {
  return to_named(backbone_parameters());
}

template <typename T>
void Model<T>::load_state(const std::vector<NamedTensor>& tensors) {
  load_into(parameters(), tensors, false);
}

template <typename T>
void Model<T>::load_backbone_state(const std::vector<NamedTensor>& tensors) {
  load_into(backbone_parameters(), tensors, true);
}

template <typename T>
void Model<T>::save_weights(const std::filesystem::path& path) const {
  write_weights(path, state());
}

template <typename T>
void Model<T>::load_weights(const std::filesystem::path& path) {
  auto tensors = read_weights(path);
  try {
    load_state(tensors);
  } catch (const LoadError& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
}

template <typename T>
void Model<T>::save_backbone_weights(const std::filesystem::path& path) const {
  write_weights(path, backbone_state());
}

template <typename T>
void Model<T>::load_backbone_weights(const std::filesystem::path& path) {
  auto tensors = read_weights(path);
  try {
    load_backbone_state(tensors);
  } catch (const LoadError& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
}

template <typename T>
Model<T> Model<T>::clone() const {
  Model copy = build(config_, 0);
  copy.load_state(state());
  copy.set_backbone_trainable(backbone_trainable_);
  return copy;
}

std::uint64_t checksum(const std::vector<NamedTensor>& tensors) {
  return fnv1a64(encode_weights(tensors));
}

template class Model<float>;
template class Model<double>;

}  // namespace oarsi
