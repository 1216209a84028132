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

#include "oarsi/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "oarsi/errors.hpp"
#include "oarsi/ops.hpp"
#include "oarsi/parallel.hpp"
#include "oarsi/rng.hpp"
#include "oarsi/serialize.hpp"
#include "oarsi/text.hpp"

namespace oarsi {

namespace fs = std::filesystem;

std::string to_string(Schedule s) { return s == Schedule::kTransfer ? "transfer" : "scratch"; }

Schedule schedule_from_string(const std::string& s) {
  if (s == "transfer") return Schedule::kTransfer;
  if (s == "scratch") return Schedule::kScratch;
  throw ConfigError("schedule must be transfer|scratch, got '" + s + "'");
}

// ---------------------------------------------------------------------------
// TrainConfig

void TrainConfig::validate() const {
  std::vector<std::string> bad;
  if (epochs < 1) bad.push_back("epochs must be >= 1");
  if (schedule == Schedule::kTransfer && epochs < 3) bad.push_back("transfer schedule needs epochs >= 3");
  for (double lr : {lr_stage_head, lr_stage_full, lr_stage_final, scratch_lr}) {
    if (!(lr > 0)) {
      bad.push_back("learning rates must be positive");
      break;
    }
  }
  if (!(scratch_drop_factor > 0)) bad.push_back("scratch_drop_factor must be positive");
  for (int e : scratch_drop_epochs)
    if (e < 1) bad.push_back("scratch_drop_epochs must be >= 1");
  if (!(weight_decay >= 0)) bad.push_back("weight_decay must be >= 0");
  if (!(dropout_p >= 0 && dropout_p < 1)) bad.push_back("dropout_p must lie in [0, 1)");
  if (batch_size < 1) bad.push_back("batch_size must be >= 1");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) bad.push_back("adam betas must lie in [0, 1)");
  if (!(eps > 0)) bad.push_back("adam eps must be positive");
  for (double w : task_weights)
    if (!(w >= 0) || !std::isfinite(w)) bad.push_back("task_weights must be finite and >= 0");
  if (!(noise_sigma >= 0)) bad.push_back("noise_sigma must be >= 0");
  if (!(gamma_low > 0 && gamma_low <= gamma_high)) bad.push_back("need 0 < gamma_low <= gamma_high");
  if (!bad.empty()) {
    std::string msg = "invalid train config:";
    for (const auto& b : bad) msg += " " + b + ";";
    throw ConfigError(msg);
  }
}

Json TrainConfig::to_json() const {
  return Json{{"schedule", to_string(schedule)},
              {"epochs", epochs},
              {"lr_stage_head", lr_stage_head},
              {"lr_stage_full", lr_stage_full},
              {"lr_stage_final", lr_stage_final},
              {"scratch_lr", scratch_lr},
              {"scratch_drop_epochs", scratch_drop_epochs},
              {"scratch_drop_factor", scratch_drop_factor},
              {"weight_decay", weight_decay},
              {"dropout_p", dropout_p},
              {"batch_size", batch_size},
              {"beta1", beta1},
              {"beta2", beta2},
              {"eps", eps},
              {"seed", seed},
              {"task_weights", task_weights},
              {"sampler", to_string(sampler)},
              {"noise_sigma", noise_sigma},
              {"gamma_low", gamma_low},
              {"gamma_high", gamma_high},
              {"kappa", to_string(kappa)}};
}

TrainConfig TrainConfig::from_json(const Json& j) {
  const std::string ctx = "train";
  reject_unknown_keys(j,
                      {"schedule", "epochs", "lr_stage_head", "lr_stage_full", "lr_stage_final",
                       "scratch_lr", "scratch_drop_epochs", "scratch_drop_factor", "weight_decay",
                       "dropout_p", "batch_size", "beta1", "beta2", "eps", "seed", "task_weights",
                       "sampler", "noise_sigma", "gamma_low", "gamma_high", "kappa"},
                      ctx);
  TrainConfig c;
  std::string schedule = to_string(c.schedule), sampler = to_string(c.sampler), kappa = to_string(c.kappa);
  read_opt(j, "schedule", schedule, ctx);
  read_opt(j, "epochs", c.epochs, ctx);
  read_opt(j, "lr_stage_head", c.lr_stage_head, ctx);
  read_opt(j, "lr_stage_full", c.lr_stage_full, ctx);
  read_opt(j, "lr_stage_final", c.lr_stage_final, ctx);
  read_opt(j, "scratch_lr", c.scratch_lr, ctx);
  read_opt(j, "scratch_drop_epochs", c.scratch_drop_epochs, ctx);
  read_opt(j, "scratch_drop_factor", c.scratch_drop_factor, ctx);
  read_opt(j, "weight_decay", c.weight_decay, ctx);
  read_opt(j, "dropout_p", c.dropout_p, ctx);
  read_opt(j, "batch_size", c.batch_size, ctx);
  read_opt(j, "beta1", c.beta1, ctx);
  read_opt(j, "beta2", c.beta2, ctx);
  read_opt(j, "eps", c.eps, ctx);
  read_opt(j, "seed", c.seed, ctx);
  read_opt(j, "task_weights", c.task_weights, ctx);
  read_opt(j, "sampler", sampler, ctx);
  read_opt(j, "noise_sigma", c.noise_sigma, ctx);
  read_opt(j, "gamma_low", c.gamma_low, ctx);
  read_opt(j, "gamma_high", c.gamma_high, ctx);
  read_opt(j, "kappa", kappa, ctx);
  c.schedule = schedule_from_string(schedule);
  c.sampler = sampler_scheme_from_string(sampler);
  c.kappa = kappa_weighting_from_string(kappa);
  c.validate();
  return c;
}

EpochStage stage_for_epoch(const TrainConfig& cfg, int epoch) {
  if (epoch < 1 || epoch > cfg.epochs) {
    throw UsageError("epoch " + std::to_string(epoch) + " outside 1.." + std::to_string(cfg.epochs));
  }
  if (cfg.schedule == Schedule::kTransfer) {
    if (epoch <= 2) return {cfg.lr_stage_head, false};
    if (epoch == 3) return {cfg.lr_stage_full, true};
    return {cfg.lr_stage_final, true};
  }
  double lr = cfg.scratch_lr;
  for (int drop : cfg.scratch_drop_epochs)
    if (epoch > drop) lr /= cfg.scratch_drop_factor;
  return {lr, true};
}

std::vector<double> lr_trace(const TrainConfig& cfg) {
  cfg.validate();
  std::vector<double> out;
  for (int e = 1; e <= cfg.epochs; ++e) out.push_back(stage_for_epoch(cfg, e).lr);
  return out;
}

// ---------------------------------------------------------------------------
// Adam

template <typename T>
void adam_update(std::span<T> param, std::span<const T> grad, AdamSlot& slot, const AdamHyper& h,
                 const std::string& name) {
  if (grad.size() != param.size()) {
    throw UsageError("adam: gradient of '" + name + "' has " + std::to_string(grad.size()) +
                     " elements, parameter has " + std::to_string(param.size()));
  }
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!std::isfinite(static_cast<double>(grad[i]))) {
      throw TrainingError("non-finite gradient in '" + name + "' at element " + std::to_string(i));
    }
  }
  if (slot.m.empty()) {
    slot.m.assign(param.size(), 0.0);
    slot.v.assign(param.size(), 0.0);
  }
  ++slot.step;
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(slot.step));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(slot.step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = static_cast<double>(grad[i]) + h.weight_decay * static_cast<double>(param[i]);
    slot.m[i] = h.beta1 * slot.m[i] + (1.0 - h.beta1) * g;
    slot.v[i] = h.beta2 * slot.v[i] + (1.0 - h.beta2) * g * g;
    const double m_hat = slot.m[i] / c1;
    const double v_hat = slot.v[i] / c2;
    param[i] = static_cast<T>(static_cast<double>(param[i]) - h.lr * m_hat / (std::sqrt(v_hat) + h.eps));
  }
}

template <typename T>
void Adam<T>::step(const AdamHyper& h) {
  for (auto& p : params_) {
    if (p.is_buffer || !p.tensor.requires_grad()) continue;
    // A trainable tensor that received no gradient this step still decays.
    std::vector<T> zeros;
    std::span<const T> grad = p.tensor.grad();
    if (!p.tensor.has_grad()) {
      zeros.assign(p.tensor.numel(), T{0});
      grad = zeros;
    }
    adam_update<T>(p.tensor.data(), grad, slots_[p.name], h, p.name);
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

template <typename T>
Tensor<T> multi_task_loss(Tape<T>& tape, const std::vector<Tensor<T>>& logits,
                          const std::vector<std::vector<int>>& targets,
                          const std::vector<double>& task_weights) {
  if (logits.empty()) throw UsageError("multi-task loss over zero heads");
  if (targets.size() != logits.size()) {
    throw DataError("multi-task loss: targets for " + std::to_string(targets.size()) + " of " +
                    std::to_string(logits.size()) + " heads");
  }
  if (!task_weights.empty() && task_weights.size() != logits.size()) {
    throw ConfigError("task_weights has " + std::to_string(task_weights.size()) + " entries for " +
                      std::to_string(logits.size()) + " heads");
  }
  Tensor<T> total;
  for (std::size_t t = 0; t < logits.size(); ++t) {
    if (static_cast<std::int64_t>(targets[t].size()) != logits[t].dim(0)) {
      throw DataError("multi-task loss: head " + std::to_string(t) + " has " +
                      std::to_string(targets[t].size()) + " targets for a batch of " +
                      std::to_string(logits[t].dim(0)));
    }
    auto term = ops::cross_entropy(tape, logits[t], targets[t]);
    const double w = task_weights.empty() ? 1.0 : task_weights[t];
    if (w != 1.0) term = ops::scale(tape, term, static_cast<T>(w));
    total = t == 0 ? term : ops::add(tape, total, term);
  }
  return total;
}

template void adam_update<float>(std::span<float>, std::span<const float>, AdamSlot&, const AdamHyper&,
                                 const std::string&);
template void adam_update<double>(std::span<double>, std::span<const double>, AdamSlot&,
                                  const AdamHyper&, const std::string&);
template class Adam<float>;
template class Adam<double>;
template Tensor<float> multi_task_loss(Tape<float>&, const std::vector<Tensor<float>>&,
                                       const std::vector<std::vector<int>>&, const std::vector<double>&);
template Tensor<double> multi_task_loss(Tape<double>&, const std::vector<Tensor<double>>&,
                                        const std::vector<std::vector<int>>&, const std::vector<double>&);

// ---------------------------------------------------------------------------
// snapshots

double EpochRecord::mean_kappa() const {
  double sum = 0;
  int n = 0;
  for (double k : val_kappa) {
    if (std::isnan(k)) continue;
    sum += k;
    ++n;
  }
  return n ? sum / n : -std::numeric_limits<double>::infinity();
}

std::size_t select_snapshot(const std::vector<EpochRecord>& history) {
  if (history.empty()) throw UsageError("select_snapshot: empty history");
  std::size_t best = 0;
  for (std::size_t i = 1; i < history.size(); ++i) {
    if (history[i].mean_kappa() >= history[best].mean_kappa()) best = i;
  }
  return best;
}

namespace {

Json metric_map(const std::map<std::string, double>& m) {
  Json j = Json::object();
  for (const auto& [k, v] : m) j[k] = std::isnan(v) ? Json(nullptr) : Json(v);
  return j;
}

std::map<std::string, double> read_metric_map(const Json& j, const std::string& ctx) {
  if (!j.is_object()) throw LoadError(ctx + ": expected an object");
  std::map<std::string, double> out;
  for (const auto& [k, v] : j.items()) {
    out[k] = v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
  }
  return out;
}

fs::path with_suffix(const fs::path& stem, const char* suffix) {
  return fs::path(stem.string() + suffix);
}

}  // namespace

Json Snapshot::meta_json() const {
  return Json{{"fold", fold},
              {"epoch", epoch},
              {"seed", seed},
              {"config_hash", config_hash},
              {"weights_checksum", hex64(checksum(weights))},
              {"model", model.to_json()},
              {"val_kappa", metric_map(val_kappa)},
              {"val_ba", metric_map(val_ba)}};
}

void Snapshot::save(const fs::path& stem) const {
  for (const auto& h : model.heads) {
    if (!val_kappa.count(h.task) || !val_ba.count(h.task)) {
      throw UsageError("snapshot is missing validation metrics for head " + h.task);
    }
  }
  write_weights(with_suffix(stem, ".weights"), weights);
  write_file_atomic(with_suffix(stem, ".meta.json"), meta_json().dump(2) + "\n");
}

Snapshot Snapshot::load(const fs::path& stem) {
  const auto meta_path = with_suffix(stem, ".meta.json");
  Snapshot s;
  Json j;
  try {
    j = Json::parse(read_file(meta_path));
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(meta_path.string() + ": " + e.what());
  }
  try {
    s.fold = j.at("fold").get<int>();
    s.epoch = j.at("epoch").get<int>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.config_hash = j.at("config_hash").get<std::string>();
    s.model = ModelConfig::from_json(j.at("model"));
    s.val_kappa = read_metric_map(j.at("val_kappa"), meta_path.string());
    s.val_ba = read_metric_map(j.at("val_ba"), meta_path.string());
    s.weights = read_weights(with_suffix(stem, ".weights"));
    if (hex64(checksum(s.weights)) != j.at("weights_checksum").get<std::string>()) {
      throw LoadError(stem.string() + ": weights do not match the checksum in the metadata");
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(meta_path.string() + ": " + e.what());
  }
  return s;
}

// ---------------------------------------------------------------------------
// fold training

namespace {

Tensor<float> stack(const std::vector<std::vector<float>>& inputs, int side) {
  Tensor<float> batch(Shape{static_cast<std::int64_t>(inputs.size()), 1, side, side});
  auto data = batch.data();
  const auto plane = static_cast<std::size_t>(side) * static_cast<std::size_t>(side);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    std::copy(inputs[i].begin(), inputs[i].end(), data.begin() + static_cast<std::ptrdiff_t>(i * plane));
  }
  return batch;
}

int common_side(const std::vector<Example>& a, const std::vector<Example>& b) {
  int side = 0;
  for (const auto* set : {&a, &b})
    for (const auto& e : *set) {
      if (side == 0) side = e.image.side();
      if (e.image.side() != side || e.image.height != side) {
        throw DataError("exam " + e.exam_id + " has side " + std::to_string(e.image.side()) +
                        ", expected " + std::to_string(side));
      }
    }
  return side;
}

std::vector<std::size_t> head_tasks(const ModelConfig& cfg) {
  std::vector<std::size_t> out;
  for (const auto& h : cfg.heads) {
    auto t = task_index(h.task);
    if (!t) throw ConfigError("unknown head task " + h.task);
    out.push_back(*t);
  }
  return out;
}

int label(const Example& e, std::size_t task) {
  if (!e.grades[task]) {
    throw DataError("exam " + e.exam_id + " has no " + std::string(kTaskNames[task]) + " grade");
  }
  return *e.grades[task];
}

}  // namespace

std::vector<std::vector<TaskPrediction>> predict_examples(Model<float>& model,
                                                          const std::vector<const NormalizedImage*>& images,
                                                          int batch_size) {
  std::vector<std::vector<TaskPrediction>> out;
  out.reserve(images.size());
  for (std::size_t start = 0; start < images.size(); start += static_cast<std::size_t>(batch_size)) {
    const auto end = std::min(images.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<std::vector<float>> inputs;
    int crop = 0;
    for (std::size_t i = start; i < end; ++i) {
      const int c = training_crop_side(images[i]->side());
      if (crop && c != crop) throw DataError("images of different sizes in one prediction batch");
      crop = c;
      inputs.push_back(center_crop_standardized(*images[i], crop));
    }
    auto preds = model.predict(stack(inputs, crop));
    for (auto& p : preds) out.push_back(std::move(p));
  }
  return out;
}

std::string history_csv(const std::vector<EpochRecord>& history, const std::vector<HeadSpec>& heads) {
  std::ostringstream os;
  os << "epoch,lr,backbone_frozen,train_loss,mean_val_kappa";
  for (const auto& h : heads) os << ',' << h.task << "_kappa," << h.task << "_ba";
  os << ",backbone_checksum\n";
  for (const auto& r : history) {
    os << r.epoch << ',' << format_double(r.lr) << ',' << (r.backbone_frozen ? 1 : 0) << ','
       << format_double(r.train_loss) << ',' << format_double(r.mean_kappa());
    for (std::size_t h = 0; h < r.val_kappa.size(); ++h) {
      os << ',' << format_double(r.val_kappa[h]) << ',' << format_double(r.val_ba[h]);
    }
    os << ',' << hex64(r.backbone_checksum) << '\n';
  }
  return os.str();
}

FoldResult run_fold(ModelConfig model_cfg, const TrainConfig& cfg, const FoldData& data,
                    const std::vector<NamedTensor>* pretrained, const FoldRun& run) {
  cfg.validate();
  model_cfg.dropout_p = cfg.dropout_p;
  model_cfg.validate();
  if (cfg.schedule == Schedule::kTransfer && !pretrained) {
    throw ConfigError("transfer schedule needs pretrained backbone weights");
  }
  if (cfg.schedule == Schedule::kScratch && pretrained) {
    throw ConfigError("scratch schedule must not be given pretrained weights");
  }
  if (data.train.empty()) throw DataError("fold " + std::to_string(run.fold) + " has no training exams");
  if (data.val.empty()) throw DataError("fold " + std::to_string(run.fold) + " has no validation exams");
  if (!cfg.task_weights.empty() && cfg.task_weights.size() != model_cfg.heads.size()) {
    throw ConfigError("task_weights has " + std::to_string(cfg.task_weights.size()) + " entries for " +
                      std::to_string(model_cfg.heads.size()) + " heads");
  }
  const auto tasks = head_tasks(model_cfg);
  const int side = common_side(data.train, data.val);
  const int crop = training_crop_side(side);
  const auto fold = static_cast<std::uint64_t>(run.fold);

  // Validation labels up front so a missing grade fails before training.
  std::vector<std::vector<int>> val_labels(tasks.size());
  for (std::size_t h = 0; h < tasks.size(); ++h)
    for (const auto& e : data.val) val_labels[h].push_back(label(e, tasks[h]));
  std::vector<const NormalizedImage*> val_images;
  for (const auto& e : data.val) val_images.push_back(&e.image);

  auto model = Model<float>::build(model_cfg, derive_seed(cfg.seed, fold, 0x11));
  if (pretrained) model.load_backbone_state(*pretrained);

  FoldResult result;
  result.initial_backbone_checksum = checksum(model.backbone_state());

  std::vector<int> kl;
  for (const auto& e : data.train) kl.push_back(e.grades[kKL] ? *e.grades[kKL] : -1);
  IndexSampler sampler(kl, cfg.sampler, derive_seed(cfg.seed, fold, 0x22));
  Adam<float> adam(model.parameters());
  const AugmentParams aug{crop, cfg.noise_sigma, cfg.gamma_low, cfg.gamma_high};
  const auto bs = static_cast<std::size_t>(cfg.batch_size);

  std::vector<NamedTensor> best_state;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto stage = stage_for_epoch(cfg, epoch);
    model.set_backbone_trainable(stage.backbone_trainable);
    AdamHyper hyper{stage.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay};
    const auto order = sampler.epoch(static_cast<std::uint64_t>(epoch - 1));
    const std::uint64_t epoch_seed = derive_seed(cfg.seed, fold, static_cast<std::uint64_t>(epoch), 0x33);

    double loss_sum = 0;
    for (std::size_t start = 0, b = 0; start < order.size(); start += bs, ++b) {
      const auto end = std::min(order.size(), start + bs);
      std::vector<std::vector<float>> inputs;
      std::vector<std::vector<int>> targets(tasks.size());
      for (std::size_t pos = start; pos < end; ++pos) {
        const auto& e = data.train[order[pos]];
        Rng rng(derive_seed(epoch_seed, pos));
        inputs.push_back(augment(e.image, aug, rng));
        for (std::size_t h = 0; h < tasks.size(); ++h) targets[h].push_back(label(e, tasks[h]));
      }
      Tape<float> tape(derive_seed(epoch_seed, b, 0x44));
      auto logits = model.forward(tape, stack(inputs, crop), Mode::kTrain);
      auto loss = multi_task_loss(tape, logits, targets, cfg.task_weights);
      adam.zero_grad();
      tape.backward(loss);
      adam.step(hyper);
      loss_sum += static_cast<double>(loss.item()) * static_cast<double>(end - start);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = stage.lr;
    rec.backbone_frozen = !stage.backbone_trainable;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    const auto preds = predict_examples(model, val_images);
    for (std::size_t h = 0; h < tasks.size(); ++h) {
      std::vector<int> pred;
      for (const auto& p : preds) pred.push_back(p[h].grade);
      const int k = model_cfg.heads[h].classes;
      double kappa = std::numeric_limits<double>::quiet_NaN();
      try {
        kappa = cohen_kappa(val_labels[h], pred, k, cfg.kappa);
      } catch (const UndefinedStatistic&) {
      }
      rec.val_kappa.push_back(kappa);
      rec.val_ba.push_back(balanced_accuracy(val_labels[h], pred, k));
    }
    rec.backbone_checksum = checksum(model.backbone_state());
    result.history.push_back(rec);
    if (select_snapshot(result.history) == result.history.size() - 1) {
      best_state = model.state();
    }
    if (!run.log_csv.empty()) write_file_atomic(run.log_csv, history_csv(result.history, model_cfg.heads));
    if (run.on_epoch) run.on_epoch(rec);
  }

  const auto& chosen = result.history[select_snapshot(result.history)];
  Snapshot& s = result.snapshot;
  s.model = model_cfg;
  s.weights = std::move(best_state);
  s.fold = run.fold;
  s.epoch = chosen.epoch;
  s.seed = cfg.seed;
  s.config_hash = run.config_hash;
  for (std::size_t h = 0; h < tasks.size(); ++h) {
    s.val_kappa[model_cfg.heads[h].task] = chosen.val_kappa[h];
    s.val_ba[model_cfg.heads[h].task] = chosen.val_ba[h];
  }
  return result;
}

// ---------------------------------------------------------------------------
// proxy pretraining

void PretrainConfig::validate() const {
  if (samples < 2) throw ConfigError("pretrain.samples must be >= 2");
  if (epochs < 1) throw ConfigError("pretrain.epochs must be >= 1");
  if (!(lr > 0)) throw ConfigError("pretrain.lr must be positive");
  if (!(weight_decay >= 0)) throw ConfigError("pretrain.weight_decay must be >= 0");
  if (batch_size < 1) throw ConfigError("pretrain.batch_size must be >= 1");
}

Json PretrainConfig::to_json() const {
  return Json{{"samples", samples}, {"epochs", epochs},         {"lr", lr},
              {"weight_decay", weight_decay}, {"batch_size", batch_size}, {"seed", seed}};
}

PretrainConfig PretrainConfig::from_json(const Json& j) {
  const std::string ctx = "pretrain";
  reject_unknown_keys(j, {"samples", "epochs", "lr", "weight_decay", "batch_size", "seed"}, ctx);
  PretrainConfig c;
  read_opt(j, "samples", c.samples, ctx);
  read_opt(j, "epochs", c.epochs, ctx);
  read_opt(j, "lr", c.lr, ctx);
  read_opt(j, "weight_decay", c.weight_decay, ctx);
  read_opt(j, "batch_size", c.batch_size, ctx);
  read_opt(j, "seed", c.seed, ctx);
  c.validate();
  return c;
}

PretrainResult pretrain_proxy(const ModelConfig& model_cfg, const PretrainConfig& cfg,
                              const PreprocessParams& prep, int threads) {
  cfg.validate();
  prep.validate();
  auto raw = proxy_samples(cfg.samples, cfg.render, derive_seed(cfg.seed, 0x51), threads);
  std::vector<NormalizedImage> images(raw.size());
  std::vector<int> labels(raw.size());
  parallel_for(raw.size(), threads, [&](std::size_t i) {
    images[i] = preprocess(raw[i].image, raw[i].landmarks, prep, "proxy" + std::to_string(i));
    labels[i] = raw[i].label;
  });
  raw.clear();

  auto model = Model<float>::build(model_cfg, derive_seed(cfg.seed, 0x52));
  Rng head_rng(derive_seed(cfg.seed, 0x53));
  Linear<float> head(model_cfg.feature_width(), kProxyClasses, head_rng);
  ParamList<float> params = model.backbone_parameters();
  head.collect("proxy_head", params);
  Adam<float> adam(params);
  const AdamHyper hyper{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay};
  const int crop = training_crop_side(prep.target_side);
  const AugmentParams aug{crop, 0.02, 0.9, 1.1};
  IndexSampler sampler(labels, SamplerScheme::kNone, derive_seed(cfg.seed, 0x54));
  const auto bs = static_cast<std::size_t>(cfg.batch_size);

  PretrainResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = sampler.epoch(static_cast<std::uint64_t>(epoch));
    const std::uint64_t epoch_seed = derive_seed(cfg.seed, 0x55, static_cast<std::uint64_t>(epoch));
    double loss_sum = 0;
    for (std::size_t start = 0, b = 0; start < order.size(); start += bs, ++b) {
      const auto end = std::min(order.size(), start + bs);
      std::vector<std::vector<float>> inputs;
      std::vector<int> targets;
      for (std::size_t pos = start; pos < end; ++pos) {
        Rng rng(derive_seed(epoch_seed, pos));
        inputs.push_back(augment(images[order[pos]], aug, rng));
        targets.push_back(labels[order[pos]]);
      }
      Tape<float> tape(derive_seed(epoch_seed, b, 0x56));
      auto feats = model.features(tape, stack(inputs, crop), Mode::kTrain);
      auto loss = ops::cross_entropy(tape, head.forward(tape, feats), targets);
      adam.zero_grad();
      tape.backward(loss);
      adam.step(hyper);
      loss_sum += static_cast<double>(loss.item()) * static_cast<double>(end - start);
    }
    result.epoch_loss.push_back(loss_sum / static_cast<double>(order.size()));
  }

  std::size_t correct = 0;
  for (std::size_t start = 0; start < images.size(); start += bs) {
    const auto end = std::min(images.size(), start + bs);
    std::vector<std::vector<float>> inputs;
    for (std::size_t i = start; i < end; ++i) inputs.push_back(center_crop_standardized(images[i], crop));
    Tape<float> tape;
    tape.set_recording(false);
    auto probs = ops::softmax_rows(head.forward(tape, model.features(tape, stack(inputs, crop), Mode::kEval)));
    for (std::size_t i = start; i < end; ++i) {
      const auto row = probs.begin() + static_cast<std::ptrdiff_t>((i - start) * kProxyClasses);
      correct += static_cast<int>(std::max_element(row, row + kProxyClasses) - row) == labels[i];
    }
  }
  result.final_accuracy = static_cast<double>(correct) / static_cast<double>(images.size());
  result.backbone = model.backbone_state();
  return result;
}

}  // namespace oarsi
