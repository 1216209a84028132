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

#include "oarsi/pipeline.hpp"

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "oarsi/dataset.hpp"
#include "oarsi/errors.hpp"
#include "oarsi/parallel.hpp"
#include "oarsi/report.hpp"
#include "oarsi/rng.hpp"
#include "oarsi/serialize.hpp"
#include "oarsi/tasks.hpp"
#include "oarsi/text.hpp"

namespace oarsi {

namespace fs = std::filesystem;

namespace {

constexpr const char* kCacheWeights = "images.weights";
constexpr const char* kCacheIndex = "index.json";

// Output directory written under a hidden sibling and renamed on commit.
// An existing `out` is replaced only if it holds `marker`, the sidecar the
// same stage writes, so unrelated directories are never clobbered.
class StagedDir {
 public:
  StagedDir(fs::path out, std::string marker) : out_(std::move(out)), marker_(std::move(marker)) {
    if (out_.empty()) throw UsageError("output path is empty");
    out_ = fs::absolute(out_).lexically_normal();
    if (!out_.has_filename()) out_ = out_.parent_path();
    if (fs::exists(out_)) {
      if (!fs::is_directory(out_)) throw UsageError(out_.string() + " exists and is not a directory");
      if (!fs::is_empty(out_) && !fs::exists(out_ / marker_)) {
        throw UsageError("refusing to replace " + out_.string() + ": it was not written by this stage (no " +
                         marker_ + ")");
      }
    }
    tmp_ = out_.parent_path() / ("." + out_.filename().string() + ".partial-" + std::to_string(::getpid()));
    fs::remove_all(tmp_);
    fs::create_directories(tmp_);
  }
  StagedDir(const StagedDir&) = delete;
  StagedDir& operator=(const StagedDir&) = delete;
  ~StagedDir() {
    if (!committed_) {
      std::error_code ec;
      fs::remove_all(tmp_, ec);
    }
  }

  const fs::path& path() const { return tmp_; }

  void commit() {
    if (!fs::exists(tmp_ / marker_)) throw UsageError("stage output lacks " + marker_);
    fs::remove_all(out_);
    fs::rename(tmp_, out_);
    committed_ = true;
  }

 private:
  fs::path out_, tmp_;
  std::string marker_;
  bool committed_ = false;
};

void say(const StageContext& ctx, const std::string& line) {
  if (ctx.log) ctx.log(line);
}

void write_json(const fs::path& path, const Json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

Json read_json(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("missing " + path.string());
  return parse_json(read_file(path), path.string());
}

ManifestLoad load_manifest(const fs::path& path, std::vector<std::size_t> required) {
  if (!fs::exists(path)) throw IoError("manifest not found: " + path.string());
  return load_and_filter(path, std::move(required));
}

}  // namespace

std::string file_hash(const fs::path& path) { return hex64(fnv1a64(read_file(path))); }

namespace layout {
fs::path data(const RunConfig& c) { return c.workdir / "data"; }
fs::path cache(const RunConfig& c) { return c.workdir / "cache"; }
fs::path pretrained(const RunConfig& c) { return c.workdir / "pretrained"; }
fs::path runs(const RunConfig& c) { return c.workdir / "runs" / c.model.name; }
fs::path predictions(const RunConfig& c) { return c.workdir / "predictions"; }
fs::path report(const RunConfig& c) { return c.workdir / "report"; }
}  // namespace layout

// ---------------------------------------------------------------------------
// image cache

void ImageCache::save(const fs::path& dir) const {
  std::vector<NamedTensor> tensors;
  Json exams = Json::array();
  for (const auto& [id, img] : images) {
    tensors.push_back({id, {img.height, img.width}, img.unit});
    exams.push_back(Json{{"exam_id", id}, {"provenance", img.provenance.to_json()}});
  }
  write_weights(dir / kCacheWeights, tensors);
  write_json(dir / kCacheIndex, Json{{"config_hash", config_hash},
                                     {"preprocess", params.to_json()},
                                     {"weights_hash", file_hash(dir / kCacheWeights)},
                                     {"exams", exams}});
}

ImageCache ImageCache::load(const fs::path& dir) {
  const auto index = read_json(dir / kCacheIndex);
  ImageCache c;
  try {
    c.config_hash = index.at("config_hash").get<std::string>();
    c.params = PreprocessParams::from_json(index.at("preprocess"));
    if (index.at("weights_hash").get<std::string>() != file_hash(dir / kCacheWeights)) {
      throw LoadError(dir.string() + ": images.weights does not match its index");
    }
    std::map<std::string, Provenance> prov;
    for (const auto& e : index.at("exams")) {
      prov[e.at("exam_id").get<std::string>()] = Provenance::from_json(e.at("provenance"));
    }
    for (auto& t : read_weights(dir / kCacheWeights)) {
      if (t.shape.size() != 2) throw LoadError("cache entry " + t.name + " is not a 2-D image");
      NormalizedImage img;
      img.height = static_cast<int>(t.shape[0]);
      img.width = static_cast<int>(t.shape[1]);
      img.unit = std::move(t.data);
      auto it = prov.find(t.name);
      if (it == prov.end()) throw LoadError("cache entry " + t.name + " has no provenance");
      img.provenance = it->second;
      c.images.emplace(t.name, std::move(img));
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(dir.string() + "/index.json: " + e.what());
  }
  return c;
}

const NormalizedImage& ImageCache::at(const std::string& exam_id) const {
  auto it = images.find(exam_id);
  if (it == images.end()) throw DataError("exam " + exam_id + " is not in the image cache; rerun preprocess");
  return it->second;
}

// ---------------------------------------------------------------------------
// stages

void stage_synth(const RunConfig& cfg, const fs::path& out, const StageContext& ctx) {
  StagedDir staged(out, "synth.json");
  const auto result = synth_generate(cfg.synth, staged.path(), ctx.threads);
  write_json(staged.path() / "synth.json",
             Json{{"config_hash", cfg.config_hash()},
                  {"synth", cfg.synth.to_json()},
                  {"train_exams", result.train.size()},
                  {"test_exams", result.test.size()},
                  {"manifest_hash", file_hash(staged.path() / "manifest.csv")}});
  staged.commit();
  say(ctx, "synth: " + std::to_string(result.train.size()) + " train / " + std::to_string(result.test.size()) +
               " test exams");
}

void stage_preprocess(const RunConfig& cfg, const std::vector<fs::path>& manifests, const fs::path& out,
                      const StageContext& ctx) {
  if (manifests.empty()) throw UsageError("no manifests to preprocess");
  StagedDir staged(out, kCacheIndex);
  std::vector<GradedExam> exams;
  std::vector<fs::path> bases;
  std::set<std::string> seen;
  for (const auto& m : manifests) {
    auto load = load_manifest(m, kNoRequiredLabels);
    for (auto& e : load.exams) {
      if (!seen.insert(e.exam_id).second) throw DataError("exam " + e.exam_id + " appears in two manifests");
      exams.push_back(std::move(e));
      bases.push_back(load.base_dir);
    }
  }
  std::vector<NormalizedImage> images(exams.size());
  parallel_for(exams.size(), ctx.threads, [&](std::size_t i) {
    const auto& e = exams[i];
    const auto raw = read_pgm(resolve(bases[i], e.image_path), e.spacing_mm);
    const auto lm = read_landmarks(resolve(bases[i], e.landmark_path), e.exam_id);
    images[i] = preprocess(raw, lm, cfg.preprocess, e.exam_id);
  });
  ImageCache cache;
  cache.config_hash = cfg.config_hash();
  cache.params = cfg.preprocess;
  for (std::size_t i = 0; i < exams.size(); ++i) cache.images.emplace(exams[i].exam_id, std::move(images[i]));
  cache.save(staged.path());
  staged.commit();
  say(ctx, "preprocess: " + std::to_string(exams.size()) + " images at " +
               std::to_string(cfg.preprocess.target_side) + " px");
}

void stage_pretrain(const RunConfig& cfg, const fs::path& out, const StageContext& ctx) {
  StagedDir staged(out, "backbone.meta.json");
  const auto result = pretrain_proxy(cfg.model, cfg.pretrain, cfg.preprocess, ctx.threads);
  write_weights(staged.path() / "backbone.weights", result.backbone);
  Json losses = Json::array();
  for (double l : result.epoch_loss) losses.push_back(l);
  write_json(staged.path() / "backbone.meta.json",
             Json{{"config_hash", cfg.config_hash()},
                  {"model", cfg.model.to_json()},
                  {"pretrain", cfg.pretrain.to_json()},
                  {"weights_checksum", hex64(checksum(result.backbone))},
                  {"epoch_loss", losses},
                  {"final_accuracy", result.final_accuracy}});
  staged.commit();
  say(ctx, "pretrain: proxy accuracy " + format_fixed(result.final_accuracy, 4));
}

std::vector<NamedTensor> read_backbone(const fs::path& path) {
  const auto file = fs::is_directory(path) ? path / "backbone.weights" : path;
  if (!fs::exists(file)) throw IoError("pretrained weights not found: " + file.string());
  return read_weights(file);
}

void stage_train(const RunConfig& cfg, const TrainInputs& in, const fs::path& out, const StageContext& ctx) {
  if (cfg.train.schedule == Schedule::kTransfer && !in.pretrained) {
    throw ConfigError("the transfer schedule needs pretrained backbone weights (--pretrained)");
  }
  if (cfg.train.schedule == Schedule::kScratch && in.pretrained) {
    throw ConfigError("pretrained weights were given but the schedule is scratch");
  }
  if (in.parallel_folds < 1) throw UsageError("--parallel-folds must be >= 1");
  std::vector<NamedTensor> backbone;
  if (in.pretrained) backbone = read_backbone(*in.pretrained);

  const auto load = load_manifest(in.manifest, head_tasks(cfg.model.heads));
  if (load.exams.empty()) throw DataError(in.manifest.string() + ": no exam carries every head's label");
  const auto cache = ImageCache::load(in.cache);
  std::vector<Example> all;
  for (const auto& e : load.exams) all.push_back({e.exam_id, cache.at(e.exam_id), e.grades});
  const auto folds = split_cv(load.exams, cfg.folds, cfg.seed);

  StagedDir staged(out, "ensemble.json");
  const std::string hash = cfg.config_hash();
  std::vector<FoldResult> results(static_cast<std::size_t>(cfg.folds));
  parallel_for(results.size(), in.parallel_folds, [&](std::size_t f) {
    FoldData data;
    for (const auto& ex : all) (folds.at(ex.exam_id) == static_cast<int>(f) ? data.val : data.train).push_back(ex);
    FoldRun run;
    run.fold = static_cast<int>(f);
    run.config_hash = hash;
    run.log_csv = staged.path() / ("fold" + std::to_string(f) + "_log.csv");
    if (ctx.log) {
      run.on_epoch = [&, f](const EpochRecord& r) {
        ctx.log("train: fold " + std::to_string(f) + " epoch " + std::to_string(r.epoch) + " lr " +
                format_double(r.lr) + " loss " + format_fixed(r.train_loss, 4) + " mean kappa " +
                format_fixed(r.mean_kappa(), 4));
      };
    }
    results[f] = run_fold(cfg.model, cfg.train, data, in.pretrained ? &backbone : nullptr, run);
  });

  EnsembleSpec spec;
  spec.domain = cfg.averaging;
  spec.members.emplace_back();
  Json summary = Json::array();
  for (std::size_t f = 0; f < results.size(); ++f) {
    const std::string stem = "fold" + std::to_string(f);
    results[f].snapshot.save(staged.path() / stem);
    spec.members[0].snapshots.push_back(stem);
    summary.push_back(Json{{"fold", f},
                           {"selected_epoch", results[f].snapshot.epoch},
                           {"mean_val_kappa", results[f].history[static_cast<std::size_t>(results[f].snapshot.epoch - 1)]
                                                  .mean_kappa()}});
  }
  write_json(staged.path() / "train.json", Json{{"config_hash", hash},
                                                {"manifest_hash", file_hash(in.manifest)},
                                                {"exams", all.size()},
                                                {"excluded", load.excluded},
                                                {"schedule", to_string(cfg.train.schedule)},
                                                {"folds", summary},
                                                {"config", cfg.hashed_json()}});
  write_json(staged.path() / "ensemble.json", spec.to_json());
  staged.commit();
}

void stage_predict(const RunConfig& cfg, const PredictInputs& in, const fs::path& out, const StageContext& ctx) {
  const auto spec = EnsembleSpec::from_json(read_json(in.ensemble), in.ensemble.parent_path());
  auto ensemble = Ensemble::load(spec);
  const auto load = load_manifest(in.manifest, head_tasks(ensemble.heads()));
  if (load.exams.empty()) throw DataError(in.manifest.string() + ": no exam to predict");
  const auto cache = ImageCache::load(in.cache);
  std::vector<const NormalizedImage*> images;
  PredictionTable table;
  table.heads = ensemble.heads();
  for (const auto& e : load.exams) {
    images.push_back(&cache.at(e.exam_id));
    table.exam_ids.push_back(e.exam_id);
  }
  StagedDir staged(out, "predictions.meta.json");
  table.rows = ensemble.predict(images, ctx.threads);
  write_file_atomic(staged.path() / "predictions.csv", format_predictions(table));
  Json hashes = Json::array();
  for (const auto& h : ensemble.config_hashes()) hashes.push_back(h);
  write_json(staged.path() / "predictions.meta.json",
             Json{{"config_hash", cfg.config_hash()},
                  {"manifest_hash", file_hash(in.manifest)},
                  {"snapshot_config_hashes", hashes},
                  {"averaging", to_string(spec.domain)},
                  {"members", ensemble.size()},
                  {"exams", table.exam_ids.size()}});
  staged.commit();
  say(ctx, "predict: " + std::to_string(table.exam_ids.size()) + " exams, " + std::to_string(ensemble.size()) +
               " snapshots");
}

Json stage_evaluate(const RunConfig& cfg, const EvaluateInputs& in, const fs::path& out, const StageContext& ctx) {
  const auto meta = read_json(in.predictions / "predictions.meta.json");
  const auto manifest_hash = file_hash(in.manifest);
  const auto recorded = meta.value("manifest_hash", std::string());
  if (recorded != manifest_hash && !in.force) {
    throw DataError("predictions were made from a manifest with hash " + recorded + " but " +
                    in.manifest.string() + " hashes to " + manifest_hash + " (use --force to override)");
  }
  const auto table = read_predictions(in.predictions / "predictions.csv");
  const auto load = load_manifest(in.manifest, head_tasks(table.heads));
  ReportOptions opt;
  opt.n_bootstrap = cfg.report.n_bootstrap;
  opt.level = cfg.report.level;
  opt.seed = cfg.seed;
  opt.kappa = cfg.report.kappa;
  opt.f1 = cfg.report.f1;
  opt.threads = ctx.threads;
  opt.plots = cfg.report.plots;
  opt.timestamp = in.timestamp;
  opt.provenance = Json{{"config_hash", cfg.config_hash()},
                        {"predictions_config_hash", meta.value("config_hash", std::string())},
                        {"snapshot_config_hashes", meta.value("snapshot_config_hashes", Json::array())},
                        {"manifest_hash", manifest_hash},
                        {"manifest_hash_checked", recorded == manifest_hash},
                        {"predictions_hash", file_hash(in.predictions / "predictions.csv")}};
  StagedDir staged(out, "metrics.json");
  auto doc = emit_report(table, load.exams, staged.path(), opt);
  staged.commit();
  say(ctx, "evaluate: report for " + std::to_string(load.exams.size()) + " exams");
  return doc;
}

}  // namespace oarsi
