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

// End-to-end stages behind the command-line tool. Each stage writes into a
// hidden staging directory next to `out` and renames it into place only on
// success, so a failed stage leaves no partial output behind.
//
// Default layout under RunConfig::workdir:
//   data/      synth        manifest.csv, test_manifest.csv, images/, landmarks/
//   cache/     preprocess   images.weights, index.json
//   pretrained/ pretrain    backbone.weights, backbone.meta.json
//   runs/<model>/ train     fold<k>.weights/.meta.json, fold<k>_log.csv, ensemble.json
//   predictions/ predict    predictions.csv, predictions.meta.json
//   report/    evaluate     metrics.json, confusion_*, roc_*, pr_*

#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "oarsi/run_config.hpp"

namespace oarsi {

using LogFn = std::function<void(const std::string&)>;

struct StageContext {
  int threads = 1;
  LogFn log;  // progress lines; may be empty
};

/// Normalized images keyed by exam id.
struct ImageCache {
  std::map<std::string, NormalizedImage> images;
  std::string config_hash;
  PreprocessParams params;

  void save(const std::filesystem::path& dir) const;
  static ImageCache load(const std::filesystem::path& dir);
  const NormalizedImage& at(const std::string& exam_id) const;
};

std::string file_hash(const std::filesystem::path& path);

namespace layout {
std::filesystem::path data(const RunConfig& c);
std::filesystem::path cache(const RunConfig& c);
std::filesystem::path pretrained(const RunConfig& c);
std::filesystem::path runs(const RunConfig& c);
std::filesystem::path predictions(const RunConfig& c);
std::filesystem::path report(const RunConfig& c);
}  // namespace layout

void stage_synth(const RunConfig& cfg, const std::filesystem::path& out, const StageContext& ctx = {});

/// Every row of every manifest, labeled or not.
void stage_preprocess(const RunConfig& cfg, const std::vector<std::filesystem::path>& manifests,
                      const std::filesystem::path& out, const StageContext& ctx = {});

void stage_pretrain(const RunConfig& cfg, const std::filesystem::path& out, const StageContext& ctx = {});

/// Accepts a weights file or a directory holding backbone.weights.
std::vector<NamedTensor> read_backbone(const std::filesystem::path& path);

struct TrainInputs {
  std::filesystem::path manifest;
  std::filesystem::path cache;
  std::optional<std::filesystem::path> pretrained;
  int parallel_folds = 1;
};

/// Subject-wise CV over the manifest exams carrying every head's label; one
/// snapshot per fold plus ensemble.json listing them.
void stage_train(const RunConfig& cfg, const TrainInputs& in, const std::filesystem::path& out,
                 const StageContext& ctx = {});

struct PredictInputs {
  std::filesystem::path ensemble;  // ensemble.json
  std::filesystem::path manifest;
  std::filesystem::path cache;
};

/// Predicts the manifest exams labeled for every ensemble head, the same
/// set evaluate scores.
void stage_predict(const RunConfig& cfg, const PredictInputs& in, const std::filesystem::path& out,
                   const StageContext& ctx = {});

struct EvaluateInputs {
  std::filesystem::path predictions;  // directory from stage_predict
  std::filesystem::path manifest;
  bool force = false;                 // skip the manifest hash check
  std::string timestamp;
};

Json stage_evaluate(const RunConfig& cfg, const EvaluateInputs& in, const std::filesystem::path& out,
                    const StageContext& ctx = {});

}  // namespace oarsi
