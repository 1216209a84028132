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

// One document describing a whole run. Sections: seed, workdir, synth,
// preprocess, model, train, pretrain, cv, ensemble, report, paths.

#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "oarsi/ensemble.hpp"
#include "oarsi/json_util.hpp"
#include "oarsi/metrics.hpp"
#include "oarsi/model.hpp"
#include "oarsi/preprocess.hpp"
#include "oarsi/synth.hpp"
#include "oarsi/training.hpp"

namespace oarsi {

struct ReportConfig {
  int n_bootstrap = 100;
  double level = 0.95;
  KappaWeighting kappa = KappaWeighting::kQuadratic;
  F1Mean f1 = F1Mean::kHarmonic;
  bool plots = true;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path workdir = "work";
  SynthParams synth;
  PreprocessParams preprocess;
  ModelConfig model = mini_config(MiniVariant::kSeResNet);
  TrainConfig train;
  PretrainConfig pretrain;
  int folds = 5;
  AveragingDomain averaging = AveragingDomain::kProbability;
  ReportConfig report;
  std::optional<std::filesystem::path> pretrained;  // backbone weights for transfer

  /// Propagates the run seed into every section and the synthetic render
  /// settings into pretraining.
  void apply_seed(std::uint64_t s);
  void set_include_kl_head(bool include);
  void validate() const;

  Json to_json() const;
  /// Everything except filesystem locations; the basis of config_hash().
  Json hashed_json() const;
  std::string config_hash() const;

  /// Strict: unknown keys are ConfigErrors, as is a per-section "seed".
  /// Relative paths resolve against `base`.
  static RunConfig from_json(const Json& j, const std::filesystem::path& base = {});
  static RunConfig load(const std::filesystem::path& path);
};

/// Task indices of a head list, for manifest filtering.
std::vector<std::size_t> head_tasks(const std::vector<HeadSpec>& heads);

}  // namespace oarsi
