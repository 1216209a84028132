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

#include "oarsi/run_config.hpp"

#include "oarsi/dataset.hpp"
#include "oarsi/errors.hpp"
#include "oarsi/rng.hpp"
#include "oarsi/serialize.hpp"
#include "oarsi/tasks.hpp"
#include "oarsi/text.hpp"

namespace oarsi {

namespace fs = std::filesystem;

namespace {

void reject_section_seed(const Json& j, const char* section) {
  if (j.is_object() && j.contains("seed")) {
    throw ConfigError(std::string(section) + ".seed: set the top-level seed instead");
  }
}

}  // namespace

std::vector<std::size_t> head_tasks(const std::vector<HeadSpec>& heads) {
  std::vector<std::size_t> out;
  for (const auto& h : heads) {
    const auto t = task_index(h.task);
    if (!t) throw ConfigError("head for unknown task '" + h.task + "'");
    out.push_back(*t);
  }
  return out;
}

void RunConfig::apply_seed(std::uint64_t s) {
  seed = s;
  synth.seed = s;
  train.seed = s;
  pretrain.seed = s;
  pretrain.render = synth.render;
}

void RunConfig::set_include_kl_head(bool include) {
  model.include_kl_head = include;
  model.heads = default_heads(include);
}

void RunConfig::validate() const {
  synth.validate();
  preprocess.validate();
  model.validate();
  train.validate();
  pretrain.validate();
  if (folds < 2) throw ConfigError("cv.folds must be >= 2");
  if (report.n_bootstrap < 1) throw ConfigError("report.n_bootstrap must be >= 1");
  if (!(report.level > 0 && report.level < 1)) throw ConfigError("report.level must lie in (0,1)");
  if (!train.task_weights.empty() && train.task_weights.size() != model.heads.size()) {
    throw ConfigError("train.task_weights needs one weight per head (" + std::to_string(model.heads.size()) + ")");
  }
  head_tasks(model.heads);
}

Json RunConfig::hashed_json() const {
  auto strip_seed = [](Json j) {
    j.erase("seed");
    return j;
  };
  Json j;
  j["seed"] = seed;
  j["synth"] = strip_seed(synth.to_json());
  j["preprocess"] = preprocess.to_json();
  j["model"] = model.to_json();
  j["train"] = strip_seed(train.to_json());
  j["pretrain"] = strip_seed(pretrain.to_json());
  j["cv"] = {{"folds", folds}};
  j["ensemble"] = {{"averaging", to_string(averaging)}};
  j["report"] = {{"n_bootstrap", report.n_bootstrap},
                 {"level", report.level},
                 {"kappa", to_string(report.kappa)},
                 {"f1", report.f1 == F1Mean::kHarmonic ? "harmonic" : "geometric"},
                 {"plots", report.plots}};
  return j;
}

Json RunConfig::to_json() const {
  Json j = hashed_json();
  j["workdir"] = workdir.generic_string();
  Json paths = Json::object();
  if (pretrained) paths["pretrained"] = pretrained->generic_string();
  j["paths"] = paths;
  return j;
}

std::string RunConfig::config_hash() const { return hex64(fnv1a64(hashed_json().dump())); }

RunConfig RunConfig::from_json(const Json& j, const fs::path& base) {
  reject_unknown_keys(j,
                      {"seed", "workdir", "synth", "preprocess", "model", "train", "pretrain", "cv", "ensemble",
                       "report", "paths"},
                      "config");
  RunConfig c;
  read_opt(j, "seed", c.seed, "config");
  std::string workdir = "work";
  read_opt(j, "workdir", workdir, "config");
  c.workdir = resolve(base, workdir);
  if (j.contains("synth")) {
    reject_section_seed(j["synth"], "synth");
    c.synth = SynthParams::from_json(j["synth"]);
  }
  if (j.contains("preprocess")) c.preprocess = PreprocessParams::from_json(j["preprocess"]);
  if (j.contains("model")) c.model = ModelConfig::from_json(j["model"]);
  if (j.contains("train")) {
    reject_section_seed(j["train"], "train");
    c.train = TrainConfig::from_json(j["train"]);
  }
  if (j.contains("pretrain")) {
    reject_section_seed(j["pretrain"], "pretrain");
    c.pretrain = PretrainConfig::from_json(j["pretrain"]);
  }
  if (j.contains("cv")) {
    reject_unknown_keys(j["cv"], {"folds"}, "cv");
    read_opt(j["cv"], "folds", c.folds, "cv");
  }
  if (j.contains("ensemble")) {
    reject_unknown_keys(j["ensemble"], {"averaging"}, "ensemble");
    std::string d = to_string(c.averaging);
    read_opt(j["ensemble"], "averaging", d, "ensemble");
    c.averaging = averaging_domain_from_string(d);
  }
  if (j.contains("report")) {
    const auto& r = j["report"];
    reject_unknown_keys(r, {"n_bootstrap", "level", "kappa", "f1", "plots"}, "report");
    read_opt(r, "n_bootstrap", c.report.n_bootstrap, "report");
    read_opt(r, "level", c.report.level, "report");
    read_opt(r, "plots", c.report.plots, "report");
    std::string kappa = to_string(c.report.kappa), f1 = "harmonic";
    read_opt(r, "kappa", kappa, "report");
    read_opt(r, "f1", f1, "report");
    c.report.kappa = kappa_weighting_from_string(kappa);
    if (f1 == "harmonic") {
      c.report.f1 = F1Mean::kHarmonic;
    } else if (f1 == "geometric") {
      c.report.f1 = F1Mean::kGeometric;
    } else {
      throw ConfigError("report.f1 must be harmonic|geometric, got '" + f1 + "'");
    }
  }
  if (j.contains("paths")) {
    reject_unknown_keys(j["paths"], {"pretrained"}, "paths");
    std::string p;
    read_opt(j["paths"], "pretrained", p, "paths");
    if (!p.empty()) c.pretrained = resolve(base, p);
  }
  c.apply_seed(c.seed);
  c.validate();
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  return from_json(parse_json(read_file(path), path.string()), path.parent_path());
}

}  // namespace oarsi
