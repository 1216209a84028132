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

#include <gtest/gtest.h>

#include <filesystem>

#include "oarsi/dataset.hpp"
#include "oarsi/errors.hpp"
#include "oarsi/pipeline.hpp"
#include "oarsi/report.hpp"
#include "oarsi/serialize.hpp"

namespace oarsi {
namespace {

namespace fs = std::filesystem;

fs::path fresh(const std::string& name) {
  auto d = fs::temp_directory_path() / ("oarsi_pipeline_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

RunConfig small_config(const fs::path& workdir) {
  auto cfg = RunConfig::from_json(Json::parse(R"({
    "seed": 3,
    "synth": {"subjects": 16, "test_subjects": 6, "image_side": 48},
    "preprocess": {"target_side": 24},
    "model": {"preset": "mini-resnet"},
    "train": {"epochs": 2, "batch_size": 8},
    "pretrain": {"samples": 32, "epochs": 1},
    "cv": {"folds": 2},
    "report": {"n_bootstrap": 20}
  })"));
  cfg.workdir = workdir;
  return cfg;
}

std::vector<std::string> partial_dirs(const fs::path& dir) {
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().filename().string().find(".partial-") != std::string::npos) out.push_back(e.path().string());
  return out;
}

TEST(RunConfig, DefaultsValidateAndRoundTrip) {
  RunConfig c;
  c.apply_seed(11);
  c.validate();
  auto back = RunConfig::from_json(c.to_json());
  EXPECT_EQ(back.config_hash(), c.config_hash());
  EXPECT_EQ(back.train.seed, 11u);
  EXPECT_EQ(back.synth.seed, 11u);
  EXPECT_EQ(back.model, c.model);
}

TEST(RunConfig, StrictKeys) {
  EXPECT_THROW(RunConfig::from_json(Json::parse(R"({"sed": 1})")), ConfigError);
  EXPECT_THROW(RunConfig::from_json(Json::parse(R"({"train": {"epoch": 1}})")), ConfigError);
  EXPECT_THROW(RunConfig::from_json(Json::parse(R"({"train": {"seed": 1}})")), ConfigError);
  EXPECT_THROW(RunConfig::from_json(Json::parse(R"({"cv": {"folds": 1}})")), ConfigError);
  EXPECT_THROW(RunConfig::from_json(Json::parse(R"({"report": {"f1": "arith"}})")), ConfigError);
  EXPECT_THROW(RunConfig::from_json(Json::parse(R"({"train": {"task_weights": [1, 1]}})")), ConfigError);
}

TEST(RunConfig, HashIgnoresLocationsButNotSettings) {
  RunConfig a;
  RunConfig b = a;
  b.workdir = "/elsewhere";
  b.pretrained = "/x/backbone.weights";
  EXPECT_EQ(a.config_hash(), b.config_hash());
  b.train.epochs = 19;
  EXPECT_NE(a.config_hash(), b.config_hash());
  RunConfig c = a;
  c.apply_seed(1);
  EXPECT_NE(a.config_hash(), c.config_hash());
  RunConfig d = a;
  d.set_include_kl_head(false);
  EXPECT_EQ(d.model.heads.size(), 6u);
  EXPECT_NE(a.config_hash(), d.config_hash());
}

TEST(RunConfig, RelativePathsResolveAgainstConfigDir) {
  auto c = RunConfig::from_json(Json::parse(R"({"workdir": "w", "paths": {"pretrained": "p/b.weights"}})"), "/cfg");
  EXPECT_EQ(c.workdir, fs::path("/cfg/w"));
  EXPECT_EQ(*c.pretrained, fs::path("/cfg/p/b.weights"));
}

TEST(Pipeline, SynthIsDeterministic) {
  const auto root = fresh("synth");
  auto cfg = small_config(root);
  stage_synth(cfg, root / "a");
  stage_synth(cfg, root / "b");
  EXPECT_EQ(read_file(root / "a" / "manifest.csv"), read_file(root / "b" / "manifest.csv"));
  EXPECT_EQ(read_file(root / "a" / "synth.json"), read_file(root / "b" / "synth.json"));
  stage_synth(cfg, root / "a");  // replaces its own output
  EXPECT_TRUE(partial_dirs(root).empty());
}

TEST(Pipeline, RefusesToReplaceForeignDirectory) {
  const auto root = fresh("foreign");
  write_file_atomic(root / "mine" / "notes.txt", "keep");
  EXPECT_THROW(stage_synth(small_config(root), root / "mine"), UsageError);
  EXPECT_EQ(read_file(root / "mine" / "notes.txt"), "keep");
}

TEST(Pipeline, CacheRoundTrip) {
  const auto root = fresh("cache");
  auto cfg = small_config(root);
  stage_synth(cfg, layout::data(cfg));
  stage_preprocess(cfg, {layout::data(cfg) / "manifest.csv"}, layout::cache(cfg));
  auto cache = ImageCache::load(layout::cache(cfg));
  const auto load = load_and_filter(layout::data(cfg) / "manifest.csv", kNoRequiredLabels);
  ASSERT_EQ(cache.images.size(), load.exams.size());
  const auto& e = load.exams.front();
  const auto direct = preprocess(read_pgm(layout::data(cfg) / e.image_path, e.spacing_mm),
                                 read_landmarks(layout::data(cfg) / e.landmark_path, e.exam_id), cfg.preprocess,
                                 e.exam_id);
  EXPECT_EQ(cache.at(e.exam_id).unit, direct.unit);
  EXPECT_EQ(cache.at(e.exam_id).provenance.to_json(), direct.provenance.to_json());
  EXPECT_THROW(cache.at("nope"), DataError);

  std::string bytes = read_file(layout::cache(cfg) / "images.weights");
  bytes[bytes.size() / 2] ^= 1;
  write_file_atomic(layout::cache(cfg) / "images.weights", bytes);
  EXPECT_THROW(ImageCache::load(layout::cache(cfg)), LoadError);
}

TEST(Pipeline, TrainPreconditions) {
  const auto root = fresh("pre");
  auto cfg = small_config(root);
  cfg.train.schedule = Schedule::kTransfer;
  TrainInputs in{root / "m.csv", root / "c", std::nullopt, 1};
  EXPECT_THROW(stage_train(cfg, in, root / "runs"), ConfigError);
  cfg.train.schedule = Schedule::kScratch;
  in.pretrained = root / "b.weights";
  EXPECT_THROW(stage_train(cfg, in, root / "runs"), ConfigError);
  EXPECT_FALSE(fs::exists(root / "runs"));
}

TEST(Pipeline, FailedStageLeavesNoPartialOutput) {
  const auto root = fresh("partial");
  auto cfg = small_config(root);
  stage_synth(cfg, layout::data(cfg));
  stage_preprocess(cfg, {layout::data(cfg) / "manifest.csv", layout::data(cfg) / "test_manifest.csv"},
                   layout::cache(cfg));
  stage_train(cfg, {layout::data(cfg) / "manifest.csv", layout::cache(cfg), std::nullopt, 1}, layout::runs(cfg));
  stage_predict(cfg, {layout::runs(cfg) / "ensemble.json", layout::data(cfg) / "test_manifest.csv", layout::cache(cfg)},
                layout::predictions(cfg));
  // Labels for exams the predictions never saw: the report fails mid-stage.
  EXPECT_THROW(stage_evaluate(cfg, {layout::predictions(cfg), layout::data(cfg) / "manifest.csv", true, ""},
                              root / "report"),
               DataError);
  EXPECT_FALSE(fs::exists(root / "report"));
  EXPECT_TRUE(partial_dirs(root).empty());
}

TEST(Pipeline, FullChainTwiceIsByteIdentical) {
  std::vector<fs::path> reports;
  for (const char* name : {"chain_a", "chain_b"}) {
    const auto root = fresh(name);
    auto cfg = small_config(root);
    cfg.train.schedule = Schedule::kTransfer;
    cfg.train.epochs = 3;
    stage_synth(cfg, layout::data(cfg));
    stage_preprocess(cfg, {layout::data(cfg) / "manifest.csv", layout::data(cfg) / "test_manifest.csv"},
                     layout::cache(cfg));
    stage_pretrain(cfg, layout::pretrained(cfg));
    stage_train(cfg, {layout::data(cfg) / "manifest.csv", layout::cache(cfg), layout::pretrained(cfg), 2},
                layout::runs(cfg));
    stage_predict(cfg,
                  {layout::runs(cfg) / "ensemble.json", layout::data(cfg) / "test_manifest.csv", layout::cache(cfg)},
                  layout::predictions(cfg));
    const auto doc = stage_evaluate(
        cfg, {layout::predictions(cfg), layout::data(cfg) / "test_manifest.csv", false, ""}, layout::report(cfg));
    EXPECT_EQ(doc["tasks"].size(), 7u);
    reports.push_back(layout::report(cfg));
  }
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(reports[0])) {
    EXPECT_EQ(read_file(e.path()), read_file(reports[1] / e.path().filename())) << e.path();
    ++files;
  }
  EXPECT_EQ(files, 1u + 6 * 7);
}

}  // namespace
}  // namespace oarsi
