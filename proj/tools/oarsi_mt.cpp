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

// oarsi_mt: synth | preprocess | pretrain | train | predict | evaluate.
// Failures print one line, `error: <kind>: <subcommand>: <message>`, and
// exit with 2 for usage/config errors and 1 otherwise.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "oarsi/errors.hpp"
#include "oarsi/parallel.hpp"
#include "oarsi/pipeline.hpp"

namespace fs = std::filesystem;
using namespace oarsi;

namespace {

std::string one_line(std::string s) {
  for (auto& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

int fail(const std::string& kind, const std::string& sub, const std::string& msg) {
  std::cerr << "error: " << kind << ": " << sub << ": " << one_line(msg) << std::endl;
  return kind == "usage" || kind == "config" ? 2 : 1;
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-task knee radiograph grading: synthetic data, training, ensembling, evaluation."};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, out;
  std::uint64_t seed = 0;
  bool quiet = false;
  app.add_option("--config", config_path, "Run configuration (JSON)");
  auto* seed_opt = app.add_option("--seed", seed, "Seed for every stage (overrides the config)");
  app.add_option("--out", out, "Output directory (default: the stage's place under workdir)");
  app.add_flag("--quiet", quiet, "No progress lines on stderr");

  auto* synth = app.add_subcommand("synth", "Render a synthetic graded dataset");
  int subjects = 0, test_subjects = -1;
  synth->add_option("--subjects", subjects, "Training subjects");
  synth->add_option("--test-subjects", test_subjects, "Held-out subjects");

  auto* prep = app.add_subcommand("preprocess", "Build the normalized image cache");
  std::vector<std::string> prep_manifests;
  prep->add_option("--manifest", prep_manifests, "Manifest(s) to cache (default: the synth manifests)");

  app.add_subcommand("pretrain", "Pretrain the backbone on the proxy task");

  auto* train = app.add_subcommand("train", "Cross-validated training, one snapshot per fold");
  std::string schedule, pretrained, train_manifest, train_cache;
  bool no_kl = false;
  int parallel_folds = 1, epochs = 0, folds = 0;
  train->add_option("--schedule", schedule, "transfer|scratch");
  train->add_flag("--no-kl-head", no_kl, "Train only the six OARSI heads");
  train->add_option("--pretrained", pretrained, "Backbone weights file or pretrain output directory");
  train->add_option("--parallel-folds", parallel_folds, "Folds trained concurrently");
  train->add_option("--epochs", epochs, "Override train.epochs");
  train->add_option("--folds", folds, "Override cv.folds");
  train->add_option("--manifest", train_manifest, "Training manifest");
  train->add_option("--cache", train_cache, "Image cache directory");

  auto* predict = app.add_subcommand("predict", "Ensemble predictions for a manifest");
  std::string ensemble_path, predict_manifest, predict_cache;
  predict->add_option("--ensemble", ensemble_path, "ensemble.json (default: the train output)");
  predict->add_option("--manifest", predict_manifest, "Manifest to predict (default: test manifest)");
  predict->add_option("--cache", predict_cache, "Image cache directory");

  auto* evaluate = app.add_subcommand("evaluate", "Metrics, confidence intervals, curves and plots");
  std::string predictions_dir, eval_manifest;
  bool force = false;
  evaluate->add_option("--predictions", predictions_dir, "Predict output directory");
  evaluate->add_option("--manifest", eval_manifest, "Labeled manifest (default: test manifest)");
  evaluate->add_flag("--force", force, "Evaluate even if the manifest hash differs from the one predicted on");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", "oarsi_mt", e.what());
  }
  const std::string sub = app.get_subcommands().front()->get_name();

  try {
    RunConfig cfg = config_path.empty() ? RunConfig{} : RunConfig::load(config_path);
    cfg.apply_seed(seed_opt->count() ? seed : cfg.seed);
    if (subjects > 0) cfg.synth.subjects = subjects;
    if (test_subjects >= 0) cfg.synth.test_subjects = test_subjects;
    if (!schedule.empty()) cfg.train.schedule = schedule_from_string(schedule);
    if (no_kl) cfg.set_include_kl_head(false);
    if (epochs > 0) cfg.train.epochs = epochs;
    if (folds > 0) cfg.folds = folds;
    cfg.validate();

    StageContext ctx;
    ctx.threads = worker_threads();
    if (!quiet) ctx.log = [](const std::string& line) { std::cerr << line << std::endl; };
    const fs::path data = layout::data(cfg);
    auto pick = [](const std::string& flag, const fs::path& fallback) {
      return flag.empty() ? fallback : fs::path(flag);
    };
    const fs::path test_manifest = data / "test_manifest.csv";

    if (sub == "synth") {
      stage_synth(cfg, pick(out, data), ctx);
    } else if (sub == "preprocess") {
      std::vector<fs::path> manifests(prep_manifests.begin(), prep_manifests.end());
      if (manifests.empty()) {
        manifests.push_back(data / "manifest.csv");
        if (fs::exists(test_manifest)) manifests.push_back(test_manifest);
      }
      stage_preprocess(cfg, manifests, pick(out, layout::cache(cfg)), ctx);
    } else if (sub == "pretrain") {
      stage_pretrain(cfg, pick(out, layout::pretrained(cfg)), ctx);
    } else if (sub == "train") {
      TrainInputs in;
      in.manifest = pick(train_manifest, data / "manifest.csv");
      in.cache = pick(train_cache, layout::cache(cfg));
      if (!pretrained.empty()) {
        in.pretrained = fs::path(pretrained);
      } else if (cfg.pretrained && cfg.train.schedule == Schedule::kTransfer) {
        in.pretrained = cfg.pretrained;
      }
      in.parallel_folds = parallel_folds;
      stage_train(cfg, in, pick(out, layout::runs(cfg)), ctx);
    } else if (sub == "predict") {
      PredictInputs in;
      in.ensemble = pick(ensemble_path, layout::runs(cfg) / "ensemble.json");
      in.manifest = pick(predict_manifest, test_manifest);
      in.cache = pick(predict_cache, layout::cache(cfg));
      stage_predict(cfg, in, pick(out, layout::predictions(cfg)), ctx);
    } else if (sub == "evaluate") {
      EvaluateInputs in;
      in.predictions = pick(predictions_dir, layout::predictions(cfg));
      in.manifest = pick(eval_manifest, test_manifest);
      in.force = force;
      in.timestamp = utc_now();
      stage_evaluate(cfg, in, pick(out, layout::report(cfg)), ctx);
    }
  } catch (const Error& e) {
    return fail(e.kind(), sub, e.what());
  } catch (const fs::filesystem_error& e) {
    return fail("io", sub, e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail("parse", sub, e.what());
  } catch (const std::exception& e) {
    return fail("internal", sub, e.what());
  }
  return 0;
}
