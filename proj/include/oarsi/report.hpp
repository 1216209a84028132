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

// Evaluation report: metrics.json, confusion_<task>.csv, roc_<task>.csv,
// pr_<task>.csv and SVG renderings of the curves and matrices.

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "oarsi/dataset.hpp"
#include "oarsi/ensemble.hpp"
#include "oarsi/json_util.hpp"
#include "oarsi/metrics.hpp"

namespace oarsi {

struct ReportOptions {
  int n_bootstrap = 100;
  double level = 0.95;
  std::uint64_t seed = 0;
  KappaWeighting kappa = KappaWeighting::kQuadratic;
  F1Mean f1 = F1Mean::kHarmonic;
  int threads = 1;
  bool plots = true;
  std::string timestamp;          // written as "generated_at" when non-empty
  Json provenance = Json::object();  // copied verbatim under "provenance"
};

/// Name of the only field in metrics.json that may differ between reruns.
inline constexpr const char* kTimestampField = "generated_at";

/// Joins predictions with manifest labels by exam id. Every manifest exam
/// needs a prediction and vice versa (DataError listing the ids otherwise).
/// Returns the metrics document, which is also written to metrics.json.
Json emit_report(const PredictionTable& predictions, const std::vector<GradedExam>& labels,
                 const std::filesystem::path& out_dir, const ReportOptions& options = {});

std::string confusion_csv(const ConfusionMatrix& cm);
std::string curve_csv(const Curve& curve, CurveKind kind);
std::string curve_svg(const Curve& curve, CurveKind kind, const std::string& title);
std::string confusion_svg(const ConfusionMatrix& cm, const std::string& title);

}  // namespace oarsi
