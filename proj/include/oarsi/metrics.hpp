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

// Agreement and ranking statistics over integer grades, and the stratified
// percentile bootstrap.

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace oarsi {

enum class KappaWeighting { kNone, kLinear, kQuadratic };
std::string to_string(KappaWeighting w);
KappaWeighting kappa_weighting_from_string(const std::string& s);

enum class F1Mean { kHarmonic, kGeometric };

/// Weighted Cohen kappa, 1 - sum(w O) / sum(w E). Computed from integer
/// counts so the only rounding is the final division. Throws
/// UndefinedStatistic when sum(w E) is zero.
double cohen_kappa(std::span<const int> y_true, std::span<const int> y_pred, int k,
                   KappaWeighting weighting = KappaWeighting::kQuadratic);

/// Mean recall over classes present in y_true, in percent.
double balanced_accuracy(std::span<const int> y_true, std::span<const int> y_pred, int k);

/// Macro F1 over classes that occur in y_true or y_pred.
double f1_macro(std::span<const int> y_true, std::span<const int> y_pred, int k,
                F1Mean mean = F1Mean::kHarmonic);

double mse_grades(std::span<const int> y_true, std::span<const int> y_pred);

struct ConfusionMatrix {
  int k = 0;
  std::vector<std::int64_t> counts;  // row = true grade, column = predicted

  std::int64_t at(int t, int p) const { return counts[static_cast<std::size_t>(t * k + p)]; }
  std::int64_t total() const;
  /// Row-normalized percentages; empty rows stay all zero.
  std::vector<double> row_percentages() const;
};

ConfusionMatrix confusion_matrix(std::span<const int> y_true, std::span<const int> y_pred, int k);

struct CurvePoint {
  double x = 0;          // FPR for ROC, recall for PR
  double y = 0;          // TPR for ROC, precision for PR
  double threshold = 0;  // +inf for the ROC origin
};

struct Curve {
  std::vector<CurvePoint> points;
  double area = 0;  // ROC AUC or average precision
};

enum class CurveKind { kRoc, kPr };

/// ROC over all distinct score thresholds; AUC by the trapezoid rule, which
/// with tied scores grouped equals the Mann-Whitney statistic.
Curve roc_curve(std::span<const double> scores, std::span<const int> positive);
/// Precision/recall at each distinct threshold; area is average precision,
/// sum over thresholds of (R_k - R_{k-1}) P_k.
Curve pr_curve(std::span<const double> scores, std::span<const int> positive);

/// Tie-adjusted Mann-Whitney U / (P N).
double mann_whitney_auc(std::span<const double> scores, std::span<const int> positive);

/// Positive score for each row of per-class probabilities: the mass at or
/// above `threshold`.
std::vector<double> positive_scores(const std::vector<std::vector<double>>& probabilities,
                                    int threshold);

/// Binarizes grades at the task's threshold and builds the requested curve.
Curve binarize_and_curve(const std::vector<std::vector<double>>& probabilities,
                         std::span<const int> y_true, std::size_t task, CurveKind kind);

struct MetricWithCI {
  double point = 0;
  double ci_low = 0;
  double ci_high = 0;
  int n_bootstrap = 0;
  double level = 0.95;
  int undefined_iterations = 0;
  bool contains_point = true;  // false when the percentile interval misses the point
};

/// Statistic over a resample given as indices into the original sample.
/// Throws UndefinedStatistic (or returns NaN) when undefined.
using IndexStatistic = std::function<double(const std::vector<std::size_t>&)>;

/// Indices of one stratified resample: for each stratum in ascending label
/// order, |stratum| draws with replacement from its members. The stream is
/// Rng(derive_seed(seed, iteration)), so any iteration can be reproduced on
/// its own.
std::vector<std::size_t> stratified_resample(std::span<const int> strata, std::uint64_t seed,
                                             std::size_t iteration);

/// Percentile bootstrap. More than 20% undefined iterations throws
/// BootstrapError. Iterations are split across `threads` workers; results do
/// not depend on the thread count.
MetricWithCI bootstrap_ci(const IndexStatistic& statistic, std::span<const int> strata,
                          int n_iter = 100, double level = 0.95, std::uint64_t seed = 0,
                          int threads = 1);

}  // namespace oarsi
