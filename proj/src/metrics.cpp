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

#include "oarsi/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "oarsi/errors.hpp"
#include "oarsi/parallel.hpp"
#include "oarsi/preprocess.hpp"
#include "oarsi/rng.hpp"
#include "oarsi/tasks.hpp"

namespace oarsi {

namespace {

void check_labels(std::span<const int> y_true, std::span<const int> y_pred, int k,
                  const char* what) {
  if (y_true.empty()) throw UsageError(std::string(what) + ": empty input");
  if (y_true.size() != y_pred.size()) {
    throw UsageError(std::string(what) + ": " + std::to_string(y_true.size()) + " labels vs " +
                     std::to_string(y_pred.size()) + " predictions");
  }
  if (k < 1) throw UsageError(std::string(what) + ": need at least one class");
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    if (y_true[i] < 0 || y_true[i] >= k || y_pred[i] < 0 || y_pred[i] >= k) {
      throw UsageError(std::string(what) + ": label outside [0," + std::to_string(k) +
                       ") at index " + std::to_string(i));
    }
  }
}

void check_scores(std::span<const double> scores, std::span<const int> positive) {
  if (scores.empty()) throw UsageError("curve: empty input");
  if (scores.size() != positive.size()) throw UsageError("curve: scores and labels differ in length");
  std::size_t pos = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) throw UsageError("curve: non-finite score at index " + std::to_string(i));
    pos += positive[i] != 0;
  }
  if (pos == 0 || pos == scores.size()) {
    throw UndefinedStatistic("curve: ground truth has a single class");
  }
}

// Cumulative (tp, fp) after each distinct threshold, scores descending.
struct Sweep {
  std::vector<double> thresholds;
  std::vector<std::int64_t> tp, fp;
  std::int64_t p = 0, n = 0;
};

Sweep sweep(std::span<const double> scores, std::span<const int> positive) {
  check_scores(scores, positive);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
  Sweep s;
  std::int64_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto idx = order[i];
    (positive[idx] ? tp : fp) += 1;
    if (i + 1 == order.size() || scores[order[i + 1]] != scores[idx]) {
      s.thresholds.push_back(scores[idx]);
      s.tp.push_back(tp);
      s.fp.push_back(fp);
    }
  }
  s.p = tp;
  s.n = fp;
  return s;
}

}  // namespace

std::string to_string(KappaWeighting w) {
  switch (w) {
    case KappaWeighting::kNone: return "none";
    case KappaWeighting::kLinear: return "linear";
    case KappaWeighting::kQuadratic: return "quadratic";
  }
  return "quadratic";
}

KappaWeighting kappa_weighting_from_string(const std::string& s) {
  if (s == "none") return KappaWeighting::kNone;
  if (s == "linear") return KappaWeighting::kLinear;
  if (s == "quadratic") return KappaWeighting::kQuadratic;
  throw ConfigError("kappa weighting must be none|linear|quadratic, got '" + s + "'");
}

double cohen_kappa(std::span<const int> y_true, std::span<const int> y_pred, int k,
                   KappaWeighting weighting) {
  check_labels(y_true, y_pred, k, "kappa");
  if (k < 2) throw UndefinedStatistic("kappa: a single class has no disagreement scale");
  // Integer weights proportional to the normalized ones; the scale cancels.
  auto w = [&](int i, int j) -> std::int64_t {
    const std::int64_t d = std::abs(i - j);
    switch (weighting) {
      case KappaWeighting::kNone: return d != 0;
      case KappaWeighting::kLinear: return d;
      case KappaWeighting::kQuadratic: return d * d;
    }
    return d * d;
  };
  const auto cm = confusion_matrix(y_true, y_pred, k);
  std::vector<std::int64_t> rows(static_cast<std::size_t>(k)), cols(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      rows[static_cast<std::size_t>(i)] += cm.at(i, j);
      cols[static_cast<std::size_t>(j)] += cm.at(i, j);
    }
  const auto n = static_cast<std::int64_t>(y_true.size());
  std::int64_t observed = 0, expected = 0;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      observed += w(i, j) * cm.at(i, j) * n;
      expected += w(i, j) * rows[static_cast<std::size_t>(i)] * cols[static_cast<std::size_t>(j)];
    }
  if (expected == 0) throw UndefinedStatistic("kappa: expected disagreement is zero");
  return 1.0 - static_cast<double>(observed) / static_cast<double>(expected);
}

double balanced_accuracy(std::span<const int> y_true, std::span<const int> y_pred, int k) {
  check_labels(y_true, y_pred, k, "balanced accuracy");
  const auto cm = confusion_matrix(y_true, y_pred, k);
  double sum = 0;
  int present = 0;
  std::int64_t hits = 0, first_row = 0;
  bool equal_rows = true;
  for (int c = 0; c < k; ++c) {
    std::int64_t row = 0;
    for (int j = 0; j < k; ++j) row += cm.at(c, j);
    if (row == 0) continue;
    if (first_row == 0) first_row = row;
    equal_rows = equal_rows && row == first_row;
    hits += cm.at(c, c);
    sum += static_cast<double>(cm.at(c, c)) / static_cast<double>(row);
    ++present;
  }
  // Equal class sizes: same value, computed as plain accuracy so the two agree bit for bit.
  if (equal_rows) return 100.0 * static_cast<double>(hits) / static_cast<double>(y_true.size());
  return 100.0 * sum / present;
}

double f1_macro(std::span<const int> y_true, std::span<const int> y_pred, int k, F1Mean mean) {
  check_labels(y_true, y_pred, k, "F1");
  const auto cm = confusion_matrix(y_true, y_pred, k);
  double sum = 0;
  int used = 0;
  for (int c = 0; c < k; ++c) {
    std::int64_t row = 0, col = 0;
    for (int j = 0; j < k; ++j) {
      row += cm.at(c, j);
      col += cm.at(j, c);
    }
    if (row == 0 && col == 0) continue;
    const double tp = static_cast<double>(cm.at(c, c));
    const double precision = col ? tp / static_cast<double>(col) : 0.0;
    const double recall = row ? tp / static_cast<double>(row) : 0.0;
    double f = 0;
    if (mean == F1Mean::kGeometric) {
      f = std::sqrt(precision * recall);
    } else if (precision + recall > 0) {
      f = 2 * precision * recall / (precision + recall);
    }
    sum += f;
    ++used;
  }
  return sum / used;
}

double mse_grades(std::span<const int> y_true, std::span<const int> y_pred) {
  if (y_true.empty()) throw UsageError("MSE: empty input");
  if (y_true.size() != y_pred.size()) throw UsageError("MSE: length mismatch");
  std::int64_t sum = 0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const std::int64_t d = y_true[i] - y_pred[i];
    sum += d * d;
  }
  return static_cast<double>(sum) / static_cast<double>(y_true.size());
}

std::int64_t ConfusionMatrix::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::int64_t{0});
}

std::vector<double> ConfusionMatrix::row_percentages() const {
  std::vector<double> out(counts.size(), 0.0);
  for (int t = 0; t < k; ++t) {
    std::int64_t row = 0;
    for (int p = 0; p < k; ++p) row += at(t, p);
    if (row == 0) continue;
    for (int p = 0; p < k; ++p) {
      out[static_cast<std::size_t>(t * k + p)] = 100.0 * static_cast<double>(at(t, p)) / static_cast<double>(row);
    }
  }
  return out;
}

ConfusionMatrix confusion_matrix(std::span<const int> y_true, std::span<const int> y_pred, int k) {
  check_labels(y_true, y_pred, k, "confusion matrix");
  ConfusionMatrix cm;
  cm.k = k;
  cm.counts.assign(static_cast<std::size_t>(k * k), 0);
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    ++cm.counts[static_cast<std::size_t>(y_true[i] * k + y_pred[i])];
  }
  return cm;
}

Curve roc_curve(std::span<const double> scores, std::span<const int> positive) {
  const auto s = sweep(scores, positive);
  Curve c;
  c.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  // 2 P N * AUC accumulated exactly in integers.
  std::int64_t twice_area = 0, prev_tp = 0, prev_fp = 0;
  for (std::size_t i = 0; i < s.thresholds.size(); ++i) {
    c.points.push_back({static_cast<double>(s.fp[i]) / static_cast<double>(s.n),
                        static_cast<double>(s.tp[i]) / static_cast<double>(s.p), s.thresholds[i]});
    twice_area += (s.fp[i] - prev_fp) * (s.tp[i] + prev_tp);
    prev_tp = s.tp[i];
    prev_fp = s.fp[i];
  }
  c.area = static_cast<double>(twice_area) / static_cast<double>(2 * s.p * s.n);
  return c;
}

Curve pr_curve(std::span<const double> scores, std::span<const int> positive) {
  const auto s = sweep(scores, positive);
  Curve c;
  c.points.push_back({0.0, 1.0, std::numeric_limits<double>::infinity()});
  std::int64_t prev_tp = 0;
  for (std::size_t i = 0; i < s.thresholds.size(); ++i) {
    const double recall = static_cast<double>(s.tp[i]) / static_cast<double>(s.p);
    const double precision = static_cast<double>(s.tp[i]) / static_cast<double>(s.tp[i] + s.fp[i]);
    c.points.push_back({recall, precision, s.thresholds[i]});
    c.area += static_cast<double>(s.tp[i] - prev_tp) / static_cast<double>(s.p) * precision;
    prev_tp = s.tp[i];
  }
  return c;
}

double mann_whitney_auc(std::span<const double> scores, std::span<const int> positive) {
  check_scores(scores, positive);
  std::int64_t twice_u = 0, p = 0, n = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (positive[i]) {
      ++p;
    } else {
      ++n;
    }
    if (!positive[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (positive[j]) continue;
      twice_u += scores[i] > scores[j] ? 2 : scores[i] == scores[j] ? 1 : 0;
    }
  }
  return static_cast<double>(twice_u) / static_cast<double>(2 * p * n);
}

std::vector<double> positive_scores(const std::vector<std::vector<double>>& probabilities,
                                    int threshold) {
  std::vector<double> out;
  out.reserve(probabilities.size());
  for (const auto& row : probabilities) {
    if (threshold < 0 || threshold >= static_cast<int>(row.size())) {
      throw UsageError("positive threshold " + std::to_string(threshold) + " outside the class range");
    }
    double s = 0;
    for (std::size_t c = static_cast<std::size_t>(threshold); c < row.size(); ++c) s += row[c];
    out.push_back(s);
  }
  return out;
}

Curve binarize_and_curve(const std::vector<std::vector<double>>& probabilities,
                         std::span<const int> y_true, std::size_t task, CurveKind kind) {
  if (task >= kNumTasks) throw UsageError("unknown task index " + std::to_string(task));
  if (probabilities.size() != y_true.size()) throw UsageError("curve: probabilities and labels differ in length");
  for (const auto& row : probabilities) {
    if (static_cast<int>(row.size()) != kTaskClasses[task]) {
      throw UsageError("curve: " + std::string(kTaskNames[task]) + " expects " +
                       std::to_string(kTaskClasses[task]) + " class probabilities");
    }
  }
  const int thr = positive_threshold(task);
  const auto scores = positive_scores(probabilities, thr);
  std::vector<int> positive(y_true.size());
  for (std::size_t i = 0; i < y_true.size(); ++i) positive[i] = y_true[i] >= thr;
  return kind == CurveKind::kRoc ? roc_curve(scores, positive) : pr_curve(scores, positive);
}

// ---------------------------------------------------------------------------
// bootstrap

std::vector<std::size_t> stratified_resample(std::span<const int> strata, std::uint64_t seed,
                                             std::size_t iteration) {
  std::map<int, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < strata.size(); ++i) members[strata[i]].push_back(i);
  Rng rng(derive_seed(seed, iteration));
  std::vector<std::size_t> out;
  out.reserve(strata.size());
  for (const auto& [_, idx] : members) {
    std::uniform_int_distribution<std::size_t> pick(0, idx.size() - 1);
    for (std::size_t r = 0; r < idx.size(); ++r) out.push_back(idx[pick(rng)]);
  }
  return out;
}

MetricWithCI bootstrap_ci(const IndexStatistic& statistic, std::span<const int> strata, int n_iter,
                          double level, std::uint64_t seed, int threads) {
  if (strata.empty()) throw UsageError("bootstrap: empty sample");
  if (n_iter < 1) throw UsageError("bootstrap: n_iter must be positive");
  if (!(level > 0 && level < 1)) throw UsageError("bootstrap: level must lie in (0, 1)");
  std::vector<std::size_t> all(strata.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  MetricWithCI out;
  out.point = statistic(all);
  out.n_bootstrap = n_iter;
  out.level = level;

  constexpr double kUndefined = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> values(static_cast<std::size_t>(n_iter), kUndefined);
  parallel_for(values.size(), threads, [&](std::size_t it) {
    const auto idx = stratified_resample(strata, seed, it);
    try {
      values[it] = statistic(idx);
    } catch (const UndefinedStatistic&) {
      values[it] = kUndefined;
    }
  });
  std::vector<double> defined;
  for (double v : values) {
    if (std::isnan(v)) {
      ++out.undefined_iterations;
    } else {
      defined.push_back(v);
    }
  }
  if (out.undefined_iterations * 5 > n_iter) {
    throw BootstrapError("statistic undefined on " + std::to_string(out.undefined_iterations) +
                         " of " + std::to_string(n_iter) + " bootstrap iterations");
  }
  const double alpha = (1.0 - level) / 2.0;
  out.ci_low = percentile(defined, 100.0 * alpha);
  out.ci_high = percentile(defined, 100.0 * (1.0 - alpha));
  out.contains_point = out.ci_low <= out.point && out.point <= out.ci_high;
  return out;
}

}  // namespace oarsi
