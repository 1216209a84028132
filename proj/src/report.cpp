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

#include "oarsi/report.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "oarsi/errors.hpp"
#include "oarsi/serialize.hpp"
#include "oarsi/tasks.hpp"
#include "oarsi/text.hpp"

namespace oarsi {

namespace fs = std::filesystem;

namespace {

Json number_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

Json metric_json(const MetricWithCI& m) {
  return Json{{"point", number_or_null(m.point)},
              {"ci_low", number_or_null(m.ci_low)},
              {"ci_high", number_or_null(m.ci_high)},
              {"n_bootstrap", m.n_bootstrap},
              {"level", m.level},
              {"undefined_iterations", m.undefined_iterations},
              {"contains_point", m.contains_point}};
}

using PairStatistic = std::function<double(const std::vector<int>&, const std::vector<int>&)>;

// Point estimate plus CI; undefined statistics become null with a note.
Json with_ci(const PairStatistic& stat, const std::vector<int>& y_true, const std::vector<int>& y_pred,
             const ReportOptions& opt) {
  double point = 0;
  try {
    point = stat(y_true, y_pred);
  } catch (const UndefinedStatistic& e) {
    return Json{{"point", nullptr}, {"ci_low", nullptr}, {"ci_high", nullptr}, {"note", e.what()}};
  }
  IndexStatistic on_indices = [&](const std::vector<std::size_t>& idx) {
    std::vector<int> t, p;
    t.reserve(idx.size());
    p.reserve(idx.size());
    for (auto i : idx) {
      t.push_back(y_true[i]);
      p.push_back(y_pred[i]);
    }
    return stat(t, p);
  };
  try {
    return metric_json(bootstrap_ci(on_indices, y_true, opt.n_bootstrap, opt.level, opt.seed, opt.threads));
  } catch (const BootstrapError& e) {
    return Json{{"point", point}, {"ci_low", nullptr}, {"ci_high", nullptr}, {"note", e.what()}};
  }
}

std::string join_ids(const std::vector<std::string>& ids) {
  std::string s;
  const std::size_t shown = std::min<std::size_t>(ids.size(), 10);
  for (std::size_t i = 0; i < shown; ++i) s += (i ? ", " : "") + ids[i];
  if (ids.size() > shown) s += ", ... (" + std::to_string(ids.size()) + " total)";
  return s;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

}  // namespace

std::string confusion_csv(const ConfusionMatrix& cm) {
  std::ostringstream os;
  os << "kind,true_grade";
  for (int p = 0; p < cm.k; ++p) os << ",pred_" << p;
  os << '\n';
  for (int t = 0; t < cm.k; ++t) {
    os << "count," << t;
    for (int p = 0; p < cm.k; ++p) os << ',' << cm.at(t, p);
    os << '\n';
  }
  const auto pct = cm.row_percentages();
  for (int t = 0; t < cm.k; ++t) {
    os << "row_percent," << t;
    for (int p = 0; p < cm.k; ++p) os << ',' << format_fixed(pct[static_cast<std::size_t>(t * cm.k + p)], 4);
    os << '\n';
  }
  return os.str();
}

std::string curve_csv(const Curve& curve, CurveKind kind) {
  std::ostringstream os;
  os << (kind == CurveKind::kRoc ? "threshold,fpr,tpr\n" : "threshold,recall,precision\n");
  for (const auto& p : curve.points) {
    os << format_double(p.threshold) << ',' << format_double(p.x) << ',' << format_double(p.y) << '\n';
  }
  return os.str();
}

std::string curve_svg(const Curve& curve, CurveKind kind, const std::string& title) {
  constexpr double kSize = 320, kMargin = 48;
  auto px = [&](double x) { return format_fixed(kMargin + x * kSize, 2); };
  auto py = [&](double y) { return format_fixed(kMargin + (1 - y) * kSize, 2); };
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kSize + 2 * kMargin << "\" height=\""
     << kSize + 2 * kMargin << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect x=\"" << kMargin << "\" y=\"" << kMargin << "\" width=\"" << kSize << "\" height=\"" << kSize
     << "\" fill=\"none\" stroke=\"#444\"/>\n";
  if (kind == CurveKind::kRoc) {
    os << "<line x1=\"" << px(0) << "\" y1=\"" << py(0) << "\" x2=\"" << px(1) << "\" y2=\"" << py(1)
       << "\" stroke=\"#bbb\" stroke-dasharray=\"4 4\"/>\n";
  }
  os << "<polyline fill=\"none\" stroke=\"#1f5fa8\" stroke-width=\"2\" points=\"";
  for (std::size_t i = 0; i < curve.points.size(); ++i) {
    os << (i ? " " : "") << px(curve.points[i].x) << ',' << py(curve.points[i].y);
  }
  os << "\"/>\n";
  os << "<text x=\"" << kMargin << "\" y=\"" << kMargin - 16 << "\">" << xml_escape(title) << " ("
     << (kind == CurveKind::kRoc ? "AUC " : "AP ") << format_fixed(curve.area, 3) << ")</text>\n";
  os << "<text x=\"" << kMargin + kSize / 2 << "\" y=\"" << kSize + kMargin + 32 << "\" text-anchor=\"middle\">"
     << (kind == CurveKind::kRoc ? "false positive rate" : "recall") << "</text>\n";
  os << "<text x=\"14\" y=\"" << kMargin + kSize / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
     << kMargin + kSize / 2 << ")\">" << (kind == CurveKind::kRoc ? "true positive rate" : "precision")
     << "</text>\n";
  for (double t : {0.0, 0.5, 1.0}) {
    os << "<text x=\"" << px(t) << "\" y=\"" << kSize + kMargin + 16 << "\" text-anchor=\"middle\">"
       << format_fixed(t, 1) << "</text>\n";
    os << "<text x=\"" << kMargin - 6 << "\" y=\"" << py(t) << "\" text-anchor=\"end\">" << format_fixed(t, 1)
       << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string confusion_svg(const ConfusionMatrix& cm, const std::string& title) {
  constexpr double kCell = 56, kMargin = 56;
  const double side = kCell * cm.k;
  const auto pct = cm.row_percentages();
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << side + 2 * kMargin << "\" height=\""
     << side + 2 * kMargin << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<text x=\"" << kMargin << "\" y=\"24\">" << xml_escape(title) << " (row %)</text>\n";
  for (int t = 0; t < cm.k; ++t) {
    for (int p = 0; p < cm.k; ++p) {
      const double v = pct[static_cast<std::size_t>(t * cm.k + p)];
      const int shade = 255 - static_cast<int>(std::lround(v * 2.0));
      const double x = kMargin + p * kCell, y = kMargin + t * kCell;
      os << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << kCell << "\" height=\"" << kCell
         << "\" fill=\"rgb(" << shade << "," << shade << ",255)\" stroke=\"#fff\"/>\n";
      os << "<text x=\"" << x + kCell / 2 << "\" y=\"" << y + kCell / 2 + 4 << "\" text-anchor=\"middle\">"
         << format_fixed(v, 1) << "</text>\n";
    }
    os << "<text x=\"" << kMargin - 8 << "\" y=\"" << kMargin + t * kCell + kCell / 2 + 4
       << "\" text-anchor=\"end\">" << t << "</text>\n";
    os << "<text x=\"" << kMargin + t * kCell + kCell / 2 << "\" y=\"" << kMargin - 6
       << "\" text-anchor=\"middle\">" << t << "</text>\n";
  }
  os << "<text x=\"" << kMargin + side / 2 << "\" y=\"" << side + kMargin + 24
     << "\" text-anchor=\"middle\">predicted grade (columns), true grade (rows)</text>\n";
  os << "</svg>\n";
  return os.str();
}

Json emit_report(const PredictionTable& predictions, const std::vector<GradedExam>& labels,
                 const fs::path& out_dir, const ReportOptions& opt) {
  if (predictions.exam_ids.size() != predictions.rows.size()) {
    throw UsageError("prediction table has mismatched id and row counts");
  }
  std::map<std::string, std::size_t> pred_index;
  for (std::size_t i = 0; i < predictions.exam_ids.size(); ++i) {
    if (!pred_index.emplace(predictions.exam_ids[i], i).second) {
      throw DataError("duplicate prediction for exam " + predictions.exam_ids[i]);
    }
  }
  std::vector<std::string> missing, unexpected;
  std::set<std::string> label_ids;
  for (const auto& e : labels) {
    label_ids.insert(e.exam_id);
    if (!pred_index.count(e.exam_id)) missing.push_back(e.exam_id);
  }
  for (const auto& id : predictions.exam_ids)
    if (!label_ids.count(id)) unexpected.push_back(id);
  if (!missing.empty() || !unexpected.empty()) {
    std::string msg = "predictions and manifest disagree:";
    if (!missing.empty()) msg += " no prediction for [" + join_ids(missing) + "]";
    if (!unexpected.empty()) msg += " not in manifest [" + join_ids(unexpected) + "]";
    throw DataError(msg);
  }
  if (labels.empty()) throw DataError("report over an empty manifest");

  fs::create_directories(out_dir);
  Json tasks = Json::object();
  for (std::size_t h = 0; h < predictions.heads.size(); ++h) {
    const auto& head = predictions.heads[h];
    const auto task = task_index(head.task);
    if (!task) throw DataError("prediction column for unknown task " + head.task);
    if (head.classes != kTaskClasses[*task]) {
      throw DataError(head.task + " predictions have " + std::to_string(head.classes) + " classes, expected " +
                      std::to_string(kTaskClasses[*task]));
    }
    std::vector<int> y_true, y_pred;
    std::vector<std::vector<double>> probs;
    for (const auto& e : labels) {
      if (!e.grades[*task]) throw DataError("exam " + e.exam_id + " has no " + head.task + " label");
      const auto& p = predictions.rows[pred_index.at(e.exam_id)][h];
      y_true.push_back(*e.grades[*task]);
      y_pred.push_back(p.grade);
      probs.push_back(p.probabilities);
    }
    const int k = head.classes;
    Json tj;
    tj["n"] = y_true.size();
    tj["classes"] = k;
    tj["kappa"] = with_ci([&](const auto& t, const auto& p) { return cohen_kappa(t, p, k, opt.kappa); },
                          y_true, y_pred, opt);
    tj["balanced_accuracy"] = with_ci([&](const auto& t, const auto& p) { return balanced_accuracy(t, p, k); },
                                      y_true, y_pred, opt);
    tj["f1"] = with_ci([&](const auto& t, const auto& p) { return f1_macro(t, p, k, opt.f1); }, y_true, y_pred,
                       opt);
    tj["mse"] = with_ci([](const auto& t, const auto& p) { return mse_grades(t, p); }, y_true, y_pred, opt);

    const auto cm = confusion_matrix(y_true, y_pred, k);
    write_file_atomic(out_dir / ("confusion_" + head.task + ".csv"), confusion_csv(cm));
    if (opt.plots) write_file_atomic(out_dir / ("confusion_" + head.task + ".svg"), confusion_svg(cm, head.task));

    tj["positive_threshold"] = positive_threshold(*task);
    for (auto kind : {CurveKind::kRoc, CurveKind::kPr}) {
      const std::string name = kind == CurveKind::kRoc ? "roc" : "pr";
      const std::string key = kind == CurveKind::kRoc ? "roc_auc" : "average_precision";
      try {
        const auto curve = binarize_and_curve(probs, y_true, *task, kind);
        tj[key] = curve.area;
        write_file_atomic(out_dir / (name + "_" + head.task + ".csv"), curve_csv(curve, kind));
        if (opt.plots) {
          write_file_atomic(out_dir / (name + "_" + head.task + ".svg"),
                            curve_svg(curve, kind, head.task + " >= " + std::to_string(positive_threshold(*task))));
        }
      } catch (const UndefinedStatistic& e) {
        tj[key] = nullptr;
        tj[key + "_note"] = e.what();
      }
    }
    tasks[head.task] = tj;
  }

  Json doc;
  if (!opt.timestamp.empty()) doc[kTimestampField] = opt.timestamp;
  doc["n_exams"] = labels.size();
  doc["kappa_weighting"] = to_string(opt.kappa);
  doc["f1_mean"] = opt.f1 == F1Mean::kHarmonic ? "harmonic" : "geometric";
  doc["bootstrap"] = Json{{"iterations", opt.n_bootstrap}, {"level", opt.level}, {"seed", opt.seed},
                          {"stratified_by", "true grade"}};
  doc["provenance"] = opt.provenance;
  doc["tasks"] = tasks;
  write_file_atomic(out_dir / "metrics.json", doc.dump(2) + "\n");
  return doc;
}

}  // namespace oarsi
