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

#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "oarsi/errors.hpp"
#include "oarsi/metrics.hpp"
#include "oarsi/parallel.hpp"
#include "oarsi/pipeline.hpp"
#include "oarsi/preprocess.hpp"
#include "oarsi/tasks.hpp"
#include "oarsi/training.hpp"

namespace py = pybind11;
using namespace pybind11::literals;
using namespace oarsi;

namespace {

KappaWeighting weighting(const std::string& s) { return kappa_weighting_from_string(s); }

F1Mean f1_mean(const std::string& s) {
  if (s == "harmonic") return F1Mean::kHarmonic;
  if (s == "geometric") return F1Mean::kGeometric;
  throw ConfigError("mean must be harmonic|geometric, got '" + s + "'");
}

py::dict curve_dict(const Curve& c) {
  std::vector<double> x, y, t;
  for (const auto& p : c.points) {
    x.push_back(p.x);
    y.push_back(p.y);
    t.push_back(p.threshold);
  }
  return py::dict("x"_a = x, "y"_a = y, "threshold"_a = t, "area"_a = c.area);
}

py::dict metric_dict(const MetricWithCI& m) {
  return py::dict("point"_a = m.point, "ci_low"_a = m.ci_low, "ci_high"_a = m.ci_high,
                  "n_bootstrap"_a = m.n_bootstrap, "level"_a = m.level,
                  "undefined_iterations"_a = m.undefined_iterations, "contains_point"_a = m.contains_point);
}

RunConfig config_from(const py::object& source) {
  if (source.is_none()) return RunConfig{};
  const auto text = py::module_::import("json").attr("dumps")(source).cast<std::string>();
  return RunConfig::from_json(parse_json(text, "config"));
}

py::object to_py(const Json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

StageContext context(int threads) {
  StageContext ctx;
  ctx.threads = threads > 0 ? threads : worker_threads();
  return ctx;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Multi-task knee radiograph grading core";

  static py::exception<Error> base(m, "OarsiError", PyExc_RuntimeError);
  static py::exception<ConfigError> config_error(m, "ConfigError", base.ptr());
  static py::exception<DataError> data_error(m, "DataError", base.ptr());
  static py::exception<UsageError> usage_error(m, "UsageError", base.ptr());
  static py::exception<UndefinedStatistic> undefined(m, "UndefinedStatistic", base.ptr());
  static py::exception<BootstrapError> bootstrap_error(m, "BootstrapError", base.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ConfigError& e) {
      config_error(e.what());
    } catch (const DataError& e) {
      data_error(e.what());
    } catch (const UsageError& e) {
      usage_error(e.what());
    } catch (const UndefinedStatistic& e) {
      undefined(e.what());
    } catch (const BootstrapError& e) {
      bootstrap_error(e.what());
    } catch (const Error& e) {
      base((e.kind() + ": " + e.what()).c_str());
    }
  });

  std::vector<std::string> names(kTaskNames.begin(), kTaskNames.end());
  m.attr("TASKS") = names;
  m.attr("TASK_CLASSES") = std::vector<int>(kTaskClasses.begin(), kTaskClasses.end());

  m.def(
      "cohen_kappa",
      [](const std::vector<int>& t, const std::vector<int>& p, int k, const std::string& w) {
        return cohen_kappa(t, p, k, weighting(w));
      },
      "y_true"_a, "y_pred"_a, "k"_a, "weighting"_a = "quadratic");
  m.def(
      "balanced_accuracy",
      [](const std::vector<int>& t, const std::vector<int>& p, int k) { return balanced_accuracy(t, p, k); },
      "y_true"_a, "y_pred"_a, "k"_a, "Mean per-class recall over classes present in y_true, in percent.");
  m.def(
      "f1_macro",
      [](const std::vector<int>& t, const std::vector<int>& p, int k, const std::string& mean) {
        return f1_macro(t, p, k, f1_mean(mean));
      },
      "y_true"_a, "y_pred"_a, "k"_a, "mean"_a = "harmonic");
  m.def(
      "mse_grades", [](const std::vector<int>& t, const std::vector<int>& p) { return mse_grades(t, p); },
      "y_true"_a, "y_pred"_a);
  m.def(
      "roc_curve",
      [](const std::vector<double>& s, const std::vector<int>& y) { return curve_dict(roc_curve(s, y)); },
      "scores"_a, "positive"_a);
  m.def(
      "pr_curve", [](const std::vector<double>& s, const std::vector<int>& y) { return curve_dict(pr_curve(s, y)); },
      "scores"_a, "positive"_a);
  m.def(
      "bootstrap_balanced_accuracy",
      [](const std::vector<int>& t, const std::vector<int>& p, int k, int n_iter, double level, std::uint64_t seed,
         int threads) {
        IndexStatistic stat = [&](const std::vector<std::size_t>& idx) {
          std::vector<int> rt, rp;
          for (auto i : idx) {
            rt.push_back(t[i]);
            rp.push_back(p[i]);
          }
          return balanced_accuracy(rt, rp, k);
        };
        return metric_dict(bootstrap_ci(stat, t, n_iter, level, seed, threads));
      },
      "y_true"_a, "y_pred"_a, "k"_a, "n_iter"_a = 100, "level"_a = 0.95, "seed"_a = 0, "threads"_a = 1,
      "Stratified percentile bootstrap of balanced accuracy.");

  m.def("percentile", &percentile, "values"_a, "pct"_a);
  m.def("training_crop_side", &training_crop_side, "side"_a);
  m.def(
      "lr_trace",
      [](const std::string& schedule, int epochs) {
        TrainConfig c;
        c.schedule = schedule_from_string(schedule);
        c.epochs = epochs;
        return lr_trace(c);
      },
      "schedule"_a, "epochs"_a = 20);

  m.def(
      "config_hash", [](const py::object& cfg) { return config_from(cfg).config_hash(); }, "config"_a = py::none());
  m.def(
      "resolved_config", [](const py::object& cfg) { return to_py(config_from(cfg).to_json()); },
      "config"_a = py::none());

  m.def(
      "synth",
      [](const py::object& cfg, const std::filesystem::path& out, int threads) {
        stage_synth(config_from(cfg), out, context(threads));
      },
      "config"_a, "out"_a, "threads"_a = 0);
  m.def(
      "preprocess",
      [](const py::object& cfg, const std::vector<std::filesystem::path>& manifests,
         const std::filesystem::path& out, int threads) {
        stage_preprocess(config_from(cfg), manifests, out, context(threads));
      },
      "config"_a, "manifests"_a, "out"_a, "threads"_a = 0);
  m.def(
      "pretrain",
      [](const py::object& cfg, const std::filesystem::path& out, int threads) {
        stage_pretrain(config_from(cfg), out, context(threads));
      },
      "config"_a, "out"_a, "threads"_a = 0);
  m.def(
      "train",
      [](const py::object& cfg, const std::filesystem::path& manifest, const std::filesystem::path& cache,
         const std::filesystem::path& out, std::optional<std::filesystem::path> pretrained, int parallel_folds) {
        stage_train(config_from(cfg), {manifest, cache, pretrained, parallel_folds}, out, context(1));
      },
      "config"_a, "manifest"_a, "cache"_a, "out"_a, "pretrained"_a = py::none(), "parallel_folds"_a = 1);
  m.def(
      "predict",
      [](const py::object& cfg, const std::filesystem::path& ensemble, const std::filesystem::path& manifest,
         const std::filesystem::path& cache, const std::filesystem::path& out, int threads) {
        stage_predict(config_from(cfg), {ensemble, manifest, cache}, out, context(threads));
      },
      "config"_a, "ensemble"_a, "manifest"_a, "cache"_a, "out"_a, "threads"_a = 0);
  m.def(
      "evaluate",
      [](const py::object& cfg, const std::filesystem::path& predictions, const std::filesystem::path& manifest,
         const std::filesystem::path& out, bool force, int threads) {
        return to_py(stage_evaluate(config_from(cfg), {predictions, manifest, force, ""}, out, context(threads)));
      },
      "config"_a, "predictions"_a, "manifest"_a, "out"_a, "force"_a = false, "threads"_a = 0);
}
