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

#include "oarsi/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "oarsi/errors.hpp"
#include "oarsi/parallel.hpp"
#include "oarsi/serialize.hpp"

namespace oarsi {

namespace fs = std::filesystem;

int derive_kl(const Grades& g) {
  int max_jsn = 0, max_ost = 0;
  for (std::size_t t = 1; t < kNumTasks; ++t) {
    if (!g[t]) throw DataError("KL derivation needs all six OARSI grades");
    if (t == kJSN_L || t == kJSN_M) {
      max_jsn = std::max(max_jsn, *g[t]);
    } else {
      max_ost = std::max(max_ost, *g[t]);
    }
  }
  if (max_jsn == 3) return 4;
  if (max_jsn == 2) return 3;
  if (max_ost >= 2) return 2;
  if (max_ost == 1 || max_jsn == 1) return 1;
  return 0;
}

namespace {

constexpr double kSeverity[5] = {0.30, 0.20, 0.20, 0.15, 0.15};
constexpr double kGradeGivenSeverity[5][4] = {
    {1.00, 0.00, 0.00, 0.00},
    {0.50, 0.40, 0.10, 0.00},
    {0.30, 0.35, 0.25, 0.10},
    {0.15, 0.30, 0.30, 0.25},
    {0.05, 0.20, 0.35, 0.40},
};

template <std::size_t N>
int draw(const double (&p)[N], Rng& rng) {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double acc = 0;
  for (std::size_t i = 0; i < N; ++i) {
    acc += p[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(N - 1);
}

}  // namespace

Grades sample_grades(Rng& rng) {
  const int s = draw(kSeverity, rng);
  Grades g;
  for (std::size_t t = 1; t < kNumTasks; ++t) g[t] = draw(kGradeGivenSeverity[s], rng);
  g[kKL] = derive_kl(g);
  return g;
}

Grades progress_grades(const Grades& g, Rng& rng) {
  Grades out = g;
  std::bernoulli_distribution step(0.3);
  for (std::size_t t = 1; t < kNumTasks; ++t) out[t] = std::min(3, g[t].value() + (step(rng) ? 1 : 0));
  out[kKL] = derive_kl(out);
  return out;
}

// ---------------------------------------------------------------------------
// rendering

SceneGeometry SceneGeometry::from(const RenderParams& p) {
  SceneGeometry g;
  g.roi_px = p.roi_px();
  g.half_width = 0.35 * g.roi_px;
  g.g0 = 0.22 * g.roi_px;
  g.tibia_top = 0.5 * g.g0;
  g.notch_half_width = 0.05 * g.roi_px;
  g.r1 = 0.045 * g.roi_px;
  g.edge_decay = 0.03 * g.roi_px;
  return g;
}

double SceneGeometry::gap(double u, const Grades& g) const {
  const int jsn = u < 0 ? g[kJSN_L].value() : g[kJSN_M].value();
  return g0 * (1.0 - jsn / 4.0);
}

double scene_intensity(double u, double v, const Grades& g, const SceneGeometry& geo) {
  double val = 0.12 + 0.06 * (v / geo.roi_px + 0.5);
  const double hw = geo.half_width, tt = geo.tibia_top;
  if (std::abs(u) <= hw) {
    if (v >= tt) {
      val = 0.55 + 0.3 * std::exp(-(v - tt) / geo.edge_decay);
    } else {
      double bottom = tt - geo.gap(u, g);
      if (std::abs(u) < geo.notch_half_width) bottom -= 0.08 * geo.roi_px;
      if (v <= bottom) val = 0.55 + 0.3 * std::exp(-(bottom - v) / geo.edge_decay);
    }
  }
  // Corners: (task, horizontal direction, on femur?)
  struct Corner {
    TaskId task;
    double dir;
    bool femoral;
  };
  static constexpr Corner kCorners[] = {{kFO_L, -1, true},
                                        {kTO_L, -1, false},
                                        {kFO_M, +1, true},
                                        {kTO_M, +1, false}};
  for (const auto& c : kCorners) {
    const int grade = g[c.task].value();
    if (grade == 0) continue;
    const double r = geo.r1 * grade;
    const double cx = c.dir * hw + c.dir * 0.35 * r;
    const double cy = c.femoral ? tt - geo.gap(c.dir * hw, g) : tt;
    const double du = u - cx, dv = v - cy;
    if (du * du + dv * dv <= r * r) val = std::max(val, 0.8);
  }
  return val;
}

RenderedKnee render_knee(const Grades& grades, Side side, const RenderParams& params, Rng& rng) {
  for (std::size_t t = 1; t < kNumTasks; ++t) {
    if (!grades[t] || *grades[t] < 0 || *grades[t] > 3) {
      throw DataError("render_knee needs six OARSI grades in 0..3");
    }
  }
  const auto geo = SceneGeometry::from(params);
  const int n = params.image_side;
  const double jitter = params.max_center_jitter * n;
  std::uniform_real_distribution<double> uj(-jitter, jitter);
  const double jx = jitter > 0 ? uj(rng) : 0.0;
  const double jy = jitter > 0 ? uj(rng) : 0.0;
  const double rot = params.max_rotation_deg > 0
                         ? std::uniform_real_distribution<double>(-params.max_rotation_deg,
                                                                  params.max_rotation_deg)(rng)
                         : 0.0;
  RenderedKnee out;
  out.center = {(n - 1) / 2.0 + jx, (n - 1) / 2.0 + jy};
  out.rotation_deg = rot;
  out.image = RawImage(n, n, params.spacing_mm());
  const double a = rot * std::numbers::pi / 180.0;
  const double c = std::cos(a), s = std::sin(a);
  const double mirror = side == Side::kLeft ? -1.0 : 1.0;
  std::normal_distribution<double> noise(0.0, params.noise_sigma);
  static constexpr double kOffsets[2] = {-0.25, 0.25};
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      double acc = 0;
      for (double oy : kOffsets) {
        for (double ox : kOffsets) {
          const double dx = x + ox - out.center.x, dy = y + oy - out.center.y;
          // Scene coordinates: undo the rotation, then the mirror.
          const double u = (c * dx + s * dy) * mirror;
          const double v = -s * dx + c * dy;
          acc += scene_intensity(u, v, grades, geo);
        }
      }
      double val = acc / 4.0;
      if (params.noise_sigma > 0) val += noise(rng);
      out.image.at(x, y) = static_cast<float>(std::clamp(val, 0.0, 1.0) * kIntensityScale);
    }
  }
  auto to_image = [&](double u, double v) {
    u *= mirror;
    return Point{out.center.x + c * u - s * v, out.center.y + s * u + c * v};
  };
  Point p1 = to_image(-geo.half_width, geo.tibia_top);
  Point p2 = to_image(geo.half_width, geo.tibia_top);
  if (p1.x > p2.x) std::swap(p1, p2);
  out.landmarks = {out.center, p1, p2, side};
  return out;
}

// ---------------------------------------------------------------------------
// dataset generation

void SynthParams::validate() const {
  if (subjects < 1) throw ConfigError("synth.subjects must be >= 1");
  if (test_subjects < 0) throw ConfigError("synth.test_subjects must be >= 0");
  if (exams_per_subject < 1) throw ConfigError("synth.exams_per_subject must be >= 1");
  if (render.image_side < 16) throw ConfigError("synth.image_side must be >= 16");
  if (!(render.roi_fraction > 0 && render.roi_fraction <= 1)) {
    throw ConfigError("synth.roi_fraction must lie in (0,1]");
  }
  if (!(render.noise_sigma >= 0)) throw ConfigError("synth.noise_sigma must be >= 0");
}

Json SynthParams::to_json() const {
  return {{"subjects", subjects},
          {"test_subjects", test_subjects},
          {"exams_per_subject", exams_per_subject},
          {"seed", seed},
          {"image_side", render.image_side},
          {"roi_fraction", render.roi_fraction},
          {"noise_sigma", render.noise_sigma},
          {"max_rotation_deg", render.max_rotation_deg},
          {"max_center_jitter", render.max_center_jitter}};
}

SynthParams SynthParams::from_json(const Json& j) {
  const std::string ctx = "synth";
  reject_unknown_keys(j,
                      {"subjects", "test_subjects", "exams_per_subject", "seed", "image_side", "roi_fraction",
                       "noise_sigma", "max_rotation_deg", "max_center_jitter"},
                      ctx);
  SynthParams p;
  read_opt(j, "subjects", p.subjects, ctx);
  read_opt(j, "test_subjects", p.test_subjects, ctx);
  read_opt(j, "exams_per_subject", p.exams_per_subject, ctx);
  read_opt(j, "seed", p.seed, ctx);
  read_opt(j, "image_side", p.render.image_side, ctx);
  read_opt(j, "roi_fraction", p.render.roi_fraction, ctx);
  read_opt(j, "noise_sigma", p.render.noise_sigma, ctx);
  read_opt(j, "max_rotation_deg", p.render.max_rotation_deg, ctx);
  read_opt(j, "max_center_jitter", p.render.max_center_jitter, ctx);
  p.validate();
  return p;
}

namespace {

std::string id_for(char prefix, int number) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%c%04d", prefix, number);
  return buf;
}

struct PlannedExam {
  GradedExam exam;
  int subject_index = 0;
  int exam_index = 0;
  bool test = false;
};

}  // namespace

SynthResult synth_generate(const SynthParams& params, const fs::path& out_dir, int threads) {
  params.validate();
  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  if (!ec) fs::create_directories(out_dir / "landmarks", ec);
  if (ec) throw IoError("cannot create output directory " + out_dir.string() + ": " + ec.message());

  std::vector<PlannedExam> plan;
  const int total = params.subjects + params.test_subjects;
  for (int s = 0; s < total; ++s) {
    const bool test = s >= params.subjects;
    const std::string subject = id_for(test ? 'T' : 'S', test ? s - params.subjects : s);
    Grades current[2];
    Rng side_rng[2] = {Rng(derive_seed(params.seed, 1, static_cast<std::uint64_t>(s), 0)),
                       Rng(derive_seed(params.seed, 1, static_cast<std::uint64_t>(s), 1))};
    for (int i = 0; i < params.exams_per_subject; ++i) {
      const int k = i % 2;
      const int visit = i / 2;
      current[k] = visit == 0 ? sample_grades(side_rng[k]) : progress_grades(current[k], side_rng[k]);
      PlannedExam p;
      p.subject_index = s;
      p.exam_index = i;
      p.test = test;
      auto& e = p.exam;
      e.subject_id = subject;
      e.side = k == 0 ? Side::kRight : Side::kLeft;
      e.follow_up_months = visit * 12;
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%s_%s_%02d", subject.c_str(), to_string(e.side).c_str(),
                    e.follow_up_months);
      e.exam_id = buf;
      e.image_path = "images/" + e.exam_id + ".pgm";
      e.landmark_path = "landmarks/" + e.exam_id + ".json";
      e.spacing_mm = params.render.spacing_mm();
      e.grades = current[k];
      plan.push_back(std::move(p));
    }
  }

  parallel_for(plan.size(), threads, [&](std::size_t i) {
    const auto& p = plan[i];
    Rng rng(derive_seed(params.seed, 2, static_cast<std::uint64_t>(p.subject_index),
                        static_cast<std::uint64_t>(p.exam_index)));
    auto knee = render_knee(p.exam.grades, p.exam.side, params.render, rng);
    write_pgm(out_dir / p.exam.image_path, knee.image);
    write_landmarks(out_dir / p.exam.landmark_path, p.exam.exam_id, knee.landmarks);
  });

  SynthResult result;
  for (auto& p : plan) (p.test ? result.test : result.train).push_back(std::move(p.exam));
  write_manifest(out_dir / "manifest.csv", result.train);
  if (params.test_subjects > 0) write_manifest(out_dir / "test_manifest.csv", result.test);
  return result;
}

int proxy_label(const Grades& g) {
  int n = 0;
  for (auto t : {kFO_L, kFO_M, kTO_L, kTO_M}) n += g[t].value() > 0 ? 1 : 0;
  return n;
}

std::vector<ProxySample> proxy_samples(int count, const RenderParams& params, std::uint64_t seed,
                                       int threads) {
  if (count < 1) throw ConfigError("proxy sample count must be >= 1");
  std::vector<ProxySample> out(static_cast<std::size_t>(count));
  parallel_for(out.size(), threads, [&](std::size_t i) {
    Rng rng(derive_seed(seed, 3, i));
    std::uniform_int_distribution<int> grade(0, 3);
    Grades g;
    for (std::size_t t = 1; t < kNumTasks; ++t) g[t] = grade(rng);
    g[kKL] = derive_kl(g);
    const Side side = std::bernoulli_distribution(0.5)(rng) ? Side::kLeft : Side::kRight;
    auto knee = render_knee(g, side, params, rng);
    out[i] = {std::move(knee.image), knee.landmarks, proxy_label(g)};
  });
  return out;
}

}  // namespace oarsi
