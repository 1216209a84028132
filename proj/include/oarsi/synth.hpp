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

// Synthetic knee radiographs whose appearance encodes the six OARSI
// feature grades, plus the auxiliary task used for proxy pretraining.
//
// Scene layout (right-knee orientation, lateral compartment on the image
// left, y down, units of pixels relative to the knee center):
//   tibia:  |u| <= half_width, v >= tibia_top
//   femur:  |u| <= half_width, v <= tibia_top - gap(u), where gap is
//           g0 * (1 - JSN/4) of the compartment containing u; a notch at
//           |u| < notch_half_width lifts the femur further
//   osteophytes: discs of radius r1 * grade at the four outer joint corners
// Left knees are the mirror image. The whole scene is rotated about the
// knee center by a random angle before sampling.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "oarsi/dataset.hpp"
#include "oarsi/preprocess.hpp"

namespace oarsi {

/// KL from the six OARSI grades: 4 if any JSN is 3, 3 if any JSN is 2,
/// 2 if any osteophyte is >= 2 (JSN both < 2), 1 if any feature is 1,
/// 0 if all are 0.
int derive_kl(const Grades& g);

/// Skewed draw: latent severity with P = [.30,.20,.20,.15,.15], then each
/// feature independently from a severity-dependent grade distribution.
Grades sample_grades(Rng& rng);

/// Follow-up progression: each feature advances by one with P = 0.3.
Grades progress_grades(const Grades& g, Rng& rng);

struct RenderParams {
  int image_side = 128;
  double roi_fraction = 0.78;  // 140 mm ROI as a fraction of the side
  double noise_sigma = 0.03;   // in the [0,1] intensity domain
  double max_rotation_deg = 12.0;
  double max_center_jitter = 0.02;  // fraction of the side

  double roi_px() const { return roi_fraction * image_side; }
  double spacing_mm() const { return 140.0 / roi_px(); }
};

struct SceneGeometry {
  double roi_px = 0;
  double half_width = 0;
  double g0 = 0;
  double tibia_top = 0;
  double notch_half_width = 0;
  double r1 = 0;
  double edge_decay = 0;

  static SceneGeometry from(const RenderParams& p);
  double gap(double u, const Grades& g) const;
};

inline constexpr double kIntensityScale = 60000.0;

struct RenderedKnee {
  RawImage image;
  LandmarkSet landmarks;
  double rotation_deg = 0;
  Point center;
};

/// Renders one knee. Uses the rng for jitter, rotation and noise, in that
/// order. `grades` must hold all six OARSI features.
RenderedKnee render_knee(const Grades& grades, Side side, const RenderParams& params, Rng& rng);

/// Noise-free scene intensity in [0,1] at scene coordinates (u, v).
double scene_intensity(double u, double v, const Grades& g, const SceneGeometry& geo);

struct SynthParams {
  int subjects = 50;
  int test_subjects = 0;
  int exams_per_subject = 2;  // alternating R/L knees, then 12-month follow-ups
  std::uint64_t seed = 0;
  RenderParams render;

  void validate() const;
  Json to_json() const;
  static SynthParams from_json(const Json& j);
};

struct SynthResult {
  std::vector<GradedExam> train;
  std::vector<GradedExam> test;
};

/// Writes images/<exam>.pgm, landmarks/<exam>.json, manifest.csv and, when
/// test_subjects > 0, test_manifest.csv under out_dir.
SynthResult synth_generate(const SynthParams& params, const std::filesystem::path& out_dir,
                           int threads = 1);

/// Auxiliary label for proxy pretraining: number of nonzero osteophytes.
int proxy_label(const Grades& g);
inline constexpr int kProxyClasses = 5;

struct ProxySample {
  RawImage image;
  LandmarkSet landmarks;
  int label = 0;
};

/// In-memory proxy samples with features drawn uniformly per grade.
std::vector<ProxySample> proxy_samples(int count, const RenderParams& params, std::uint64_t seed,
                                       int threads = 1);

}  // namespace oarsi
