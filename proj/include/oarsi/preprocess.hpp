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

// Radiograph preprocessing: PGM/landmark I/O, mirroring, plateau alignment,
// ROI crop, bilinear resize, percentile clipping with global contrast
// normalization, and the training augmentations.
//
// Pixel coordinates put pixel centers on integers: pixel (i, j) covers
// [i-0.5, i+0.5] x [j-0.5, j+0.5]; x grows right, y grows down.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "oarsi/json_util.hpp"
#include "oarsi/rng.hpp"

namespace oarsi {

enum class Side { kLeft, kRight };

std::string to_string(Side side);
Side side_from_string(const std::string& s);

struct Point {
  double x = 0;
  double y = 0;
};

/// Grayscale image. Intensities are kept as float in the 16-bit range so
/// resampling does not quantize; they are rounded only when written.
struct RawImage {
  int width = 0;
  int height = 0;
  double spacing_mm = 1.0;
  std::vector<float> pixels;  // row-major, height x width

  RawImage() = default;
  RawImage(int w, int h, double spacing, float fill = 0.0f);

  float& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  float at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  /// Bilinear sample; positions outside the pixel-center hull read as 0.
  double sample(double x, double y) const;
  bool contains(const Point& p) const;
  void validate() const;
};

/// Reads a binary PGM (P5). Both 8-bit and 16-bit big-endian maxvals are
/// accepted; spacing is not part of the format and is set to `spacing_mm`.
RawImage read_pgm(const std::filesystem::path& path, double spacing_mm = 1.0);
/// Writes a 16-bit P5 (maxval 65535), rounding and clamping intensities.
void write_pgm(const std::filesystem::path& path, const RawImage& image);
std::string encode_pgm(const RawImage& image);
RawImage decode_pgm(const std::string& bytes, double spacing_mm, const std::string& context);

/// Tibial plateau endpoints are named by image side: `tibial_plateau_left`
/// is the endpoint with the smaller x.
struct LandmarkSet {
  Point knee_center;
  Point tibial_plateau_left;
  Point tibial_plateau_right;
  Side side = Side::kRight;

  /// Throws GeometryError on coincident plateau points or points outside.
  void validate(const RawImage& image) const;
};

/// Landmark documents are JSON objects keyed by exam id:
/// {"<exam_id>": {"side": "R", "knee_center": [x, y],
///                "tibial_plateau_left": [x, y], "tibial_plateau_right": [x, y]}}
Json landmarks_to_json(const std::string& exam_id, const LandmarkSet& lm);
LandmarkSet landmarks_from_json(const Json& doc, const std::string& exam_id);
LandmarkSet read_landmarks(const std::filesystem::path& path, const std::string& exam_id);
void write_landmarks(const std::filesystem::path& path, const std::string& exam_id,
                     const LandmarkSet& lm);

/// Mirrors about the vertical center line; plateau endpoint names are
/// swapped so `left` keeps the smaller x.
RawImage mirror_horizontal(const RawImage& image);
Point mirror_point(const Point& p, int width);
LandmarkSet mirror_landmarks(const LandmarkSet& lm, int width);

/// Rotates `p` about `center` by `degrees` (positive turns +x toward +y).
Point rotate_point(const Point& p, const Point& center, double degrees);

/// Rotates `image` about `center` by `degrees` with bilinear resampling.
/// Output has the input's extents; samples from outside read as 0.
RawImage rotate_image(const RawImage& image, const Point& center, double degrees);

struct AlignResult {
  RawImage image;
  double angle_degrees = 0;  // orientation of the plateau line in the input
  LandmarkSet landmarks;     // landmarks after rotation
};

/// Rotates about the knee center so the two plateau points share a row.
AlignResult rotate_align(const RawImage& image, const LandmarkSet& lm);

struct CropInfo {
  int x0 = 0;  // top-left corner in source pixels (may be negative)
  int y0 = 0;
  int side = 0;
  bool padded = false;  // part of the crop fell outside the source
};

/// Side length in pixels of a `size_mm` crop: round(size_mm / spacing).
int crop_side_px(double size_mm, double spacing_mm);

/// Square crop of crop_side_px(size_mm, spacing) centered on `center`;
/// outside pixels are zero and flagged.
RawImage crop_roi(const RawImage& image, const Point& center, double size_mm,
                  CropInfo* info = nullptr);

/// Corner-aligned bilinear resize to target x target: output pixel i reads
/// the source at i * (n_in - 1) / (n_out - 1), so the first and last
/// pixel centers coincide and a same-size resize is the identity. A target
/// of 1 samples the source center. Spacing scales by n_in / n_out.
RawImage resize_bilinear(const RawImage& image, int target_side);

/// Linear-interpolated percentile of `values` (rank (n-1) * pct / 100).
double percentile(std::vector<double> values, double pct);

struct Provenance {
  std::string source_id;
  bool mirrored = false;
  double rotation_degrees = 0;
  CropInfo crop;
  int target_side = 0;
  double clip_low_value = 0;
  double clip_high_value = 0;

  Json to_json() const;
  static Provenance from_json(const Json& j);
};

/// Square image after contrast normalization. `unit` holds the clipped and
/// linearly rescaled [0,1] grid; the network input is its standardized form.
struct NormalizedImage {
  int width = 0;
  int height = 0;
  std::vector<float> unit;
  Provenance provenance;

  int side() const { return width; }
  /// Global standardization of `unit` to mean 0 and (population) std 1.
  /// Throws NormalizationError when the grid is constant.
  std::vector<float> standardized() const;
};

/// Standardizes a buffer in place in double precision; throws
/// NormalizationError for zero variance.
void standardize(std::vector<float>& values, const std::string& context);

/// Clips to the [low, high] percentile range and maps linearly to [0,1].
NormalizedImage normalize(const RawImage& image, double clip_low_pct, double clip_high_pct);

struct PreprocessParams {
  double roi_mm = 140.0;
  int target_side = 64;
  double clip_low_pct = 1.0;
  double clip_high_pct = 99.0;

  void validate() const;
  Json to_json() const;
  static PreprocessParams from_json(const Json& j);
};

/// Full deterministic pipeline: mirror left knees, align the plateau, crop
/// the ROI about the knee center, resize, normalize.
NormalizedImage preprocess(const RawImage& image, const LandmarkSet& lm,
                           const PreprocessParams& params, const std::string& source_id = "");

struct AugmentParams {
  int crop_side = 0;             // 0 = full side
  double noise_sigma = 0.0;      // in the [0,1] domain
  double gamma_low = 1.0;
  double gamma_high = 1.0;

  void validate() const;
  Json to_json() const;
};

/// Crop side at desk resolution keeping the 300/310 training-crop ratio.
int training_crop_side(int side);

/// Random crop, additive Gaussian noise (result clamped to [0,1]) and gamma
/// correction u^gamma, all in the [0,1] domain, in that order. Returns the
/// standardized network input of side `crop_side`.
std::vector<float> augment(const NormalizedImage& image, const AugmentParams& params, Rng& rng);

/// Centered crop of the unit grid followed by standardization: the
/// evaluation-time counterpart of `augment`.
std::vector<float> center_crop_standardized(const NormalizedImage& image, int crop_side);

}  // namespace oarsi
