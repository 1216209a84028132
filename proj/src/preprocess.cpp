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

#include "oarsi/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "oarsi/errors.hpp"
#include "oarsi/serialize.hpp"

namespace oarsi {

namespace {

std::string fmt_point(const Point& p) {
  std::ostringstream os;
  os << "(" << p.x << ", " << p.y << ")";
  return os.str();
}

constexpr double kDeg = std::numbers::pi / 180.0;

}  // namespace

std::string to_string(Side side) { return side == Side::kLeft ? "L" : "R"; }

Side side_from_string(const std::string& s) {
  if (s == "L") return Side::kLeft;
  if (s == "R") return Side::kRight;
  throw DataError("side must be L or R, got '" + s + "'");
}

// ---------------------------------------------------------------------------
// RawImage

RawImage::RawImage(int w, int h, double spacing, float fill)
    : width(w), height(h), spacing_mm(spacing) {
  validate();
  pixels.assign(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill);
}

void RawImage::validate() const {
  if (width < 1 || height < 1) {
    throw DataError("image extents must be >= 1, got " + std::to_string(width) + "x" +
                    std::to_string(height));
  }
  if (!(spacing_mm > 0) || !std::isfinite(spacing_mm)) {
    throw DataError("pixel spacing must be positive, got " + std::to_string(spacing_mm));
  }
}

double RawImage::sample(double x, double y) const {
  constexpr double kSlack = 1e-9;
  if (x < -kSlack || y < -kSlack || x > width - 1 + kSlack || y > height - 1 + kSlack) return 0.0;
  x = std::clamp(x, 0.0, static_cast<double>(width - 1));
  y = std::clamp(y, 0.0, static_cast<double>(height - 1));
  const int x0 = std::min(static_cast<int>(x), width - 1);
  const int y0 = std::min(static_cast<int>(y), height - 1);
  const int x1 = std::min(x0 + 1, width - 1);
  const int y1 = std::min(y0 + 1, height - 1);
  const double fx = x - x0, fy = y - y0;
  const double top = at(x0, y0) * (1 - fx) + at(x1, y0) * fx;
  const double bottom = at(x0, y1) * (1 - fx) + at(x1, y1) * fx;
  return top * (1 - fy) + bottom * fy;
}

bool RawImage::contains(const Point& p) const {
  return p.x >= -0.5 && p.y >= -0.5 && p.x <= width - 0.5 && p.y <= height - 0.5;
}

// ---------------------------------------------------------------------------
// PGM

std::string encode_pgm(const RawImage& image) {
  image.validate();
  std::string out = "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) +
                    "\n65535\n";
  out.reserve(out.size() + image.pixels.size() * 2);
  for (float v : image.pixels) {
    const auto q = static_cast<std::uint16_t>(std::clamp(std::lround(v), 0L, 65535L));
    out.push_back(static_cast<char>(q >> 8));
    out.push_back(static_cast<char>(q & 0xff));
  }
  return out;
}

RawImage decode_pgm(const std::string& bytes, double spacing_mm, const std::string& context) {
  std::size_t pos = 0;
  auto fail = [&](const std::string& what) { throw ParseError(context + ": " + what); };
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&](const char* what) {
    skip_space();
    long v = 0;
    std::size_t start = pos;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + (bytes[pos] - '0');
      if (v > 1'000'000) fail(std::string(what) + " too large");
      ++pos;
    }
    if (pos == start) fail(std::string("missing ") + what);
    return static_cast<int>(v);
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') fail("not a binary PGM (P5)");
  pos = 2;
  const int w = read_int("width");
  const int h = read_int("height");
  const int maxval = read_int("maxval");
  if (w < 1 || h < 1) fail("image extents must be >= 1");
  if (maxval < 1 || maxval > 65535) fail("maxval out of range");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    fail("missing whitespace after header");
  }
  ++pos;
  const std::size_t bpp = maxval > 255 ? 2 : 1;
  const std::size_t n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  if (bytes.size() - pos != n * bpp) {
    fail("expected " + std::to_string(n * bpp) + " pixel bytes, found " +
         std::to_string(bytes.size() - pos));
  }
  RawImage img(w, h, spacing_mm);
  for (std::size_t i = 0; i < n; ++i) {
    unsigned v = static_cast<unsigned char>(bytes[pos + i * bpp]);
    if (bpp == 2) v = (v << 8) | static_cast<unsigned char>(bytes[pos + i * bpp + 1]);
    img.pixels[i] = static_cast<float>(v);
  }
  return img;
}

RawImage read_pgm(const std::filesystem::path& path, double spacing_mm) {
  return decode_pgm(read_file(path), spacing_mm, path.string());
}

void write_pgm(const std::filesystem::path& path, const RawImage& image) {
  write_file_atomic(path, encode_pgm(image));
}

// ---------------------------------------------------------------------------
// landmarks

void LandmarkSet::validate(const RawImage& image) const {
  const double dx = tibial_plateau_right.x - tibial_plateau_left.x;
  const double dy = tibial_plateau_right.y - tibial_plateau_left.y;
  if (dx * dx + dy * dy < 1e-12) {
    throw GeometryError("tibial plateau points coincide at " + fmt_point(tibial_plateau_left));
  }
  for (const auto* p : {&knee_center, &tibial_plateau_left, &tibial_plateau_right}) {
    if (!image.contains(*p)) {
      throw GeometryError("landmark " + fmt_point(*p) + " lies outside the " +
                          std::to_string(image.width) + "x" + std::to_string(image.height) +
                          " image");
    }
  }
}

namespace {

Json point_json(const Point& p) { return Json::array({p.x, p.y}); }

Point point_from(const Json& j, const std::string& ctx) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) {
    throw ParseError(ctx + ": expected [x, y]");
  }
  return {j[0].get<double>(), j[1].get<double>()};
}

}  // namespace

Json landmarks_to_json(const std::string& exam_id, const LandmarkSet& lm) {
  Json body;
  body["side"] = to_string(lm.side);
  body["knee_center"] = point_json(lm.knee_center);
  body["tibial_plateau_left"] = point_json(lm.tibial_plateau_left);
  body["tibial_plateau_right"] = point_json(lm.tibial_plateau_right);
  Json doc;
  doc[exam_id] = body;
  return doc;
}

LandmarkSet landmarks_from_json(const Json& doc, const std::string& exam_id) {
  if (!doc.is_object() || !doc.contains(exam_id)) {
    throw DataError("landmarks for exam '" + exam_id + "' not found");
  }
  const auto& b = doc[exam_id];
  const std::string ctx = "landmarks[" + exam_id + "]";
  for (const char* k : {"side", "knee_center", "tibial_plateau_left", "tibial_plateau_right"}) {
    if (!b.contains(k)) throw ParseError(ctx + ": missing '" + k + "'");
  }
  if (!b["side"].is_string()) throw ParseError(ctx + ".side: expected a string");
  LandmarkSet lm;
  lm.side = side_from_string(b["side"].get<std::string>());
  lm.knee_center = point_from(b["knee_center"], ctx + ".knee_center");
  lm.tibial_plateau_left = point_from(b["tibial_plateau_left"], ctx + ".tibial_plateau_left");
  lm.tibial_plateau_right = point_from(b["tibial_plateau_right"], ctx + ".tibial_plateau_right");
  return lm;
}

LandmarkSet read_landmarks(const std::filesystem::path& path, const std::string& exam_id) {
  return landmarks_from_json(parse_json(read_file(path), path.string()), exam_id);
}

void write_landmarks(const std::filesystem::path& path, const std::string& exam_id,
                     const LandmarkSet& lm) {
  write_file_atomic(path, landmarks_to_json(exam_id, lm).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// geometry

RawImage mirror_horizontal(const RawImage& image) {
  RawImage out = image;
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) out.at(x, y) = image.at(image.width - 1 - x, y);
  return out;
}

Point mirror_point(const Point& p, int width) { return {width - 1 - p.x, p.y}; }

LandmarkSet mirror_landmarks(const LandmarkSet& lm, int width) {
  LandmarkSet out = lm;
  out.knee_center = mirror_point(lm.knee_center, width);
  out.tibial_plateau_left = mirror_point(lm.tibial_plateau_right, width);
  out.tibial_plateau_right = mirror_point(lm.tibial_plateau_left, width);
  return out;
}

Point rotate_point(const Point& p, const Point& center, double degrees) {
  const double c = std::cos(degrees * kDeg), s = std::sin(degrees * kDeg);
  const double dx = p.x - center.x, dy = p.y - center.y;
  return {center.x + c * dx - s * dy, center.y + s * dx + c * dy};
}

RawImage rotate_image(const RawImage& image, const Point& center, double degrees) {
  if (degrees == 0.0) return image;
  RawImage out(image.width, image.height, image.spacing_mm);
  // Inverse mapping: each output pixel reads the source at R(-degrees).
  const double c = std::cos(degrees * kDeg), s = std::sin(degrees * kDeg);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      const double dx = x - center.x, dy = y - center.y;
      const double sx = center.x + c * dx + s * dy;
      const double sy = center.y - s * dx + c * dy;
      out.at(x, y) = static_cast<float>(image.sample(sx, sy));
    }
  }
  return out;
}

AlignResult rotate_align(const RawImage& image, const LandmarkSet& lm) {
  image.validate();
  lm.validate(image);
  const double dx = lm.tibial_plateau_right.x - lm.tibial_plateau_left.x;
  const double dy = lm.tibial_plateau_right.y - lm.tibial_plateau_left.y;
  AlignResult r;
  r.angle_degrees = std::atan2(dy, dx) / kDeg;
  r.image = rotate_image(image, lm.knee_center, -r.angle_degrees);
  r.landmarks = lm;
  if (r.angle_degrees != 0.0) {
    r.landmarks.tibial_plateau_left = rotate_point(lm.tibial_plateau_left, lm.knee_center,
                                                   -r.angle_degrees);
    r.landmarks.tibial_plateau_right = rotate_point(lm.tibial_plateau_right, lm.knee_center,
                                                    -r.angle_degrees);
  }
  return r;
}

int crop_side_px(double size_mm, double spacing_mm) {
  if (!(size_mm > 0)) throw ConfigError("crop size must be positive, got " + std::to_string(size_mm));
  if (!(spacing_mm > 0)) throw DataError("pixel spacing must be positive");
  const double side = std::round(size_mm / spacing_mm);
  if (side < 1 || side > 1e6) {
    throw ConfigError("crop of " + std::to_string(size_mm) + " mm at " + std::to_string(spacing_mm) +
                      " mm/px gives an unusable side");
  }
  return static_cast<int>(side);
}

RawImage crop_roi(const RawImage& image, const Point& center, double size_mm, CropInfo* info) {
  image.validate();
  const int side = crop_side_px(size_mm, image.spacing_mm);
  if (!image.contains(center)) {
    throw GeometryError("crop center " + fmt_point(center) + " lies outside the image");
  }
  const int x0 = static_cast<int>(std::lround(center.x - (side - 1) / 2.0));
  const int y0 = static_cast<int>(std::lround(center.y - (side - 1) / 2.0));
  RawImage out(side, side, image.spacing_mm);
  bool padded = false;
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      const int sx = x0 + x, sy = y0 + y;
      if (sx < 0 || sy < 0 || sx >= image.width || sy >= image.height) {
        padded = true;
        continue;
      }
      out.at(x, y) = image.at(sx, sy);
    }
  }
  if (info) *info = {x0, y0, side, padded};
  return out;
}

RawImage resize_bilinear(const RawImage& image, int target_side) {
  image.validate();
  if (target_side < 1) throw ConfigError("resize target must be >= 1");
  if (image.width == target_side && image.height == target_side) return image;
  RawImage out(target_side, target_side,
               image.spacing_mm * image.width / static_cast<double>(target_side));
  auto src_coord = [&](int i, int n_in) {
    if (target_side == 1) return (n_in - 1) / 2.0;
    return i * static_cast<double>(n_in - 1) / (target_side - 1);
  };
  for (int y = 0; y < target_side; ++y) {
    const double sy = src_coord(y, image.height);
    for (int x = 0; x < target_side; ++x) {
      out.at(x, y) = static_cast<float>(image.sample(src_coord(x, image.width), sy));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// normalization

double percentile(std::vector<double> values, double pct) {
  if (values.empty()) throw UsageError("percentile of an empty set");
  std::sort(values.begin(), values.end());
  const double rank = (static_cast<double>(values.size()) - 1) * pct / 100.0;
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = rank - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

void standardize(std::vector<float>& values, const std::string& context) {
  if (values.empty()) throw NormalizationError(context + ": empty image");
  double mean = 0;
  for (float v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0;
  for (float v : values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(values.size());
  if (!(var > 0)) throw NormalizationError(context + ": zero variance (constant image)");
  const double inv = 1.0 / std::sqrt(var);
  for (float& v : values) v = static_cast<float>((v - mean) * inv);
}

std::vector<float> NormalizedImage::standardized() const {
  auto out = unit;
  standardize(out, provenance.source_id.empty() ? "image" : provenance.source_id);
  return out;
}

NormalizedImage normalize(const RawImage& image, double clip_low_pct, double clip_high_pct) {
  image.validate();
  if (!(clip_low_pct >= 0 && clip_low_pct < clip_high_pct && clip_high_pct <= 100)) {
    throw ConfigError("clip percentiles must satisfy 0 <= low < high <= 100");
  }
  std::vector<double> values(image.pixels.begin(), image.pixels.end());
  const double lo = percentile(values, clip_low_pct);
  const double hi = percentile(values, clip_high_pct);
  if (!(hi > lo)) {
    throw NormalizationError("zero variance after clipping to [" + std::to_string(lo) + ", " +
                             std::to_string(hi) + "] (constant image)");
  }
  NormalizedImage out;
  out.width = image.width;
  out.height = image.height;
  out.unit.resize(values.size());
  const double scale = 1.0 / (hi - lo);
  for (std::size_t i = 0; i < values.size(); ++i) {
    out.unit[i] = static_cast<float>((std::clamp(values[i], lo, hi) - lo) * scale);
  }
  out.provenance.clip_low_value = lo;
  out.provenance.clip_high_value = hi;
  out.provenance.target_side = image.width;
  return out;
}

Json Provenance::to_json() const {
  Json j;
  j["source_id"] = source_id;
  j["mirrored"] = mirrored;
  j["rotation_degrees"] = rotation_degrees;
  j["crop"] = {{"x0", crop.x0}, {"y0", crop.y0}, {"side", crop.side}, {"padded", crop.padded}};
  j["target_side"] = target_side;
  j["clip_low_value"] = clip_low_value;
  j["clip_high_value"] = clip_high_value;
  return j;
}

Provenance Provenance::from_json(const Json& j) {
  const std::string ctx = "provenance";
  reject_unknown_keys(j, {"source_id", "mirrored", "rotation_degrees", "crop", "target_side",
                          "clip_low_value", "clip_high_value"},
                      ctx);
  Provenance p;
  read_opt(j, "source_id", p.source_id, ctx);
  read_opt(j, "mirrored", p.mirrored, ctx);
  read_opt(j, "rotation_degrees", p.rotation_degrees, ctx);
  if (j.contains("crop")) {
    const auto& c = j["crop"];
    reject_unknown_keys(c, {"x0", "y0", "side", "padded"}, ctx + ".crop");
    read_opt(c, "x0", p.crop.x0, ctx + ".crop");
    read_opt(c, "y0", p.crop.y0, ctx + ".crop");
    read_opt(c, "side", p.crop.side, ctx + ".crop");
    read_opt(c, "padded", p.crop.padded, ctx + ".crop");
  }
  read_opt(j, "target_side", p.target_side, ctx);
  read_opt(j, "clip_low_value", p.clip_low_value, ctx);
  read_opt(j, "clip_high_value", p.clip_high_value, ctx);
  return p;
}

// ---------------------------------------------------------------------------
// pipeline

void PreprocessParams::validate() const {
  if (!(roi_mm > 0)) throw ConfigError("preprocess.roi_mm must be positive");
  if (target_side < 2) throw ConfigError("preprocess.target_side must be >= 2");
  if (!(clip_low_pct >= 0 && clip_low_pct < clip_high_pct && clip_high_pct <= 100)) {
    throw ConfigError("preprocess clip percentiles must satisfy 0 <= low < high <= 100");
  }
}

Json PreprocessParams::to_json() const {
  return {{"roi_mm", roi_mm},
          {"target_side", target_side},
          {"clip_low_pct", clip_low_pct},
          {"clip_high_pct", clip_high_pct}};
}

PreprocessParams PreprocessParams::from_json(const Json& j) {
  const std::string ctx = "preprocess";
  reject_unknown_keys(j, {"roi_mm", "target_side", "clip_low_pct", "clip_high_pct"}, ctx);
  PreprocessParams p;
  read_opt(j, "roi_mm", p.roi_mm, ctx);
  read_opt(j, "target_side", p.target_side, ctx);
  read_opt(j, "clip_low_pct", p.clip_low_pct, ctx);
  read_opt(j, "clip_high_pct", p.clip_high_pct, ctx);
  p.validate();
  return p;
}

NormalizedImage preprocess(const RawImage& image, const LandmarkSet& lm,
                           const PreprocessParams& params, const std::string& source_id) {
  params.validate();
  image.validate();
  lm.validate(image);
  const bool mirror = lm.side == Side::kLeft;
  const RawImage oriented = mirror ? mirror_horizontal(image) : image;
  const LandmarkSet olm = mirror ? mirror_landmarks(lm, image.width) : lm;
  auto aligned = rotate_align(oriented, olm);
  CropInfo crop;
  auto roi = crop_roi(aligned.image, aligned.landmarks.knee_center, params.roi_mm, &crop);
  auto out = normalize(resize_bilinear(roi, params.target_side), params.clip_low_pct,
                       params.clip_high_pct);
  out.provenance.source_id = source_id;
  out.provenance.mirrored = mirror;
  out.provenance.rotation_degrees = aligned.angle_degrees;
  out.provenance.crop = crop;
  out.provenance.target_side = params.target_side;
  return out;
}

// ---------------------------------------------------------------------------
// augmentation

void AugmentParams::validate() const {
  if (crop_side < 0) throw ConfigError("augment crop side must be >= 0");
  if (!(noise_sigma >= 0)) throw ConfigError("augment.noise_sigma must be >= 0");
  if (!(gamma_low > 0 && gamma_low <= gamma_high)) {
    throw ConfigError("augment.gamma_range must satisfy 0 < low <= high");
  }
}

Json AugmentParams::to_json() const {
  return {{"noise_sigma", noise_sigma}, {"gamma_range", Json::array({gamma_low, gamma_high})}};
}

int training_crop_side(int side) {
  return std::max(1, static_cast<int>(std::lround(side * 300.0 / 310.0)));
}

namespace {

std::vector<float> crop_unit(const NormalizedImage& image, int x0, int y0, int side) {
  std::vector<float> out(static_cast<std::size_t>(side) * static_cast<std::size_t>(side));
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x)
      out[static_cast<std::size_t>(y) * side + x] =
          image.unit[static_cast<std::size_t>(y0 + y) * image.width + (x0 + x)];
  return out;
}

int checked_crop(const NormalizedImage& image, int crop_side) {
  const int side = crop_side == 0 ? std::min(image.width, image.height) : crop_side;
  if (side > image.width || side > image.height) {
    throw ConfigError("crop of " + std::to_string(side) + " px exceeds the " +
                      std::to_string(image.width) + "x" + std::to_string(image.height) + " image");
  }
  return side;
}

}  // namespace

std::vector<float> augment(const NormalizedImage& image, const AugmentParams& params, Rng& rng) {
  params.validate();
  const int side = checked_crop(image, params.crop_side);
  std::uniform_int_distribution<int> ox(0, image.width - side), oy(0, image.height - side);
  const int x0 = ox(rng);
  const int y0 = oy(rng);
  auto out = crop_unit(image, x0, y0, side);
  if (params.noise_sigma > 0) {
    std::normal_distribution<double> noise(0.0, params.noise_sigma);
    for (float& v : out) v = static_cast<float>(std::clamp(v + noise(rng), 0.0, 1.0));
  }
  double gamma = params.gamma_low;
  if (params.gamma_high > params.gamma_low) {
    gamma = std::uniform_real_distribution<double>(params.gamma_low, params.gamma_high)(rng);
  }
  if (gamma != 1.0) {
    for (float& v : out) v = static_cast<float>(std::pow(static_cast<double>(v), gamma));
  }
  standardize(out, image.provenance.source_id.empty() ? "augment" : image.provenance.source_id);
  return out;
}

std::vector<float> center_crop_standardized(const NormalizedImage& image, int crop_side) {
  const int side = checked_crop(image, crop_side);
  auto out = crop_unit(image, (image.width - side) / 2, (image.height - side) / 2, side);
  standardize(out, image.provenance.source_id.empty() ? "image" : image.provenance.source_id);
  return out;
}

}  // namespace oarsi
