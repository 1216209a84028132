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

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "oarsi/dataset.hpp"
#include "oarsi/errors.hpp"
#include "oarsi/serialize.hpp"
#include "oarsi/synth.hpp"

namespace oarsi {
namespace {

namespace fs = std::filesystem;

std::string header() { return std::string(kManifestHeader) + "\n"; }

GradedExam exam(const std::string& id, const std::string& subject, int kl, Side side = Side::kRight,
                int fu = 0) {
  GradedExam e;
  e.exam_id = id;
  e.subject_id = subject;
  e.side = side;
  e.follow_up_months = fu;
  e.image_path = "images/" + id + ".pgm";
  e.landmark_path = "landmarks/" + id + ".json";
  e.spacing_mm = 1.25;
  e.grades = {kl, 0, 1, 2, 3, 0, 1};
  return e;
}

// ---------------------------------------------------------------------------
// manifest

TEST(Manifest, MissingLabelIsExcludedAndCounted) {
  const std::string text = header() +
                           "A,s1,R,0,a.pgm,a.json,0.5,,0,0,0,0,0,0\n"
                           "B,s1,L,0,b.pgm,b.json,0.5,2,1,0,3,0,1,\n"
                           "C,s2,R,12,c.pgm,c.json,0.5,4,3,3,3,3,3,3\n";
  auto m = parse_manifest(text, "/base", "mem");
  EXPECT_EQ(m.rows, 3u);
  EXPECT_EQ(m.excluded, 2u);
  EXPECT_EQ(m.missing_by_column.at("KL"), 1u);
  EXPECT_EQ(m.missing_by_column.at("JSN_M"), 1u);
  EXPECT_EQ(m.missing_by_column.at("FO_L"), 0u);
  ASSERT_EQ(m.exams.size(), 1u);
  const auto& e = m.exams[0];
  EXPECT_EQ(e.exam_id, "C");
  EXPECT_EQ(e.subject_id, "s2");
  EXPECT_EQ(e.follow_up_months, 12);
  EXPECT_EQ(e.image_path, "c.pgm");
  EXPECT_EQ(e.spacing_mm, 0.5);
  for (std::size_t t = 0; t < kNumTasks; ++t) EXPECT_EQ(e.grade(t), t == 0 ? 4 : 3);
}

TEST(Manifest, OarsiOnlyRequirementKeepsMissingKl) {
  const std::string text = header() + "A,s1,R,0,a.pgm,a.json,0.5,,0,0,0,0,0,0\n";
  auto m = parse_manifest(text, "", "mem", {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(m.exams.size(), 1u);
  EXPECT_EQ(m.missing_by_column.at("KL"), 1u);
}

TEST(Manifest, OutOfRangeGradeNamesLine) {
  const std::string text = header() + "A,s1,R,0,a.pgm,a.json,0.5,1,0,0,0,0,0,0\n" +
                           "B,s2,R,0,b.pgm,b.json,0.5,1,5,0,0,0,0,0\n";
  try {
    parse_manifest(text, "", "m.csv");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("m.csv:3"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("FO_L"), std::string::npos) << e.what();
  }
}

TEST(Manifest, MalformedRowsAreParseErrors) {
  EXPECT_THROW(parse_manifest("exam_id,subject\n", "", "m"), ParseError);
  EXPECT_THROW(parse_manifest(header() + "A,s1,R,0,a,b,0.5,1\n", "", "m"), ParseError);
  EXPECT_THROW(parse_manifest(header() + "A,s1,X,0,a,b,0.5,1,0,0,0,0,0,0\n", "", "m"), ParseError);
  EXPECT_THROW(parse_manifest(header() + "A,s1,R,0,a,b,0.5,x,0,0,0,0,0,0\n", "", "m"), ParseError);
  EXPECT_THROW(parse_manifest(header() + "A,s1,R,0,a,b,-1,1,0,0,0,0,0,0\n", "", "m"), ParseError);
  EXPECT_THROW(parse_manifest(header() + "A,s1,R,0,a,b,1,1,0,0,0,0,0,0\n"
                                         "A,s2,R,0,a,b,1,1,0,0,0,0,0,0\n",
                              "", "m"),
               DataError);
  EXPECT_THROW(parse_manifest(header() + "A,s1,R,0,a,b,1,1,0,0,0,0,0,0\n"
                                         "B,s1,R,0,a,b,1,1,0,0,0,0,0,0\n",
                              "", "m"),
               DataError);
}

TEST(Manifest, FormatParseRoundTrip) {
  std::vector<GradedExam> exams{exam("a,1", "s\"1", 2), exam("b", "s2", 0, Side::kLeft, 24)};
  exams[1].grades[kTO_M].reset();
  auto m = parse_manifest(format_manifest(exams), "", "mem", {0});
  ASSERT_EQ(m.exams.size(), 2u);
  EXPECT_EQ(m.exams[0], exams[0]);
  EXPECT_EQ(m.exams[1], exams[1]);
  EXPECT_EQ(format_manifest(m.exams), format_manifest(exams));
}

// ---------------------------------------------------------------------------
// folds

std::vector<GradedExam> cohort(int subjects, int exams_per, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<GradedExam> out;
  for (int s = 0; s < subjects; ++s) {
    for (int i = 0; i < exams_per; ++i) {
      auto g = i == 0 ? sample_grades(rng) : progress_grades(out.back().grades, rng);
      auto e = exam("e" + std::to_string(s) + "_" + std::to_string(i), "s" + std::to_string(s), 0,
                    i % 2 ? Side::kLeft : Side::kRight, (i / 2) * 12);
      e.grades = g;
      out.push_back(e);
    }
  }
  return out;
}

TEST(SplitCv, SubjectsNeverSpanFolds) {
  auto exams = cohort(60, 3, 1);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto folds = split_cv(exams, 5, seed);
    ASSERT_EQ(folds.size(), exams.size());
    std::map<std::string, int> subject_fold;
    for (const auto& e : exams) {
      const int f = folds.at(e.exam_id);
      ASSERT_GE(f, 0);
      ASSERT_LT(f, 5);
      auto [it, fresh] = subject_fold.emplace(e.subject_id, f);
      ASSERT_TRUE(fresh || it->second == f) << e.subject_id;
    }
  }
}

TEST(SplitCv, TenSubjectsTwoStrataGiveOnePerStratumPerFold) {
  std::vector<GradedExam> exams;
  for (int s = 0; s < 10; ++s) exams.push_back(exam("e" + std::to_string(s), "s" + std::to_string(s), s < 5 ? 0 : 3));
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto folds = split_cv(exams, 5, seed);
    int count[5][2] = {};
    for (int s = 0; s < 10; ++s) ++count[folds.at("e" + std::to_string(s))][s < 5 ? 0 : 1];
    for (auto& c : count) {
      EXPECT_EQ(c[0], 1);
      EXPECT_EQ(c[1], 1);
    }
  }
}

TEST(SplitCv, DeterministicAndFewSubjectsRejected) {
  auto exams = cohort(20, 2, 3);
  EXPECT_EQ(split_cv(exams, 5, 9), split_cv(exams, 5, 9));
  EXPECT_NE(split_cv(exams, 5, 9), split_cv(exams, 5, 10));
  EXPECT_THROW(split_cv(cohort(4, 2, 1), 5, 0), ConfigError);
}

// ---------------------------------------------------------------------------
// sampler

TEST(Sampler, NoneIsAPermutation) {
  IndexSampler s(std::vector<int>(50, 1), SamplerScheme::kNone, 4);
  auto e0 = s.epoch(0);
  auto sorted = e0;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(sorted[i], i);
  EXPECT_NE(e0, s.epoch(1));
  EXPECT_EQ(e0, s.epoch(0));
}

TEST(Sampler, BalancedDrawsAreUniformOverClasses) {
  std::vector<int> labels(100, 0);
  for (int i = 90; i < 100; ++i) labels[static_cast<std::size_t>(i)] = 3;
  IndexSampler s(labels, SamplerScheme::kKlBalanced, 5);
  std::size_t minority = 0, total = 0;
  for (std::uint64_t ep = 0; total < 100000; ++ep) {
    for (auto i : s.epoch(ep)) {
      minority += labels[i] == 3;
      ++total;
    }
  }
  EXPECT_NEAR(static_cast<double>(minority) / static_cast<double>(total), 0.5, 0.02);
}

TEST(Sampler, SingleClassMatchesNone) {
  std::vector<int> labels(30, 2);
  IndexSampler a(labels, SamplerScheme::kKlBalanced, 6), b(labels, SamplerScheme::kNone, 6);
  for (std::uint64_t ep = 0; ep < 3; ++ep) EXPECT_EQ(a.epoch(ep), b.epoch(ep));
}

TEST(Sampler, EmptyOrUnlabeledIsConfigError) {
  EXPECT_THROW(IndexSampler({}, SamplerScheme::kKlBalanced, 0), ConfigError);
  EXPECT_THROW(IndexSampler({0, -1}, SamplerScheme::kKlBalanced, 0), ConfigError);
  EXPECT_THROW(sampler_scheme_from_string("inverse"), ConfigError);
}

// ---------------------------------------------------------------------------
// synthetic generator

Grades oarsi(int fo_l, int fo_m, int to_l, int to_m, int jsn_l, int jsn_m) {
  Grades g;
  g[kFO_L] = fo_l;
  g[kFO_M] = fo_m;
  g[kTO_L] = to_l;
  g[kTO_M] = to_m;
  g[kJSN_L] = jsn_l;
  g[kJSN_M] = jsn_m;
  return g;
}

TEST(Synth, KlDerivationRule) {
  EXPECT_EQ(derive_kl(oarsi(0, 0, 0, 0, 0, 0)), 0);
  EXPECT_EQ(derive_kl(oarsi(1, 0, 0, 0, 0, 0)), 1);
  EXPECT_EQ(derive_kl(oarsi(0, 0, 0, 0, 1, 1)), 1);
  EXPECT_EQ(derive_kl(oarsi(2, 0, 0, 0, 1, 0)), 2);
  EXPECT_EQ(derive_kl(oarsi(3, 3, 3, 3, 2, 0)), 3);
  EXPECT_EQ(derive_kl(oarsi(0, 0, 0, 0, 3, 0)), 4);
  EXPECT_EQ(derive_kl(oarsi(0, 0, 0, 0, 2, 3)), 4);
}

RenderParams clean_params() {
  RenderParams p;
  p.noise_sigma = 0;
  p.max_rotation_deg = 0;
  p.max_center_jitter = 0;
  return p;
}

// Dark rows between femur and tibia in the lateral compartment column.
int measured_gap(const RawImage& img, const RenderedKnee& k, const SceneGeometry& geo, double u) {
  const int x = static_cast<int>(std::lround(k.center.x + u));
  int dark = 0;
  for (int y = static_cast<int>(k.center.y - geo.g0 * 1.5); y <= k.center.y + geo.tibia_top + 2; ++y) {
    if (img.at(x, y) < 0.35 * kIntensityScale) ++dark;
  }
  return dark;
}

TEST(Synth, AllZeroGradesHaveMaximalGapAndNoProtrusions) {
  const auto p = clean_params();
  const auto geo = SceneGeometry::from(p);
  Rng rng(1);
  auto k = render_knee(oarsi(0, 0, 0, 0, 0, 0), Side::kRight, p, rng);
  EXPECT_NEAR(measured_gap(k.image, k, geo, -geo.half_width / 2), geo.g0, 1.0);
  EXPECT_NEAR(measured_gap(k.image, k, geo, geo.half_width / 2), geo.g0, 1.0);
  // No bright pixels beyond the bone's horizontal extent.
  int bright_outside = 0;
  for (int y = 0; y < k.image.height; ++y)
    for (int x = 0; x < k.image.width; ++x)
      if (std::abs(x - k.center.x) > geo.half_width + 1 && k.image.at(x, y) > 0.5 * kIntensityScale)
        ++bright_outside;
  EXPECT_EQ(bright_outside, 0);
}

TEST(Synth, RenderedGapMatchesGrade) {
  const auto p = clean_params();
  const auto geo = SceneGeometry::from(p);
  int previous = 1 << 30;
  for (int jsn = 0; jsn <= 3; ++jsn) {
    Rng rng(2);
    auto k = render_knee(oarsi(0, 0, 0, 0, jsn, 0), Side::kRight, p, rng);
    const int gap = measured_gap(k.image, k, geo, -geo.half_width / 2);
    EXPECT_NEAR(gap, geo.g0 * (1 - jsn / 4.0), 1.0) << "JSN " << jsn;
    EXPECT_LT(gap, previous);
    previous = gap;
    // Medial compartment untouched.
    EXPECT_NEAR(measured_gap(k.image, k, geo, geo.half_width / 2), geo.g0, 1.0);
  }
}

TEST(Synth, ProtrusionAreaGrowsWithGrade) {
  const auto p = clean_params();
  const auto geo = SceneGeometry::from(p);
  for (auto task : {kFO_L, kFO_M, kTO_L, kTO_M}) {
    int previous = -1;
    for (int grade = 0; grade <= 3; ++grade) {
      auto g = oarsi(0, 0, 0, 0, 0, 0);
      g[task] = grade;
      Rng rng(3);
      auto k = render_knee(g, Side::kRight, p, rng);
      int area = 0;
      for (int y = 0; y < k.image.height; ++y)
        for (int x = 0; x < k.image.width; ++x)
          if (std::abs(x - k.center.x) > geo.half_width + 0.5 && k.image.at(x, y) > 0.5 * kIntensityScale)
            ++area;
      EXPECT_GT(area, previous) << kTaskNames[task] << " grade " << grade;
      previous = area;
    }
  }
}

TEST(Synth, LeftKneeIsMirrorOfRight) {
  const auto p = clean_params();
  auto g = oarsi(3, 0, 1, 0, 2, 0);
  Rng r1(4), r2(4);
  auto right = render_knee(g, Side::kRight, p, r1);
  auto left = render_knee(g, Side::kLeft, p, r2);
  auto mirrored = mirror_horizontal(left.image);
  double max_diff = 0;
  for (std::size_t i = 0; i < right.image.pixels.size(); ++i)
    max_diff = std::max(max_diff, std::abs(static_cast<double>(mirrored.pixels[i]) - right.image.pixels[i]));
  EXPECT_LT(max_diff, 1e-2 * kIntensityScale);
}

TEST(Synth, LandmarksSitOnRotatedPlateau) {
  RenderParams p;
  p.noise_sigma = 0;
  const auto geo = SceneGeometry::from(p);
  Rng rng(5);
  auto k = render_knee(oarsi(0, 0, 0, 0, 0, 0), Side::kLeft, p, rng);
  EXPECT_NE(k.rotation_deg, 0.0);
  const auto& lm = k.landmarks;
  EXPECT_NEAR(std::hypot(lm.tibial_plateau_right.x - lm.tibial_plateau_left.x,
                         lm.tibial_plateau_right.y - lm.tibial_plateau_left.y),
              2 * geo.half_width, 1e-9);
  auto aligned = rotate_align(k.image, lm);
  EXPECT_NEAR(aligned.angle_degrees, k.rotation_deg, 1e-9);
}

TEST(Synth, GenerateThenLoadRoundTrip) {
  auto dir = fs::temp_directory_path() / "oarsi_synth_test";
  fs::remove_all(dir);
  SynthParams sp;
  sp.subjects = 6;
  sp.test_subjects = 2;
  sp.exams_per_subject = 4;
  sp.seed = 7;
  auto result = synth_generate(sp, dir, 2);
  EXPECT_EQ(result.train.size(), 24u);
  EXPECT_EQ(result.test.size(), 8u);
  auto loaded = load_and_filter(dir / "manifest.csv");
  EXPECT_EQ(loaded.exams, result.train);
  EXPECT_EQ(loaded.excluded, 0u);
  EXPECT_EQ(load_and_filter(dir / "test_manifest.csv").exams, result.test);
  for (const auto& e : result.train) {
    EXPECT_EQ(e.grade(kKL), derive_kl(e.grades));
    auto img = read_pgm(resolve(loaded.base_dir, e.image_path), e.spacing_mm);
    EXPECT_EQ(img.width, 128);
    auto lm = read_landmarks(resolve(loaded.base_dir, e.landmark_path), e.exam_id);
    EXPECT_EQ(lm.side, e.side);
    EXPECT_NO_THROW(lm.validate(img));
  }
  // Follow-ups never regress.
  for (std::size_t i = 2; i < result.train.size(); ++i) {
    const auto& a = result.train[i - 2];
    const auto& b = result.train[i];
    if (a.subject_id != b.subject_id) continue;
    for (std::size_t t = 1; t < kNumTasks; ++t) EXPECT_GE(b.grade(t), a.grade(t));
  }
  // Same seed, same bytes, regardless of thread count.
  auto dir2 = fs::temp_directory_path() / "oarsi_synth_test2";
  fs::remove_all(dir2);
  synth_generate(sp, dir2, 1);
  EXPECT_EQ(read_file(dir / "manifest.csv"), read_file(dir2 / "manifest.csv"));
  EXPECT_EQ(read_file(dir / result.train[5].image_path), read_file(dir2 / result.train[5].image_path));
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST(Synth, GradeDistributionIsSkewed) {
  Rng rng(8);
  int counts[5] = {};
  for (int i = 0; i < 5000; ++i) ++counts[*sample_grades(rng)[kKL]];
  EXPECT_GT(counts[0], counts[4]);
  for (int c : counts) EXPECT_GT(c, 100);
}

TEST(Synth, ProxyLabelsCountOsteophytes) {
  EXPECT_EQ(proxy_label(oarsi(0, 2, 0, 1, 3, 3)), 2);
  auto samples = proxy_samples(20, RenderParams{}, 1, 2);
  auto again = proxy_samples(20, RenderParams{}, 1, 1);
  ASSERT_EQ(samples.size(), 20u);
  for (std::size_t i = 0; i < 20; ++i) {
    EXPECT_GE(samples[i].label, 0);
    EXPECT_LT(samples[i].label, kProxyClasses);
    EXPECT_EQ(samples[i].image.pixels, again[i].image.pixels);
  }
}

}  // namespace
}  // namespace oarsi
