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

// Manifest ingestion, subject-wise stratified folds and training-index
// samplers.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "oarsi/preprocess.hpp"
#include "oarsi/tasks.hpp"

namespace oarsi {

struct GradedExam {
  std::string exam_id;
  std::string subject_id;
  Side side = Side::kRight;
  int follow_up_months = 0;
  std::string image_path;     // as written in the manifest
  std::string landmark_path;  // as written in the manifest
  double spacing_mm = 1.0;
  Grades grades;

  int grade(std::size_t task) const { return grades[task].value(); }
  bool operator==(const GradedExam&) const = default;
};

inline constexpr const char* kManifestHeader =
    "exam_id,subject_id,side,follow_up_months,image_path,landmark_path,spacing_mm,"
    "KL,FO_L,FO_M,TO_L,TO_M,JSN_L,JSN_M";

struct ManifestLoad {
  std::vector<GradedExam> exams;
  std::size_t rows = 0;
  /// Missing-cell counts per label column, over all rows (an exam missing
  /// two labels counts in both columns).
  std::map<std::string, std::size_t> missing_by_column;
  std::size_t excluded = 0;
  std::filesystem::path base_dir;  // relative paths resolve against this
};

/// Parses a manifest and drops exams missing any label in `required`
/// (default: all seven). Errors carry the 1-based line number.
/// Pass kNoRequiredLabels to keep every row.
inline const std::vector<std::size_t> kNoRequiredLabels{kNumTasks};

ManifestLoad load_and_filter(const std::filesystem::path& path,
                             std::vector<std::size_t> required = {});
ManifestLoad parse_manifest(const std::string& text, const std::filesystem::path& base_dir,
                            const std::string& context, std::vector<std::size_t> required = {});

std::string format_manifest(const std::vector<GradedExam>& exams);
void write_manifest(const std::filesystem::path& path, const std::vector<GradedExam>& exams);

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p);

/// Minimal RFC 4180 field splitter (quotes and doubled quotes).
std::vector<std::string> split_csv_line(const std::string& line);
std::string csv_escape(const std::string& field);

/// exam_id -> fold index in [0, k).
using FoldAssignment = std::map<std::string, int>;

/// Subject-wise folds stratified by each subject's maximum KL grade
/// (subjects without KL form their own stratum). Within a stratum subjects
/// are shuffled and dealt round-robin; the dealing position carries over
/// between strata so fold sizes stay balanced too.
FoldAssignment split_cv(const std::vector<GradedExam>& exams, int k, std::uint64_t seed);

enum class SamplerScheme { kNone, kKlBalanced };
std::string to_string(SamplerScheme s);
SamplerScheme sampler_scheme_from_string(const std::string& s);

/// Produces one epoch of training indices. `none` is a uniform permutation;
/// `kl_balanced` draws a KL class uniformly among the classes present and
/// then an exam uniformly within it (with replacement), so each present
/// class has equal expected frequency. A single-class set falls back to the
/// `none` stream.
class IndexSampler {
 public:
  IndexSampler(std::vector<int> kl_labels, SamplerScheme scheme, std::uint64_t seed);
  std::vector<std::size_t> epoch(std::uint64_t epoch_index) const;
  std::size_t size() const { return labels_.size(); }

 private:
  std::vector<int> labels_;
  SamplerScheme scheme_;
  std::uint64_t seed_;
  std::vector<std::vector<std::size_t>> by_class_;
};

}  // namespace oarsi
