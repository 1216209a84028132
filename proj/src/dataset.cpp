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

#include "oarsi/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <numeric>
#include <set>
#include <sstream>
#include <tuple>

#include "oarsi/errors.hpp"
#include "oarsi/rng.hpp"
#include "oarsi/serialize.hpp"

namespace oarsi {

namespace fs = std::filesystem;

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          fields.back().push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        fields.back().push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else {
      fields.back().push_back(c);
    }
  }
  if (quoted) throw ParseError("unterminated quoted field");
  return fields;
}

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

namespace {

template <typename V>
bool parse_number(const std::string& s, V& out) {
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

// Reads lines accepting both LF and CRLF endings.
std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::string cur;
  std::istringstream is(text);
  while (std::getline(is, cur)) {
    if (!cur.empty() && cur.back() == '\r') cur.pop_back();
    lines.push_back(cur);
  }
  return lines;
}

}  // namespace

ManifestLoad parse_manifest(const std::string& text, const fs::path& base_dir,
                            const std::string& context, std::vector<std::size_t> required) {
  if (required.empty()) {
    required.resize(kNumTasks);
    std::iota(required.begin(), required.end(), std::size_t{0});
  }
  const auto lines = split_lines(text);
  auto where = [&](std::size_t line) { return context + ":" + std::to_string(line); };
  if (lines.empty() || lines[0] != kManifestHeader) {
    throw ParseError(where(1) + ": header must be '" + std::string(kManifestHeader) + "'");
  }
  ManifestLoad out;
  out.base_dir = base_dir;
  for (auto name : kTaskNames) out.missing_by_column[std::string(name)] = 0;
  std::set<std::string> ids;
  std::set<std::tuple<std::string, int, int>> identities;
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    const std::size_t lineno = ln + 1;
    if (lines[ln].empty()) continue;
    std::vector<std::string> f;
    try {
      f = split_csv_line(lines[ln]);
    } catch (const ParseError& e) {
      throw ParseError(where(lineno) + ": " + e.what());
    }
    if (f.size() != 14) {
      throw ParseError(where(lineno) + ": expected 14 fields, found " + std::to_string(f.size()));
    }
    ++out.rows;
    GradedExam e;
    e.exam_id = f[0];
    e.subject_id = f[1];
    if (e.exam_id.empty() || e.subject_id.empty()) {
      throw ParseError(where(lineno) + ": exam_id and subject_id must be non-empty");
    }
    if (f[2] != "L" && f[2] != "R") throw ParseError(where(lineno) + ": side must be L or R");
    e.side = side_from_string(f[2]);
    if (!parse_number(f[3], e.follow_up_months) || e.follow_up_months < 0) {
      throw ParseError(where(lineno) + ": follow_up_months must be a non-negative integer");
    }
    e.image_path = f[4];
    e.landmark_path = f[5];
    if (!parse_number(f[6], e.spacing_mm) || !(e.spacing_mm > 0)) {
      throw ParseError(where(lineno) + ": spacing_mm must be a positive number");
    }
    for (std::size_t t = 0; t < kNumTasks; ++t) {
      const auto& cell = f[7 + t];
      if (cell.empty()) continue;
      int g = 0;
      if (!parse_number(cell, g)) {
        throw ParseError(where(lineno) + ": " + std::string(kTaskNames[t]) + " grade '" + cell +
                         "' is not an integer");
      }
      if (g < 0 || g >= kTaskClasses[t]) {
        throw DataError(where(lineno) + ": " + std::string(kTaskNames[t]) + " grade " +
                        std::to_string(g) + " outside 0.." + std::to_string(kTaskClasses[t] - 1));
      }
      e.grades[t] = g;
    }
    if (!ids.insert(e.exam_id).second) {
      throw DataError(where(lineno) + ": duplicate exam_id '" + e.exam_id + "'");
    }
    if (!identities.insert({e.subject_id, static_cast<int>(e.side), e.follow_up_months}).second) {
      throw DataError(where(lineno) + ": duplicate (subject, side, follow-up) for '" +
                      e.subject_id + "'");
    }
    bool keep = true;
    for (std::size_t t = 0; t < kNumTasks; ++t) {
      if (e.grades[t]) continue;
      ++out.missing_by_column[std::string(kTaskNames[t])];
      if (std::find(required.begin(), required.end(), t) != required.end()) keep = false;
    }
    if (keep) {
      out.exams.push_back(std::move(e));
    } else {
      ++out.excluded;
    }
  }
  return out;
}

ManifestLoad load_and_filter(const fs::path& path, std::vector<std::size_t> required) {
  return parse_manifest(read_file(path), path.parent_path(), path.string(), std::move(required));
}

std::string format_manifest(const std::vector<GradedExam>& exams) {
  std::ostringstream os;
  os << kManifestHeader << "\n";
  for (const auto& e : exams) {
    char spacing[32];
    auto [end, ec] = std::to_chars(spacing, spacing + sizeof(spacing), e.spacing_mm);
    (void)ec;
    os << csv_escape(e.exam_id) << ',' << csv_escape(e.subject_id) << ',' << to_string(e.side)
       << ',' << e.follow_up_months << ',' << csv_escape(e.image_path) << ','
       << csv_escape(e.landmark_path) << ',' << std::string(spacing, end);
    for (const auto& g : e.grades) {
      os << ',';
      if (g) os << *g;
    }
    os << "\n";
  }
  return os.str();
}

void write_manifest(const fs::path& path, const std::vector<GradedExam>& exams) {
  write_file_atomic(path, format_manifest(exams));
}

// ---------------------------------------------------------------------------
// folds

FoldAssignment split_cv(const std::vector<GradedExam>& exams, int k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("cross-validation needs k >= 2, got " + std::to_string(k));
  // Subjects in first-appearance order, with their stratum.
  std::vector<std::string> subjects;
  std::map<std::string, int> stratum;
  for (const auto& e : exams) {
    const int kl = e.grades[kKL] ? *e.grades[kKL] : -1;
    auto [it, fresh] = stratum.try_emplace(e.subject_id, kl);
    if (fresh) {
      subjects.push_back(e.subject_id);
    } else {
      it->second = std::max(it->second, kl);
    }
  }
  if (static_cast<int>(subjects.size()) < k) {
    throw ConfigError("cross-validation with k=" + std::to_string(k) + " needs at least " +
                      std::to_string(k) + " subjects, found " + std::to_string(subjects.size()));
  }
  std::map<int, std::vector<std::string>> strata;
  for (const auto& s : subjects) strata[stratum[s]].push_back(s);

  std::map<std::string, int> subject_fold;
  std::size_t cursor = 0;
  for (auto& [key, members] : strata) {
    std::sort(members.begin(), members.end());
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(key + 1), 0x5f01d));
    std::shuffle(members.begin(), members.end(), rng);
    for (const auto& s : members) subject_fold[s] = static_cast<int>(cursor++ % k);
  }
  FoldAssignment out;
  for (const auto& e : exams) out[e.exam_id] = subject_fold.at(e.subject_id);
  return out;
}

// ---------------------------------------------------------------------------
// sampler

std::string to_string(SamplerScheme s) { return s == SamplerScheme::kNone ? "none" : "kl_balanced"; }

SamplerScheme sampler_scheme_from_string(const std::string& s) {
  if (s == "none") return SamplerScheme::kNone;
  if (s == "kl_balanced") return SamplerScheme::kKlBalanced;
  throw ConfigError("sampler must be none|kl_balanced, got '" + s + "'");
}

IndexSampler::IndexSampler(std::vector<int> kl_labels, SamplerScheme scheme, std::uint64_t seed)
    : labels_(std::move(kl_labels)), scheme_(scheme), seed_(seed) {
  if (scheme_ != SamplerScheme::kKlBalanced) return;
  if (labels_.empty()) throw ConfigError("kl_balanced sampling over an empty training set");
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (labels_[i] < 0) {
      throw ConfigError("kl_balanced sampling needs a KL grade for every exam (index " +
                        std::to_string(i) + " has none)");
    }
    groups[labels_[i]].push_back(i);
  }
  for (auto& [_, idx] : groups) by_class_.push_back(std::move(idx));
}

std::vector<std::size_t> IndexSampler::epoch(std::uint64_t epoch_index) const {
  Rng rng(derive_seed(seed_, epoch_index, 0x5a3b1e));
  std::vector<std::size_t> out(labels_.size());
  if (scheme_ == SamplerScheme::kNone || by_class_.size() <= 1) {
    std::iota(out.begin(), out.end(), std::size_t{0});
    std::shuffle(out.begin(), out.end(), rng);
    return out;
  }
  std::uniform_int_distribution<std::size_t> pick_class(0, by_class_.size() - 1);
  for (auto& o : out) {
    const auto& members = by_class_[pick_class(rng)];
    o = members[std::uniform_int_distribution<std::size_t>(0, members.size() - 1)(rng)];
  }
  return out;
}

}  // namespace oarsi
