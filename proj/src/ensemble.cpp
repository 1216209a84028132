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

#include "oarsi/ensemble.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include "oarsi/dataset.hpp"
#include "oarsi/errors.hpp"
#include "oarsi/parallel.hpp"
#include "oarsi/serialize.hpp"
#include "oarsi/text.hpp"

namespace oarsi {

namespace fs = std::filesystem;

std::string to_string(AveragingDomain d) { return d == AveragingDomain::kLogit ? "logit" : "probability"; }

AveragingDomain averaging_domain_from_string(const std::string& s) {
  if (s == "probability") return AveragingDomain::kProbability;
  if (s == "logit") return AveragingDomain::kLogit;
  throw ConfigError("averaging must be probability|logit, got '" + s + "'");
}

Json EnsembleSpec::to_json() const {
  Json members_j = Json::array();
  for (const auto& m : members) {
    Json snaps = Json::array();
    for (const auto& s : m.snapshots) snaps.push_back(s.generic_string());
    members_j.push_back(Json{{"snapshots", snaps}});
  }
  return Json{{"members", members_j}, {"averaging", to_string(domain)}};
}

EnsembleSpec EnsembleSpec::from_json(const Json& j, const fs::path& base) {
  reject_unknown_keys(j, {"members", "averaging"}, "ensemble");
  EnsembleSpec spec;
  std::string domain = "probability";
  read_opt(j, "averaging", domain, "ensemble");
  spec.domain = averaging_domain_from_string(domain);
  if (!j.contains("members") || !j["members"].is_array() || j["members"].empty()) {
    throw ConfigError("ensemble.members must be a non-empty array");
  }
  for (std::size_t i = 0; i < j["members"].size(); ++i) {
    const auto& mj = j["members"][i];
    const std::string ctx = "ensemble.members[" + std::to_string(i) + "]";
    reject_unknown_keys(mj, {"snapshots"}, ctx);
    std::vector<std::string> snaps;
    read_opt(mj, "snapshots", snaps, ctx);
    if (snaps.empty()) throw ConfigError(ctx + ".snapshots must be non-empty");
    EnsembleMember m;
    for (const auto& s : snaps) m.snapshots.push_back(resolve(base, s));
    spec.members.push_back(std::move(m));
  }
  return spec;
}

namespace {

double sorted_mean(std::vector<double>& values) {
  std::sort(values.begin(), values.end());
  if (values.front() == values.back()) return values.front();
  double s = 0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

}  // namespace

MemberPredictions average_predictions(const std::vector<MemberPredictions>& members,
                                      AveragingDomain domain) {
  if (members.empty()) throw UsageError("average of zero ensemble members");
  const auto& ref = members.front();
  for (const auto& m : members) {
    if (m.size() != ref.size()) throw UsageError("ensemble members predicted different exam counts");
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (m[i].size() != ref[i].size()) throw ConfigError("ensemble members have different head counts");
      for (std::size_t h = 0; h < m[i].size(); ++h) {
        if (m[i][h].probabilities.size() != ref[i][h].probabilities.size()) {
          throw ConfigError("ensemble members disagree on class count of head " + std::to_string(h));
        }
      }
    }
  }
  MemberPredictions out(ref.size());
  std::vector<double> column(members.size());
  for (std::size_t i = 0; i < ref.size(); ++i) {
    out[i].resize(ref[i].size());
    for (std::size_t h = 0; h < ref[i].size(); ++h) {
      const std::size_t k = ref[i][h].probabilities.size();
      auto& probs = out[i][h].probabilities;
      probs.assign(k, 0.0);
      for (std::size_t c = 0; c < k; ++c) {
        for (std::size_t m = 0; m < members.size(); ++m) {
          const double p = members[m][i][h].probabilities[c];
          column[m] = domain == AveragingDomain::kLogit ? std::log(std::max(p, 1e-300)) : p;
        }
        probs[c] = sorted_mean(column);
      }
      if (domain == AveragingDomain::kLogit) {
        const double mx = *std::max_element(probs.begin(), probs.end());
        double z = 0;
        for (auto& v : probs) z += v = std::exp(v - mx);
        for (auto& v : probs) v /= z;
      }
      out[i][h].grade = static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
    }
  }
  return out;
}

Ensemble Ensemble::from_snapshots(const std::vector<Snapshot>& snapshots, AveragingDomain domain) {
  if (snapshots.empty()) throw ConfigError("ensemble needs at least one snapshot");
  Ensemble e;
  e.domain_ = domain;
  e.heads_ = snapshots.front().model.heads;
  for (const auto& s : snapshots) {
    if (s.model.heads != e.heads_) {
      throw ConfigError("ensemble snapshot (fold " + std::to_string(s.fold) +
                        ") has a different head list than the first member");
    }
    auto m = Model<float>::build(s.model, 0);
    m.load_state(s.weights);
    e.models_.push_back(std::move(m));
    e.hashes_.push_back(s.config_hash);
  }
  return e;
}

Ensemble Ensemble::load(const EnsembleSpec& spec) {
  std::vector<Snapshot> snaps;
  for (const auto& m : spec.members)
    for (const auto& stem : m.snapshots) snaps.push_back(Snapshot::load(stem));
  return from_snapshots(snaps, spec.domain);
}

MemberPredictions Ensemble::predict(const std::vector<const NormalizedImage*>& images, int threads) {
  std::vector<MemberPredictions> per(models_.size());
  parallel_for(models_.size(), threads, [&](std::size_t m) { per[m] = predict_examples(models_[m], images); });
  return average_predictions(per, domain_);
}

// ---------------------------------------------------------------------------
// prediction CSV

std::string format_predictions(const PredictionTable& table) {
  std::ostringstream os;
  os << "exam_id";
  for (const auto& h : table.heads) {
    os << ',' << h.task << "_grade";
    for (int c = 0; c < h.classes; ++c) os << ',' << h.task << "_p" << c;
  }
  os << '\n';
  for (std::size_t i = 0; i < table.exam_ids.size(); ++i) {
    os << csv_escape(table.exam_ids[i]);
    for (std::size_t h = 0; h < table.heads.size(); ++h) {
      const auto& p = table.rows[i][h];
      os << ',' << p.grade;
      for (double v : p.probabilities) os << ',' << format_double(v);
    }
    os << '\n';
  }
  return os.str();
}

PredictionTable parse_predictions(const std::string& text, const std::string& context) {
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 1;
  auto where = [&] { return context + ":" + std::to_string(lineno); };
  if (!std::getline(is, line)) throw ParseError(context + ": empty prediction file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv_line(line);
  if (header.empty() || header[0] != "exam_id") throw ParseError(where() + ": first column must be exam_id");
  PredictionTable t;
  for (std::size_t c = 1; c < header.size();) {
    const auto& col = header[c];
    const auto pos = col.rfind("_grade");
    if (pos == std::string::npos || pos + 6 != col.size()) {
      throw ParseError(where() + ": expected a <task>_grade column, found '" + col + "'");
    }
    HeadSpec h{col.substr(0, pos), 0};
    ++c;
    while (c < header.size() && header[c] == h.task + "_p" + std::to_string(h.classes)) {
      ++h.classes;
      ++c;
    }
    if (h.classes < 2) throw ParseError(where() + ": task " + h.task + " needs at least 2 probability columns");
    t.heads.push_back(h);
  }
  if (t.heads.empty()) throw ParseError(where() + ": no task columns");
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != header.size()) {
      throw ParseError(where() + ": expected " + std::to_string(header.size()) + " fields, found " +
                       std::to_string(f.size()));
    }
    t.exam_ids.push_back(f[0]);
    std::vector<TaskPrediction> row;
    std::size_t c = 1;
    for (const auto& h : t.heads) {
      TaskPrediction p;
      auto parse_field = [&](auto& out) {
        const auto& s = f[c];
        auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
        if (ec != std::errc() || ptr != s.data() + s.size()) {
          throw ParseError(where() + ": bad value '" + s + "' in column " + header[c]);
        }
        ++c;
      };
      parse_field(p.grade);
      p.probabilities.resize(static_cast<std::size_t>(h.classes));
      for (auto& v : p.probabilities) parse_field(v);
      if (p.grade < 0 || p.grade >= h.classes) {
        throw DataError(where() + ": " + h.task + " grade " + std::to_string(p.grade) + " out of range");
      }
      row.push_back(std::move(p));
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

PredictionTable read_predictions(const fs::path& path) { return parse_predictions(read_file(path), path.string()); }

}  // namespace oarsi
