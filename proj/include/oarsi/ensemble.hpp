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

// Snapshot ensembles: every member snapshot predicts, the per-task
// distributions are averaged, and the grade is the argmax.

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "oarsi/json_util.hpp"
#include "oarsi/model.hpp"
#include "oarsi/preprocess.hpp"
#include "oarsi/training.hpp"

namespace oarsi {

enum class AveragingDomain { kProbability, kLogit };
std::string to_string(AveragingDomain d);
AveragingDomain averaging_domain_from_string(const std::string& s);

/// One architecture and its per-fold snapshot stems.
struct EnsembleMember {
  std::vector<std::filesystem::path> snapshots;
};

struct EnsembleSpec {
  std::vector<EnsembleMember> members;
  AveragingDomain domain = AveragingDomain::kProbability;

  Json to_json() const;
  /// Relative snapshot paths resolve against `base`.
  static EnsembleSpec from_json(const Json& j, const std::filesystem::path& base = {});
};

/// Predictions of one model: [exam][head].
using MemberPredictions = std::vector<std::vector<TaskPrediction>>;

/// Element-wise mean over members. Values at each position are summed in
/// ascending order, so member order cannot change the result, and equal
/// inputs return that value exactly. kLogit averages log-probabilities
/// (equivalent to averaging logits up to a per-row constant) and applies
/// softmax.
MemberPredictions average_predictions(const std::vector<MemberPredictions>& members,
                                      AveragingDomain domain = AveragingDomain::kProbability);

class Ensemble {
 public:
  /// Loads every snapshot. All must share the head list (ConfigError).
  static Ensemble load(const EnsembleSpec& spec);
  static Ensemble from_snapshots(const std::vector<Snapshot>& snapshots,
                                 AveragingDomain domain = AveragingDomain::kProbability);

  const std::vector<HeadSpec>& heads() const { return heads_; }
  std::size_t size() const { return models_.size(); }
  const std::vector<std::string>& config_hashes() const { return hashes_; }

  MemberPredictions predict(const std::vector<const NormalizedImage*>& images, int threads = 1);

 private:
  std::vector<Model<float>> models_;
  std::vector<std::string> hashes_;
  std::vector<HeadSpec> heads_;
  AveragingDomain domain_ = AveragingDomain::kProbability;
};

/// exam_id, then per head `<task>_grade` and `<task>_p<k>` columns.
struct PredictionTable {
  std::vector<HeadSpec> heads;
  std::vector<std::string> exam_ids;
  MemberPredictions rows;
};

std::string format_predictions(const PredictionTable& table);
PredictionTable parse_predictions(const std::string& text, const std::string& context);
PredictionTable read_predictions(const std::filesystem::path& path);

}  // namespace oarsi
