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

#include <algorithm>
#include <cmath>
#include <random>

#include "oarsi/ensemble.hpp"
#include "oarsi/errors.hpp"
#include "support/training_fixtures.hpp"

namespace oarsi {
namespace {

Snapshot snapshot_for(const ModelConfig& cfg, std::uint64_t seed, int fold = 0) {
  Snapshot s;
  s.model = cfg;
  s.weights = Model<float>::build(cfg, seed).state();
  s.fold = fold;
  s.config_hash = "h";
  return s;
}

std::vector<const NormalizedImage*> pointers(const std::vector<Example>& ex) {
  std::vector<const NormalizedImage*> out;
  for (const auto& e : ex) out.push_back(&e.image);
  return out;
}

MemberPredictions random_member(std::mt19937_64& rng, std::size_t exams) {
  MemberPredictions m(exams);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  for (auto& row : m) {
    for (std::size_t t = 0; t < kNumTasks; ++t) {
      TaskPrediction p;
      double z = 0;
      for (int c = 0; c < kTaskClasses[t]; ++c) z += p.probabilities.emplace_back(u(rng));
      for (auto& v : p.probabilities) v /= z;
      row.push_back(p);
    }
  }
  return m;
}

TEST(Ensemble, IdenticalSnapshotsEqualSingleModel) {
  const auto cfg = testing::tiny_model_config();
  auto images = testing::render_examples(6, 1, "e");
  auto single = Ensemble::from_snapshots({snapshot_for(cfg, 3)});
  auto triple = Ensemble::from_snapshots({snapshot_for(cfg, 3), snapshot_for(cfg, 3), snapshot_for(cfg, 3)});
  const auto a = single.predict(pointers(images));
  const auto b = triple.predict(pointers(images), 2);
  ASSERT_EQ(a.size(), 6u);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t h = 0; h < kNumTasks; ++h) {
      EXPECT_EQ(a[i][h].probabilities, b[i][h].probabilities);
      EXPECT_EQ(a[i][h].grade, b[i][h].grade);
    }
}

TEST(Ensemble, TwoMemberArithmeticMean) {
  TaskPrediction p1{{0.2, 0.8}, 1}, p2{{0.6, 0.4}, 0};
  auto avg = average_predictions({{{p1}}, {{p2}}});
  EXPECT_NEAR(avg[0][0].probabilities[0], 0.4, 1e-15);
  EXPECT_NEAR(avg[0][0].probabilities[1], 0.6, 1e-15);
  EXPECT_EQ(avg[0][0].grade, 1);
}

TEST(Ensemble, TenMembersMatchExplicitSum) {
  std::mt19937_64 rng(5);
  std::vector<MemberPredictions> members;
  for (int m = 0; m < 10; ++m) members.push_back(random_member(rng, 8));
  const auto avg = average_predictions(members);
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t h = 0; h < kNumTasks; ++h) {
      double total = 0;
      for (std::size_t c = 0; c < avg[i][h].probabilities.size(); ++c) {
        double s = 0;
        for (const auto& m : members) s += m[i][h].probabilities[c];
        EXPECT_NEAR(avg[i][h].probabilities[c], s / 10, 1e-7);
        total += avg[i][h].probabilities[c];
      }
      EXPECT_NEAR(total, 1.0, 1e-6);
    }
}

TEST(Ensemble, MemberOrderDoesNotMatter) {
  std::mt19937_64 rng(6);
  std::vector<MemberPredictions> members;
  for (int m = 0; m < 5; ++m) members.push_back(random_member(rng, 4));
  const auto ref = average_predictions(members);
  for (int trial = 0; trial < 10; ++trial) {
    std::shuffle(members.begin(), members.end(), rng);
    const auto got = average_predictions(members);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t h = 0; h < kNumTasks; ++h) EXPECT_EQ(got[i][h].probabilities, ref[i][h].probabilities);
  }
}

TEST(Ensemble, LogitAveragingIsSoftmaxOfMeanLogProbability) {
  TaskPrediction p1{{0.2, 0.8}, 1}, p2{{0.6, 0.4}, 0};
  auto avg = average_predictions({{{p1}}, {{p2}}}, AveragingDomain::kLogit);
  const double a = std::sqrt(0.2 * 0.6), b = std::sqrt(0.8 * 0.4);
  EXPECT_NEAR(avg[0][0].probabilities[0], a / (a + b), 1e-12);
  EXPECT_EQ(avg[0][0].grade, 1);
}

TEST(Ensemble, HeadMismatchIsConfigError) {
  auto seven = testing::tiny_model_config();
  auto six = seven;
  six.include_kl_head = false;
  six.heads = default_heads(false);
  EXPECT_THROW(Ensemble::from_snapshots({snapshot_for(seven, 1), snapshot_for(six, 2)}), ConfigError);
  TaskPrediction p2{{0.5, 0.5}, 0}, p3{{0.2, 0.3, 0.5}, 2};
  EXPECT_THROW(average_predictions({{{p2}}, {{p3}}}), ConfigError);
}

TEST(Ensemble, SpecJson) {
  auto spec = EnsembleSpec::from_json(
      Json::parse(R"({"members":[{"snapshots":["a/fold0","a/fold1"]},{"snapshots":["/abs/fold0"]}]})"), "/base");
  ASSERT_EQ(spec.members.size(), 2u);
  EXPECT_EQ(spec.members[0].snapshots[1], std::filesystem::path("/base/a/fold1"));
  EXPECT_EQ(spec.members[1].snapshots[0], std::filesystem::path("/abs/fold0"));
  EXPECT_EQ(spec.domain, AveragingDomain::kProbability);
  EXPECT_THROW(EnsembleSpec::from_json(Json::parse(R"({"members":[],"x":1})")), ConfigError);
  EXPECT_THROW(EnsembleSpec::from_json(Json::parse(R"({"members":[]})")), ConfigError);
  EXPECT_THROW(EnsembleSpec::from_json(Json::parse(R"({"members":[{"snapshots":["a"]}],"averaging":"median"})")),
               ConfigError);
}

TEST(PredictionCsv, RoundTripIsExact) {
  std::mt19937_64 rng(7);
  PredictionTable t;
  t.heads = default_heads(true);
  t.rows = average_predictions({random_member(rng, 5), random_member(rng, 5)});
  for (int i = 0; i < 5; ++i) t.exam_ids.push_back("S000" + std::to_string(i) + "_R_0");
  t.exam_ids[2] = "odd,id";
  const auto text = format_predictions(t);
  auto back = parse_predictions(text, "mem");
  EXPECT_EQ(back.heads, t.heads);
  EXPECT_EQ(back.exam_ids, t.exam_ids);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t h = 0; h < kNumTasks; ++h) {
      EXPECT_EQ(back.rows[i][h].probabilities, t.rows[i][h].probabilities);
      EXPECT_EQ(back.rows[i][h].grade, t.rows[i][h].grade);
    }
  EXPECT_EQ(format_predictions(back), text);
  EXPECT_THROW(parse_predictions("id,KL_grade\n", "m"), ParseError);
  EXPECT_THROW(parse_predictions("exam_id,KL_grade,KL_p0,KL_p1\na,0,0.5\n", "m"), ParseError);
  EXPECT_THROW(parse_predictions("exam_id,KL_grade,KL_p0,KL_p1\na,2,0.5,0.5\n", "m"), DataError);
}

}  // namespace
}  // namespace oarsi
