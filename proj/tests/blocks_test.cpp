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
#include <random>

#include "oarsi/blocks.hpp"
#include "support/conv_oracle.hpp"
#include "support/gradcheck.hpp"

namespace oarsi {
namespace {

using testing::grad_check;
using testing::probe_loss;
using testing::random_tensor;
using TapeD = Tape<double>;
using TensorD = Tensor<double>;

constexpr double kGradTol = 1e-4;

std::vector<TensorD> trainable(const ParamList<double>& params) {
  std::vector<TensorD> out;
  for (const auto& p : params)
    if (!p.is_buffer) out.push_back(p.tensor);
  return out;
}

void fill(TensorD& t, double v) {
  for (auto& x : t.data()) x = v;
}

// ---------------------------------------------------------------------------
// SE gate

TEST(SeGate, ZeroWeightsHalveInput) {
  Rng rng(1);
  SeGate<double> se(4, 2, rng);
  fill(se.squeeze.weight, 0);
  fill(se.excite.weight, 0);
  std::mt19937_64 r(2);
  auto x = random_tensor({2, 4, 3, 3}, r);
  TapeD tape;
  auto y = se.forward(tape, x);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y[i], 0.5 * x[i]);
}

TEST(SeGate, ZeroInputGivesZero) {
  Rng rng(3);
  SeGate<double> se(8, 4, rng);
  TapeD tape;
  auto y = se.forward(tape, TensorD(Shape{1, 8, 2, 2}, 0.0));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(SeGate, MatchesSqueezeExciteScaleOracle) {
  Rng rng(4);
  SeGate<double> se(4, 2, rng);
  std::mt19937_64 r(5);
  se.squeeze.weight = random_tensor({2, 4}, r, -0.3, 0.3);
  se.squeeze.bias = random_tensor({2}, r, -0.1, 0.1);
  se.excite.weight = random_tensor({4, 2}, r, -0.3, 0.3);
  se.excite.bias = random_tensor({4}, r, -0.1, 0.1);
  auto x = random_tensor({1, 4, 2, 2}, r);
  TapeD tape;
  auto y = se.forward(tape, x);

  double avg[4], hidden[2], gate[4];
  for (int c = 0; c < 4; ++c) {
    avg[c] = 0;
    for (int i = 0; i < 4; ++i) avg[c] += x[static_cast<std::size_t>(c * 4 + i)] / 4;
  }
  for (int j = 0; j < 2; ++j) {
    double s = se.squeeze.bias[static_cast<std::size_t>(j)];
    for (int c = 0; c < 4; ++c) s += se.squeeze.weight[static_cast<std::size_t>(j * 4 + c)] * avg[c];
    hidden[j] = std::max(0.0, s);
  }
  for (int c = 0; c < 4; ++c) {
    double s = se.excite.bias[static_cast<std::size_t>(c)];
    for (int j = 0; j < 2; ++j) s += se.excite.weight[static_cast<std::size_t>(c * 2 + j)] * hidden[j];
    gate[c] = 1 / (1 + std::exp(-s));
  }
  for (int c = 0; c < 4; ++c)
    for (int i = 0; i < 4; ++i) {
      const auto k = static_cast<std::size_t>(c * 4 + i);
      EXPECT_NEAR(y[k], x[k] * gate[c], 1e-6);
    }
}

TEST(SeGate, OutputMagnitudeBoundedByInput) {
  Rng rng(6);
  SeGate<double> se(16, 4, rng);
  std::mt19937_64 r(7);
  auto x = random_tensor({3, 16, 4, 4}, r, -5, 5);
  TapeD tape;
  auto y = se.forward(tape, x);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_LE(std::abs(y[i]), std::abs(x[i]));
}

TEST(SeGate, ReductionMustDivideChannels) {
  Rng rng(8);
  EXPECT_THROW(SeGate<double>(6, 4, rng), ConfigError);
}

TEST(SeGate, GradientsMatchFiniteDifferences) {
  Rng rng(9);
  SeGate<double> se(8, 2, rng);
  std::mt19937_64 r(10);
  auto x = random_tensor({2, 8, 3, 3}, r);
  ParamList<double> ps;
  se.collect("se", ps);
  auto wrt = trainable(ps);
  wrt.push_back(x);
  auto res = grad_check(wrt, [&](TapeD& t) { return probe_loss(t, se.forward(t, x)); });
  EXPECT_LT(res.max_rel_error, kGradTol) << res.worst;
}

// ---------------------------------------------------------------------------
// residual blocks

TEST(BlockSpec, InvariantsAreChecked) {
  BlockSpec s;
  s.groups = 2;
  s.group_width = 4;
  EXPECT_THROW(s.validate(), ConfigError);  // grouped basic block
  BlockSpec b{BlockKind::kBottleneck, 16, 64, 1, 1, 0, true, 5};
  EXPECT_THROW(b.validate(), ConfigError);  // 5 does not divide 64
  BlockSpec ok{BlockKind::kBottleneck, 16, 64, 2, 8, 4, true, 16};
  EXPECT_NO_THROW(ok.validate());
  EXPECT_EQ(ok.mid_channels(), 32);
}

TEST(ResidualBlock, ZeroBranchWithIdentityShortcutIsRelu) {
  for (auto kind : {BlockKind::kBasic, BlockKind::kBottleneck}) {
    Rng rng(11);
    BlockSpec spec{kind, 8, 8, 1, 1, 0, true, 4};
    ResidualBlock<double> block(spec, rng);
    ASSERT_FALSE(block.has_projection());
    for (auto& c : block.convs) fill(c.weight, 0);
    std::mt19937_64 r(12);
    auto x = random_tensor({2, 8, 4, 4}, r);
    TapeD tape;
    auto y = block.forward(tape, x, Mode::kEval);
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y[i], std::max(0.0, x[i]));
  }
}

TEST(ResidualBlock, StrideTwoHalvesExtents) {
  Rng rng(13);
  ResidualBlock<double> block({BlockKind::kBasic, 4, 8, 2, 1, 0, false, 16}, rng);
  TapeD tape;
  auto y = block.forward(tape, TensorD(Shape{2, 4, 6, 8}, 0.5), Mode::kTrain);
  EXPECT_EQ(y.shape(), (Shape{2, 8, 3, 4}));
}

TEST(ResidualBlock, ChannelMismatchIsConfigError) {
  Rng rng(14);
  ResidualBlock<double> block({BlockKind::kBasic, 4, 4, 1, 1, 0, false, 16}, rng);
  TapeD tape;
  EXPECT_THROW(block.forward(tape, TensorD(Shape{1, 3, 4, 4}), Mode::kEval), ConfigError);
}

// Eval-mode batch norm as a pointwise affine map.
TensorD bn_eval(const TensorD& x, const BatchNorm2d<double>& bn) {
  TensorD out(x.shape());
  const auto C = x.dim(1), HW = x.dim(2) * x.dim(3);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const auto c = static_cast<std::size_t>((static_cast<std::int64_t>(i) / HW) % C);
    out[i] = (x[i] - bn.state.running_mean[c]) / std::sqrt(bn.state.running_var[c] + bn.state.eps) *
                 bn.gamma[c] +
             bn.beta[c];
  }
  return out;
}

TensorD relu_copy(TensorD x) {
  auto y = x.clone();
  for (auto& v : y.data()) v = std::max(0.0, v);
  return y;
}

TEST(ResidualBlock, GroupedBottleneckMatchesTwoPathOracle) {
  Rng rng(15);
  BlockSpec spec{BlockKind::kBottleneck, 8, 16, 2, 2, 4, false, 16};
  ResidualBlock<double> block(spec, rng);
  std::mt19937_64 r(16);
  for (auto& n : block.norms) {
    n.state.running_mean = random_tensor(n.gamma.shape(), r, -0.2, 0.2);
    n.state.running_var = random_tensor(n.gamma.shape(), r, 0.5, 1.5);
    n.gamma = random_tensor(n.gamma.shape(), r, 0.5, 1.5);
    n.beta = random_tensor(n.gamma.shape(), r, -0.2, 0.2);
  }
  auto x = random_tensor({2, 8, 6, 6}, r);
  TapeD tape;
  auto y = block.forward(tape, x, Mode::kEval);

  auto h = relu_copy(bn_eval(testing::direct_conv(x, block.convs[0].weight, 1, 0), block.norms[0]));
  h = relu_copy(bn_eval(testing::grouped_direct_conv(h, block.convs[1].weight, 2, 2, 1), block.norms[1]));
  h = bn_eval(testing::direct_conv(h, block.convs[2].weight, 1, 0), block.norms[2]);
  auto sc = bn_eval(testing::direct_conv(x, block.proj_conv.weight, 2, 0), block.proj_norm);
  ASSERT_EQ(y.shape(), h.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y[i], std::max(0.0, h[i] + sc[i]), 1e-10);
}

TEST(ResidualBlock, GradientsMatchFiniteDifferences) {
  const BlockSpec specs[] = {
      {BlockKind::kBasic, 4, 4, 1, 1, 0, false, 16},
      {BlockKind::kBasic, 4, 8, 2, 1, 0, true, 4},
      {BlockKind::kBottleneck, 8, 16, 2, 2, 4, true, 4},
  };
  int i = 0;
  for (const auto& spec : specs) {
    Rng rng(17 + i);
    ResidualBlock<double> block(spec, rng);
    std::mt19937_64 r(30 + i);
    auto x = random_tensor({2, spec.in_channels, 4, 4}, r);
    ParamList<double> ps;
    block.collect("b", ps);
    auto wrt = trainable(ps);
    wrt.push_back(x);
    for (auto mode : {Mode::kTrain, Mode::kEval}) {
      auto res = grad_check(wrt, [&](TapeD& t) { return probe_loss(t, block.forward(t, x, mode)); },
                            1e-5, 1e-3, 12);
      EXPECT_LT(res.max_rel_error, kGradTol) << "spec " << i << ": " << res.worst;
    }
    ++i;
  }
}

// ---------------------------------------------------------------------------
// pooling head

TEST(PoolHead, ZeroScoreMapEqualsGlobalAverage) {
  Rng rng(40);
  PoolHead<double> gwap({PoolingKind::kGwap, 0}, 3, rng);
  fill(gwap.score.weight, 0);
  std::mt19937_64 r(41);
  auto x = random_tensor({2, 3, 4, 5}, r);
  TapeD tape;
  auto y = gwap.forward(tape, x);
  auto avg = ops::global_avg_pool(tape, x);
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y[i], avg[i], 1e-12);
}

TEST(PoolHead, ConstantFeaturesGiveConstantForAllVariants) {
  for (auto spec : {PoolingSpec{PoolingKind::kAvg, 0}, PoolingSpec{PoolingKind::kGwap, 0},
                    PoolingSpec{PoolingKind::kGwapHidden, 4}}) {
    Rng rng(42);
    PoolHead<double> head(spec, 3, rng);
    TapeD tape;
    auto y = head.forward(tape, TensorD(Shape{2, 3, 3, 3}, -1.25));
    ASSERT_EQ(y.shape(), (Shape{2, 3}));
    for (double v : y.data()) EXPECT_NEAR(v, -1.25, 1e-12);
  }
}

TEST(PoolHead, FixedWeightMapMatchesWeightedSumOracle) {
  Rng rng(43);
  PoolHead<double> head({PoolingKind::kGwap, 0}, 2, rng);
  std::mt19937_64 r(44);
  head.score.weight = random_tensor({1, 2, 1, 1}, r);
  head.score.bias = TensorD(Shape{1}, 0.3);
  auto x = random_tensor({1, 2, 3, 3}, r);
  TapeD tape;
  auto y = head.forward(tape, x);

  double logits[9], w[9], z = 0;
  for (int i = 0; i < 9; ++i) {
    logits[i] = 0.3 + head.score.weight[0] * x[static_cast<std::size_t>(i)] +
                head.score.weight[1] * x[static_cast<std::size_t>(9 + i)];
    z += std::exp(logits[i]);
  }
  for (int i = 0; i < 9; ++i) w[i] = std::exp(logits[i]) / z;
  for (int c = 0; c < 2; ++c) {
    double s = 0;
    for (int i = 0; i < 9; ++i) s += w[i] * x[static_cast<std::size_t>(c * 9 + i)];
    EXPECT_NEAR(y[static_cast<std::size_t>(c)], s, 1e-6);
  }
}

TEST(PoolHead, WeightMapsSumToOnePerSample) {
  for (auto spec : {PoolingSpec{PoolingKind::kGwap, 0}, PoolingSpec{PoolingKind::kGwapHidden, 8}}) {
    Rng rng(45);
    PoolHead<double> head(spec, 6, rng);
    std::mt19937_64 r(46);
    auto x = random_tensor({3, 6, 5, 5}, r, -4, 4);
    TapeD tape;
    auto w = head.weight_map(tape, x);
    ASSERT_EQ(w.shape(), (Shape{3, 1, 5, 5}));
    for (int n = 0; n < 3; ++n) {
      double s = 0;
      for (int i = 0; i < 25; ++i) s += w[static_cast<std::size_t>(n * 25 + i)];
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(PoolHead, HiddenWidthMustBePositive) {
  Rng rng(47);
  EXPECT_THROW(PoolHead<double>({PoolingKind::kGwapHidden, 0}, 4, rng), ConfigError);
}

TEST(PoolHead, GradientsMatchFiniteDifferences) {
  for (auto spec : {PoolingSpec{PoolingKind::kGwap, 0}, PoolingSpec{PoolingKind::kGwapHidden, 3}}) {
    Rng rng(48);
    PoolHead<double> head(spec, 4, rng);
    std::mt19937_64 r(49);
    auto x = random_tensor({2, 4, 3, 3}, r);
    ParamList<double> ps;
    head.collect("pool", ps);
    auto wrt = trainable(ps);
    wrt.push_back(x);
    auto res = grad_check(wrt, [&](TapeD& t) { return probe_loss(t, head.forward(t, x)); });
    EXPECT_LT(res.max_rel_error, kGradTol) << res.worst;
  }
}

}  // namespace
}  // namespace oarsi
