// Copyright 2026 The gradleak Authors
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

#include "gradleak/error.hpp"
#include "gradleak/model.hpp"
#include "oracles.hpp"

namespace gradleak {
namespace {

using testing::PerturbedParams;
using testing::ToyConfig;

Sample LmSample() {
  Sample s;
  s.ids = {2, 10, 20, 30, 40, 50};
  s.targets = {10, 20, 30, 40, 50, 3};
  return s;
}

class GradientCheck : public ::testing::TestWithParam<LabelMode> {};

TEST_P(GradientCheck, AnalyticMatchesCentralDifferences) {
  const ModelConfig config = ToyConfig(GetParam());
  const ModelParams params = PerturbedParams(config, 0.1, 11);
  Sample s = LmSample();
  s.label = 1;
  const auto checks = testing::FiniteDifferenceCheck(params, s, 50, 1e-5, 1e-6, 12);
  EXPECT_EQ(checks.size(), 7U);
  for (const auto& c : checks) {
    EXPECT_GE(c.checked, 50U) << c.group;
    EXPECT_LT(c.worst_rel, 1e-4) << c.group;
  }
}

INSTANTIATE_TEST_SUITE_P(Modes, GradientCheck,
                         ::testing::Values(LabelMode::kNextToken, LabelMode::kClassification));

TEST(Backward, ReportsTheForwardLoss) {
  const ModelParams params = PerturbedParams(ToyConfig(), 0.05, 2);
  const Sample s = LmSample();
  double loss = 0.0;
  Backward(params, s, &loss);
  EXPECT_NEAR(loss, Loss(params, s), 1e-12);
  EXPECT_NEAR(loss, Forward(params, s).loss, 1e-12);
}

TEST(Backward, ClassifierGetsNoGradientInNextTokenMode) {
  const ModelParams params = PerturbedParams(ToyConfig(LabelMode::kNextToken), 0.05, 4);
  ASSERT_TRUE(params.tensors.Contains("cls.W"));
  const GradientBundle g = Backward(params, LmSample());
  EXPECT_EQ(g.grads.at("cls.W").cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(g.grads.at("cls.b").cwiseAbs().maxCoeff(), 0.0);
  EXPECT_GT(g.grads.at("tok_emb").cwiseAbs().maxCoeff(), 0.0);
}

TEST(InitParams, IsSeededAndUsesUnitGains) {
  const ModelConfig config = ToyConfig();
  const ModelParams a = InitParams(config);
  const ModelParams b = InitParams(config);
  EXPECT_EQ(a.tensors.at("tok_emb"), b.tensors.at("tok_emb"));
  EXPECT_EQ(a.tensors.at("layer1.ln1.gain"), Matrix::Ones(1, 32));
  EXPECT_EQ(a.tensors.at("layer1.b_Q"), Matrix::Zero(1, 32));
  ModelConfig other = config;
  other.seed = config.seed + 1;
  EXPECT_NE(InitParams(other).tensors.at("tok_emb"), a.tensors.at("tok_emb"));
}

TEST(ApplyLayerNorm, NormalizesRows) {
  Matrix x(2, 4);
  x << 1, 2, 3, 4, -1, 0, 5, 2;
  const Matrix y = ApplyLayerNorm(x, Matrix::Ones(1, 4), Matrix::Zero(1, 4));
  for (Eigen::Index r = 0; r < 2; ++r) {
    EXPECT_NEAR(y.row(r).mean(), 0.0, 1e-12);
    const double var = y.row(r).array().square().mean();
    // eps = 1e-5 keeps the variance slightly under 1.
    EXPECT_NEAR(var, 1.0, 1e-4);
  }
}

TEST(Embed, AddsTokenAndPositionRows) {
  const ModelParams params = InitParams(ToyConfig());
  const Matrix e = Embed(params, {5, 7}, 1);
  const Matrix expected = params.tensors.at("tok_emb").row(7) + params.tensors.at("pos_emb").row(2);
  EXPECT_EQ(e.row(1), expected);
}

TEST(IncrementalModel, AgreesWithForward) {
  const ModelParams params = PerturbedParams(ToyConfig(), 0.05, 4);
  const Sample s = LmSample();
  const ForwardResult full = Forward(params, s);
  const IncrementalModel model(params);
  PrefixState state = model.Start({s.ids[0]});
  for (std::size_t t = 1; t < s.ids.size(); ++t) {
    for (std::size_t layer = 1; layer <= 2; ++layer) {
      const Vector q = model.QueryInputAt(state, s.ids[t], layer);
      const Vector expected = full.query_inputs[layer - 1].row(static_cast<Eigen::Index>(t)).transpose();
      EXPECT_LT((q - expected).norm(), 1e-10) << "t=" << t << " layer=" << layer;
    }
    state = model.Extend(state, s.ids[t]);
  }
  const Vector last = full.final_hidden.row(full.final_hidden.rows() - 1).transpose();
  EXPECT_LT((state.final_hidden - last).norm(), 1e-10);
}

TEST(IncrementalModel, BatchedQueryInputsMatchSingle) {
  const ModelParams params = PerturbedParams(ToyConfig(), 0.05, 5);
  const IncrementalModel model(params);
  const PrefixState state = model.Start({2, 17, 33});
  const std::vector<TokenId> options{4, 9, 100, 255};
  for (std::size_t layer = 1; layer <= 2; ++layer) {
    const Matrix rows = model.QueryInputsAt(state, options, layer);
    ASSERT_EQ(rows.rows(), 4);
    for (std::size_t i = 0; i < options.size(); ++i) {
      const Vector single = model.QueryInputAt(state, options[i], layer);
      EXPECT_LT((rows.row(static_cast<Eigen::Index>(i)).transpose() - single).norm(), 1e-12);
    }
  }
  EXPECT_THROW(model.QueryInputsAt(state, {256}, 2), Error);
  EXPECT_THROW(model.QueryInputsAt(state, {4}, 3), Error);
}

TEST(LmPriorScore, IsTiedHeadLogit) {
  const ModelParams params = PerturbedParams(ToyConfig(), 0.05, 6);
  const TokenSeq prefix{2, 40, 41};
  const Vector logits = NextTokenLogits(params, prefix);
  EXPECT_NEAR(LmPriorScore(params, prefix, 77), logits(77), 1e-10);
  EXPECT_EQ(LmPriorScore(params, {}, 77), 0.0);
}

TEST(HeadSlice, TakesTheHeadColumns) {
  const ModelParams params = PerturbedParams(ToyConfig(), 0.05, 7);
  const GradientBundle g = Backward(params, LmSample());
  const Matrix slice = HeadSlice(g, params.config, 2, ProjRole::kV, 3);
  EXPECT_EQ(slice, g.grads.at("layer2.W_V").middleCols(24, 8));
}

TEST(ModelConfig, ValidateRejectsBadShapes) {
  ModelConfig c = ToyConfig();
  c.heads = 5;
  EXPECT_THROW(c.Validate(), Error);
  c = ToyConfig();
  c.layers = 0;
  EXPECT_THROW(c.Validate(), Error);
  EXPECT_NO_THROW(ToyConfig().Validate());
}

TEST(Samples, LanguageModelTargetsAreShifted) {
  const Tokenizer tok({"<pad>", "<unk>", "<bos>", "<eos>", "a", "b"});
  const Sample s = MakeLmSample(tok, {4, 5});
  EXPECT_EQ(s.ids, (TokenSeq{2, 4, 5}));
  EXPECT_EQ(s.targets, (TokenSeq{4, 5, 3}));
  const Sample c = MakeClassificationSample(tok, {5}, 1);
  EXPECT_EQ(c.ids, (TokenSeq{2, 5}));
  EXPECT_EQ(c.label, 1);
}

}  // namespace
}  // namespace gradleak
