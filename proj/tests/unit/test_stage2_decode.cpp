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

#include <algorithm>
#include <cmath>
#include <memory>

#include "gradleak/error.hpp"
#include "gradleak/federation.hpp"
#include "gradleak/stage2_decode.hpp"
#include "oracles.hpp"

namespace gradleak {
namespace {

TEST(Standardize, ZeroMeanUnitVariance) {
  const std::vector<double> z = Standardize({1.0, 2.0, 3.0, 6.0});
  double mean = 0.0, var = 0.0;
  for (double v : z) mean += v / 4.0;
  for (double v : z) var += (v - mean) * (v - mean) / 4.0;
  EXPECT_NEAR(mean, 0.0, 1e-15);
  EXPECT_NEAR(var, 1.0, 1e-14);
  EXPECT_EQ(Standardize({5.0, 5.0}), (std::vector<double>{0.0, 0.0}));
  EXPECT_TRUE(Standardize({}).empty());
}

TEST(ScaleDistances, LogRatioAgainstMedian) {
  Stage2Config cfg;
  const std::vector<double> raw{0.0, 2.0, 4.0};
  const std::vector<double> out = ScaleDistances(raw, cfg);
  EXPECT_DOUBLE_EQ(out[0], std::log(cfg.geo_floor));
  EXPECT_DOUBLE_EQ(out[1], std::log(1.0 + cfg.geo_floor));
  EXPECT_DOUBLE_EQ(out[2], std::log(2.0 + cfg.geo_floor));
  // All exact fits: the median is zero and every cost sits at the floor.
  for (double v : ScaleDistances({0.0, 0.0, 1.0}, cfg)) EXPECT_DOUBLE_EQ(v, std::log(cfg.geo_floor));

  cfg.geo_scale = Stage2Config::GeoScale::kRaw;
  EXPECT_EQ(ScaleDistances(raw, cfg), raw);
  cfg.geo_scale = Stage2Config::GeoScale::kStandardized;
  EXPECT_EQ(ScaleDistances(raw, cfg), Standardize(raw));
}

TEST(StepCost, SubtractsWeightedLmScore) {
  Stage2Config cfg;
  cfg.beta_lm = 0.5;
  EXPECT_DOUBLE_EQ(StepCost(1.0, 2.0, cfg), 0.0);
  EXPECT_DOUBLE_EQ(StepCost(-1.0, -2.0, cfg), 0.0);
}

TEST(HypothesisScore, NormalizesAndPenalizesRepeats) {
  Stage2Config cfg;
  cfg.lambda_div = 0.15;
  cfg.lambda_ng = 0.2;
  cfg.ngram_n = 2;
  BeamHypothesis h;
  AdvanceHypothesis(h, 10, 1.0, 1.0, cfg);
  AdvanceHypothesis(h, 11, 2.0, 1.5, cfg);
  EXPECT_DOUBLE_EQ(h.sum, 3.0);
  EXPECT_EQ(h.tokens, (TokenSeq{10, 11}));
  // New token, new bigram.
  EXPECT_DOUBLE_EQ(HypothesisScore(h, 12, 3.0, cfg), 2.0);
  // Seen token, new bigram (11, 10).
  EXPECT_DOUBLE_EQ(HypothesisScore(h, 10, 3.0, cfg), 2.0 + 0.15);
  AdvanceHypothesis(h, 10, 0.0, 1.0, cfg);
  // Token 11 after 10 repeats both the token and the bigram (10, 11).
  EXPECT_DOUBLE_EQ(HypothesisScore(h, 11, 1.0, cfg), 1.0 + 0.15 + 0.2);
  cfg.length_normalize = false;
  EXPECT_DOUBLE_EQ(HypothesisScore(h, 12, 1.0, cfg), 4.0);
}

TEST(Stage2Config, Validation) {
  EXPECT_NO_THROW(Stage2Config{}.Validate());
  Stage2Config cfg;
  cfg.beam_width = 6;
  cfg.groups = 4;
  EXPECT_THROW(cfg.Validate(), Error);
  cfg = Stage2Config{};
  cfg.zero_rel = 1.0;
  EXPECT_THROW(cfg.Validate(), Error);
  cfg = Stage2Config{};
  cfg.tau_pos = 0.0;
  EXPECT_THROW(cfg.Validate(), Error);
}

// Hand-built pool over 8 tokens and 3 positions.
TokenPool SyntheticPool() {
  TokenPool pool;
  pool.max_len = 3;
  CandidateTable& t = pool.table;
  t.vocab = 8;
  t.max_len = 3;
  const std::size_t n = t.vocab * t.max_len;
  t.eligible.assign(n, 1);
  t.sub.assign(n, 1.0);
  t.cons.assign(n, 0.0);
  t.sparse.assign(n, 0.0);
  t.total.assign(n, 0.0);
  t.rel.assign(n, 0.5);
  for (std::size_t p = 0; p < 3; ++p) t.eligible[t.index(0, p)] = 0;
  for (std::size_t v = 0; v < 8; ++v) t.sub[t.index(static_cast<TokenId>(v), 2)] = 8.0 - v;
  // In span: two tokens at positions 0 and 1, none at position 2.
  t.rel[t.index(4, 0)] = 1e-9;
  t.rel[t.index(5, 0)] = 1e-9;
  t.rel[t.index(4, 1)] = 1e-9;
  t.rel[t.index(0, 1)] = 1e-9;  // ineligible, ignored
  pool.by_position.resize(3);
  auto add = [&](TokenId tok, std::size_t pos, double s_sub) {
    pool.by_position[pos].push_back(pool.entries.size());
    pool.entries.push_back(PoolEntry{tok, pos, s_sub, 0.0, 0.0, 0.0});
  };
  add(1, 0, 0.1);
  add(2, 0, 0.2);
  add(3, 0, 0.3);
  add(6, 0, 0.4);
  add(7, 0, 0.5);
  return pool;
}

TEST(PositionalFilter, QuantileOfPositionScores) {
  const TokenPool pool = SyntheticPool();
  // Scores 0.1..0.5: the 0.5 quantile is 0.3, strictly below keeps 1 and 2.
  EXPECT_EQ(PositionalFilter(pool, 0, 0.5), (std::vector<TokenId>{1, 2}));
  EXPECT_EQ(PositionalFilter(pool, 0, 1.0), (std::vector<TokenId>{1, 2, 3, 6, 7}));
  EXPECT_EQ(PositionalFilter(pool, 0, 0.5, 16, 0.05), (std::vector<TokenId>{1, 2, 4, 5}));
}

TEST(PositionalFilter, KeepRuleReachesBeyondThePool) {
  const TokenPool pool = SyntheticPool();
  // No pool entries at position 1; token 4 is in span there, token 0 is not eligible.
  EXPECT_EQ(PositionalFilter(pool, 1, 0.25, 16, 0.05), (std::vector<TokenId>{4}));
}

TEST(PositionalFilter, FallbackTakesLowestSubspaceScores) {
  const TokenPool pool = SyntheticPool();
  // sub at position 2 is 8 - v, so the best three eligible tokens are 7, 6, 5.
  EXPECT_EQ(PositionalFilter(pool, 2, 0.25, 3, 0.05), (std::vector<TokenId>{5, 6, 7}));
  EXPECT_THROW(PositionalFilter(pool, 3, 0.25), Error);
}

TEST(DetectLengths, LastOccupiedPositionAndDrops) {
  const TokenPool pool = SyntheticPool();
  // Counts 2, 1, 0: drops after position 1 (size 1) and 2 (size 1).
  EXPECT_EQ(DetectLengths(pool, 0.05), (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(DetectLengths(pool, 0.05, 1), (std::vector<std::size_t>{2}));
  // Nothing in span: fall back to the full length.
  EXPECT_EQ(DetectLengths(pool, 1e-12), (std::vector<std::size_t>{3}));
}

class DecodeTest : public ::testing::Test {
 protected:
  void SetUp() override {
    tok_ = std::make_unique<Tokenizer>(Tokenizer::FromFile(testing::SourcePath("data/vocab.txt")));
    corpus_ = LoadCorpus(testing::SourcePath("data/short_lines.txt"), *tok_, 10);
    ModelConfig c = testing::ToyConfig();
    c.max_pos = 11;
    c.seed = 7;
    params_ = InitParams(c);
  }
  std::unique_ptr<Tokenizer> tok_;
  Corpus corpus_;
  ModelParams params_;
};

TEST_F(DecodeTest, TruePrefixesHaveZeroLayerTwoDistance) {
  const FedRound round = SimulateRound(params_, *tok_, corpus_, 1, ProtocolSpec{}, 4);
  const Layer2Geometry geo = BuildLayer2Geometry(round.observed, params_.config, {0, 1, 2, 3},
                                                 kDefaultRankTol);
  const IncrementalModel model(params_);
  const TokenSeq& ids = round.batch[0].ids;
  for (std::size_t t = 1; t < ids.size(); ++t) {
    const TokenSeq prefix(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(t));
    EXPECT_LT(GeoDistance(model, prefix, ids[t], geo), 1e-8) << "step " << t;
  }
  // A token never seen in the batch is off the span at the first position.
  TokenId other = 4;
  while (std::find(ids.begin(), ids.end(), other) != ids.end()) ++other;
  EXPECT_GT(GeoDistance(model, {ids[0]}, other, geo), 1e-4);
  EXPECT_THROW(BuildLayer2Geometry(round.observed, params_.config, {}, kDefaultRankTol), Error);
  EXPECT_THROW(BuildLayer2Geometry(round.observed, params_.config, {4}, kDefaultRankTol), Error);
}

TEST_F(DecodeTest, RecoversTheSentenceAtBatchSizeOne) {
  Stage1Config s1;
  Stage2Config s2;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const FedRound round = SimulateRound(params_, *tok_, corpus_, 1, ProtocolSpec{}, seed);
    const TokenPool pool = BuildTokenPool(round.observed, *tok_, params_, s1, 10);
    const DecodeResult result = RunDecoding(pool, round.observed, params_, s2);
    const TokenSeq& ids = round.batch[0].ids;
    const TokenSeq words(ids.begin() + 1, ids.end());
    ASSERT_FALSE(result.candidates.empty());
    EXPECT_EQ(result.candidates.front().tokens, words) << "seed " << seed;
    EXPECT_NE(std::find(result.lengths.begin(), result.lengths.end(), words.size()),
              result.lengths.end());
    for (std::size_t i = 1; i < result.candidates.size(); ++i) {
      EXPECT_LE(result.candidates[i - 1].score, result.candidates[i].score);
    }
  }
}

TEST_F(DecodeTest, FixedLengthsAreHonoured) {
  const FedRound round = SimulateRound(params_, *tok_, corpus_, 2, ProtocolSpec{}, 2);
  const TokenPool pool = BuildTokenPool(round.observed, *tok_, params_, Stage1Config{}, 10);
  Stage2Config cfg;
  cfg.beam_width = 4;
  cfg.groups = 2;
  cfg.end_rel = 0.0;
  cfg.candidate_lengths = {3, 2};
  const DecodeResult result = RunDecoding(pool, round.observed, params_, cfg);
  EXPECT_EQ(result.lengths, (std::vector<std::size_t>{2, 3}));
  for (const DecodedCandidate& c : result.candidates) {
    EXPECT_TRUE(c.tokens.size() == 2 || c.tokens.size() == 3);
    EXPECT_LT(c.group, 2U);
  }
}

}  // namespace
}  // namespace gradleak
