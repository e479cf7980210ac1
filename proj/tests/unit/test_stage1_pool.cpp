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
#include <random>
#include <set>

#include "gradleak/error.hpp"
#include "gradleak/federation.hpp"
#include "gradleak/stage1_pool.hpp"
#include "oracles.hpp"

namespace gradleak {
namespace {

Vector RandomVector(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> n01;
  Vector v(static_cast<Eigen::Index>(n));
  for (auto& x : v) x = n01(rng);
  return v;
}

TEST(Sparsity, GlobalCountIsTheSumOfBlockCounts) {
  std::mt19937_64 rng(31);
  const std::size_t blocks = 4;
  const std::size_t width = 8;
  for (int trial = 0; trial < 100; ++trial) {
    const Vector u = RandomVector(blocks * width, rng);
    const Vector tau = RandomVector(blocks * width, rng).cwiseAbs();
    std::size_t sum = 0;
    for (std::size_t b = 0; b < blocks; ++b) {
      const auto c0 = static_cast<Eigen::Index>(b * width);
      sum += SubThresholdCount(u.segment(c0, width), tau.segment(c0, width));
    }
    EXPECT_EQ(SubThresholdCount(u, tau), sum);
  }
}

TEST(Sparsity, CountsEntriesAtOrBelowThreshold) {
  Vector u(4), tau(4);
  u << 0.5, -1.0, 2.0, 0.0;
  tau << 0.5, 0.9, 3.0, 0.0;
  EXPECT_EQ(SubThresholdCount(u, tau), 3U);
  EXPECT_THROW(SubThresholdCount(u, Vector::Zero(3)), Error);
}

TEST(Sparsity, FitUsesScaledColumnMedians) {
  Matrix r(3, 4);
  r << 1, -2, 0, 4,
       3, 1, 0, -8,
       -2, 5, 1, 2;
  const SparsityModel m = FitSparsityModel(r, 2, 0.5, 1);
  // Medians of |column|: 2, 2, 0, 4.
  EXPECT_DOUBLE_EQ(m.tau(0), 1.0);
  EXPECT_DOUBLE_EQ(m.tau(1), 1.0);
  EXPECT_DOUBLE_EQ(m.tau(2), 0.0);
  EXPECT_DOUBLE_EQ(m.tau(3), 2.0);
  EXPECT_EQ(m.block_width, 2U);
  ASSERT_EQ(m.top_blocks.size(), 1U);
  // Block 0 has 1/6 of entries under threshold (row 0 col 0 is 1 <= 1; others exceed);
  // block 1 has rows 0 and 1 of col 2 (0 <= 0), so block 1 is sparser.
  EXPECT_EQ(m.top_blocks[0], 1U);
  const Vector row = r.row(0).transpose();
  EXPECT_DOUBLE_EQ(BlockSparsity(row, m, 0), 0.5);
  EXPECT_DOUBLE_EQ(SparsityScore(row, m), BlockSparsity(row, m, 1));
  EXPECT_THROW(FitSparsityModel(Matrix(0, 4), 2, 0.5, 1), Error);
}

TEST(Scores, AggregateAndConsistency) {
  const std::vector<double> s{1.0, 3.0};
  EXPECT_DOUBLE_EQ(AggregateSubspace(s), 2.0);
  EXPECT_DOUBLE_EQ(ConsistencyScore(s), 1.0);
  const std::vector<double> one{5.0};
  EXPECT_DOUBLE_EQ(ConsistencyScore(one), 0.0);
}

TEST(Scores, MinMaxNormalizeRespectsMask) {
  std::vector<double> v{2.0, 4.0, 100.0, 3.0};
  MinMaxNormalize(v, {1, 1, 0, 1});
  EXPECT_EQ(v, (std::vector<double>{0.0, 1.0, 100.0, 0.5}));
  std::vector<double> flat{7.0, 7.0};
  MinMaxNormalize(flat, {1, 1});
  EXPECT_EQ(flat, (std::vector<double>{0.0, 0.0}));
}

TEST(HeadSubspaceScore, ZeroInsideTheSpan) {
  const Matrix z = testing::RandomRankMatrix(6, 8, 6, 2);
  // Span of 3 of the rows in R^8.
  const Matrix grad = z.topRows(3).transpose();
  const SubspaceProjector span = InputSpanProjector(grad, kDefaultRankTol);
  const Matrix w = testing::RandomRankMatrix(8, 8, 8, 3);
  EXPECT_LT(HeadSubspaceScore(z.row(1).transpose(), span, w, 1, 4), 1e-10);
  EXPECT_GT(HeadSubspaceScore(z.row(4).transpose(), span, w, 1, 4), 1e-3);
  EXPECT_THROW(HeadSubspaceScore(z.row(4).transpose(), span, w, 2, 4), Error);
}

TEST(SelectActiveHeads, PicksLargestSlicesWithLowIndexTies) {
  ModelConfig config = testing::ToyConfig();
  GradientBundle g;
  Matrix q = Matrix::Zero(32, 32);
  q.middleCols(8, 8).setConstant(2.0);   // head 1
  q.middleCols(16, 8).setConstant(1.0);  // head 2
  q.middleCols(24, 8).setConstant(1.0);  // head 3 ties head 2
  g.grads.Add("layer1.W_Q", q);
  EXPECT_EQ(SelectActiveHeads(g, config, 1), (std::vector<std::size_t>{1}));
  EXPECT_EQ(SelectActiveHeads(g, config, 2), (std::vector<std::size_t>{1, 2}));
  EXPECT_THROW(SelectActiveHeads(g, config, 5), Error);
}

class PoolTest : public ::testing::Test {
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

TEST_F(PoolTest, TruePairsAreInSpanAndPooledAtBatchSizeOne) {
  Stage1Config cfg;
  cfg.pool_size = 40;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const FedRound round = SimulateRound(params_, *tok_, corpus_, 1, ProtocolSpec{}, seed);
    const TokenPool pool = BuildTokenPool(round.observed, *tok_, params_, cfg, 10);
    EXPECT_EQ(pool.entries.size(), 40U);
    const Sample& s = round.batch[0];
    for (std::size_t t = 1; t < s.ids.size(); ++t) {
      const std::size_t pos = t - 1;
      const std::size_t idx = pool.table.index(s.ids[t], pos);
      EXPECT_LT(pool.table.rel[idx], 1e-8);
      bool pooled = false;
      for (std::size_t i : pool.by_position[pos]) pooled |= pool.entries[i].token == s.ids[t];
      EXPECT_TRUE(pooled) << "seed " << seed << " pos " << pos;
    }
  }
}

TEST_F(PoolTest, EntriesAreSortedAndSpecialsExcluded) {
  const FedRound round = SimulateRound(params_, *tok_, corpus_, 2, ProtocolSpec{}, 1);
  Stage1Config cfg;
  cfg.pool_size = 80;
  const TokenPool pool = BuildTokenPool(round.observed, *tok_, params_, cfg, 10);
  for (std::size_t i = 1; i < pool.entries.size(); ++i) {
    EXPECT_LE(pool.entries[i - 1].s_total, pool.entries[i].s_total);
  }
  std::size_t listed = 0;
  for (const auto& ids : pool.by_position) listed += ids.size();
  EXPECT_EQ(listed, pool.entries.size());
  // Oracle: min-max normalize each raw score over eligible pairs and combine.
  const CandidateTable& t = pool.table;
  auto range = [&](const std::vector<double>& v) {
    double lo = INFINITY, hi = -INFINITY;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!t.eligible[i]) continue;
      lo = std::min(lo, v[i]);
      hi = std::max(hi, v[i]);
    }
    return std::pair{lo, hi};
  };
  const auto [sl, sh] = range(t.sub);
  const auto [cl, ch] = range(t.cons);
  const auto [pl, ph] = range(t.sparse);
  auto norm = [](double x, double lo, double hi) { return hi > lo ? (x - lo) / (hi - lo) : 0.0; };
  auto total = [&](std::size_t i) {
    return cfg.lambda_sub * norm(t.sub[i], sl, sh) + cfg.lambda_cons * norm(t.cons[i], cl, ch) -
           cfg.lambda_sparse * norm(t.sparse[i], pl, ph);
  };
  std::set<std::size_t> pooled;
  for (const PoolEntry& e : pool.entries) {
    EXPECT_TRUE(e.token == tok_->unk_id() || !tok_->IsSpecial(e.token));
    const std::size_t i = t.index(e.token, e.pos);
    EXPECT_NEAR(e.s_total, total(i), 1e-12);
    pooled.insert(i);
  }
  const double worst_pooled = pool.entries.back().s_total;
  for (std::size_t i = 0; i < t.total.size(); ++i) {
    if (t.eligible[i] && !pooled.count(i)) {
      EXPECT_GE(total(i), worst_pooled - 1e-12);
    }
  }
  EXPECT_FALSE(pool.table.eligible[pool.table.index(tok_->bos_id(), 0)]);
  EXPECT_TRUE(pool.table.eligible[pool.table.index(tok_->unk_id(), 0)]);
}

TEST_F(PoolTest, CandidateInputsAreLayerNormedEmbeddings) {
  const Matrix a = CandidateQueryInputs(params_, 2);
  const Matrix e = Embed(params_, {9}, 3);
  const Matrix expected = ApplyLayerNorm(e, params_.tensors.at("layer1.ln1.gain"),
                                         params_.tensors.at("layer1.ln1.bias"));
  EXPECT_LT((a.row(9) - expected.row(0)).norm(), 1e-14);
  EXPECT_THROW(CandidateQueryInputs(params_, 10), Error);
}

TEST_F(PoolTest, ConfigValidation) {
  Stage1Config cfg;
  cfg.active_heads = 9;
  EXPECT_THROW(cfg.Validate(params_.config, 10), Error);
  cfg = Stage1Config{};
  cfg.pool_size = 256 * 10 + 1;
  EXPECT_THROW(cfg.Validate(params_.config, 10), Error);
  EXPECT_NO_THROW(Stage1Config{}.Validate(params_.config, 10));
}

}  // namespace
}  // namespace gradleak
