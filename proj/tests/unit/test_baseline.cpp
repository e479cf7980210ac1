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
#include <memory>

#include "gradleak/baseline.hpp"
#include "gradleak/error.hpp"
#include "gradleak/federation.hpp"
#include "oracles.hpp"

namespace gradleak {
namespace {

class BaselineTest : public ::testing::Test {
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

TEST_F(BaselineTest, MembersContainTheBatchTokens) {
  const FedRound round = SimulateRound(params_, *tok_, corpus_, 2, ProtocolSpec{}, 5);
  const auto members = SpanMembers(round.observed, *tok_, params_, 10, BaselineConfig{});
  ASSERT_EQ(members.size(), 10U);
  for (const Sample& s : round.batch) {
    for (std::size_t t = 1; t < s.ids.size(); ++t) {
      const auto& m = members[t - 1];
      EXPECT_NE(std::find(m.begin(), m.end(), s.ids[t]), m.end()) << "pos " << t - 1;
    }
  }
  for (const auto& m : members) {
    for (TokenId id : m) EXPECT_TRUE(id == tok_->unk_id() || !tok_->IsSpecial(id));
  }
}

TEST_F(BaselineTest, RecoversTheSentenceAtBatchSizeOne) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const FedRound round = SimulateRound(params_, *tok_, corpus_, 1, ProtocolSpec{}, seed);
    const BaselineResult r =
        BaselineExhaustive(round.observed, params_, *tok_, 1, 10, BaselineConfig{});
    const TokenSeq& ids = round.batch[0].ids;
    ASSERT_EQ(r.recovered.size(), 1U);
    EXPECT_EQ(r.recovered[0], TokenSeq(ids.begin() + 1, ids.end())) << "seed " << seed;
  }
}

TEST_F(BaselineTest, BudgetBoundsTheSearch) {
  const FedRound round = SimulateRound(params_, *tok_, corpus_, 4, ProtocolSpec{}, 2);
  BaselineConfig cfg;
  cfg.budget = 0;
  const BaselineResult none = BaselineExhaustive(round.observed, params_, *tok_, 4, 10, cfg);
  EXPECT_TRUE(none.recovered.empty());
  EXPECT_EQ(none.nodes, 0U);
  cfg.budget = 6;
  const BaselineResult small = BaselineExhaustive(round.observed, params_, *tok_, 4, 10, cfg);
  EXPECT_LE(small.nodes, 6U);
  EXPECT_LE(small.recovered.size(), 4U);
  cfg.member_rel = 0.0;
  EXPECT_THROW(BaselineExhaustive(round.observed, params_, *tok_, 4, 10, cfg), Error);
  EXPECT_THROW(BaselineExhaustive(round.observed, params_, *tok_, 0, 10, BaselineConfig{}), Error);
}

}  // namespace
}  // namespace gradleak
