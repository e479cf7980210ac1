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

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "gradleak/config.hpp"
#include "gradleak/report.hpp"
#include "gradleak/sweep.hpp"
#include "json.hpp"
#include "oracles.hpp"

namespace gradleak {
namespace {

using nlohmann::json;

class SweepTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    config_ = new AttackConfig(LoadConfig(testing::SourcePath("configs/quickstart.ini")));
    config_->sweep.batch_sizes = {1, 2};
    config_->sweep.rounds = 2;
    config_->sweep.baseline = true;
    tok_ = new Tokenizer(Tokenizer::FromFile(config_->data.vocab));
    corpus_ = new Corpus(LoadCorpus(config_->data.corpus, *tok_, config_->data.max_len));
    params_ = new ModelParams(LoadRunModel(*config_));
    report_ = new SweepReport(RunSweep(*config_, *params_, *tok_, *corpus_, ExpandGrid(*config_)));
  }
  static void TearDownTestSuite() {
    delete report_;
    delete params_;
    delete corpus_;
    delete tok_;
    delete config_;
  }
  static AttackConfig* config_;
  static Tokenizer* tok_;
  static Corpus* corpus_;
  static ModelParams* params_;
  static SweepReport* report_;
};

AttackConfig* SweepTest::config_ = nullptr;
Tokenizer* SweepTest::tok_ = nullptr;
Corpus* SweepTest::corpus_ = nullptr;
ModelParams* SweepTest::params_ = nullptr;
SweepReport* SweepTest::report_ = nullptr;

TEST(RoundSeed, DistinctAndStable) {
  std::set<std::uint64_t> seen;
  for (std::size_t r = 0; r < 100; ++r) seen.insert(RoundSeed(0, r));
  EXPECT_EQ(seen.size(), 100U);
  EXPECT_EQ(RoundSeed(5, 3), RoundSeed(5, 3));
  EXPECT_NE(RoundSeed(5, 3), RoundSeed(6, 3));
}

TEST(ExpandGrid, NestingAndProtocolCollapse) {
  AttackConfig c;
  c.sweep.batch_sizes = {1, 4};
  c.sweep.sigmas = {0.0, 1e-4};
  c.sweep.local_epochs = {1, 2, 5};
  const auto sgd = ExpandGrid(c);
  ASSERT_EQ(sgd.size(), 4U);
  EXPECT_EQ(sgd[1].batch_size, 1U);
  EXPECT_EQ(sgd[1].sigma, 1e-4);
  EXPECT_EQ(sgd[2].batch_size, 4U);
  c.protocol = Protocol::kFedAvg;
  const auto avg = ExpandGrid(c);
  ASSERT_EQ(avg.size(), 12U);
  EXPECT_EQ(avg[2].local_epochs, 5U);
  EXPECT_EQ(avg[3].sigma, 1e-4);
}

TEST(AggregateScores, MeanAndPopulationStd) {
  const Aggregate a = AggregateScores({RoundScore{1.0, 0.5, 1.0}, RoundScore{0.0, 0.5, 0.5}});
  EXPECT_DOUBLE_EQ(a.rouge1.mean, 0.5);
  EXPECT_DOUBLE_EQ(a.rouge1.std, 0.5);
  EXPECT_DOUBLE_EQ(a.rouge2.std, 0.0);
  EXPECT_DOUBLE_EQ(a.rougeL.mean, 0.75);
}

TEST_F(SweepTest, RoundsArePairedAcrossGridPoints) {
  ASSERT_EQ(report_->grid.size(), 2U);
  for (const GridResult& g : report_->grid) {
    ASSERT_EQ(g.rounds.size(), 2U);
    EXPECT_TRUE(g.has_baseline);
    for (std::size_t r = 0; r < 2; ++r) {
      EXPECT_EQ(g.rounds[r].seed, RoundSeed(config_->seed, r));
      EXPECT_EQ(g.rounds[r].references.size(), g.point.batch_size);
    }
  }
  EXPECT_DOUBLE_EQ(report_->grid[0].attack.rougeL.mean, 1.0);
}

TEST_F(SweepTest, JsonFollowsTheSchema) {
  const json j = json::parse(ReportJson(*report_, *tok_));
  EXPECT_EQ(j.at("schema"), kReportSchema);
  EXPECT_TRUE(j.at("config").is_object());
  EXPECT_FALSE(j.at("config").contains("run.out_dir"));
  ASSERT_EQ(j.at("grid").size(), 2U);
  const json& point = j.at("grid")[1];
  EXPECT_EQ(point.at("batch_size"), 2);
  EXPECT_EQ(point.at("protocol"), "fedsgd");
  EXPECT_TRUE(point.contains("baseline_aggregate"));
  const json& round = point.at("rounds")[0];
  for (const char* key : {"round", "seed", "references", "recovered", "scores", "alignment",
                          "pool_entries", "candidate_lengths", "candidates", "representatives",
                          "omp", "baseline"}) {
    EXPECT_TRUE(round.contains(key)) << key;
  }
  EXPECT_EQ(round.at("references").size(), 2U);
  const double mean = point.at("aggregate").at("rougeL").at("mean");
  EXPECT_NEAR(mean, 100.0 * report_->grid[1].attack.rougeL.mean, 1e-9);
}

TEST_F(SweepTest, RerunIsByteIdentical) {
  const SweepReport again = RunSweep(*config_, *params_, *tok_, *corpus_, ExpandGrid(*config_));
  EXPECT_EQ(ReportJson(again, *tok_), ReportJson(*report_, *tok_));
  EXPECT_EQ(SummaryCsv(again), SummaryCsv(*report_));
}

TEST_F(SweepTest, CsvFilesHaveOneRowPerPointOrRound) {
  std::istringstream summary(SummaryCsv(*report_));
  std::string line;
  std::getline(summary, line);
  EXPECT_EQ(line.rfind("batch_size,sigma,protocol,local_epochs,rounds,", 0), 0U);
  std::size_t rows = 0;
  while (std::getline(summary, line)) ++rows;
  EXPECT_EQ(rows, 2U);
  std::istringstream timings(TimingsCsv(*report_));
  rows = 0;
  while (std::getline(timings, line)) ++rows;
  EXPECT_EQ(rows, 1U + 4U);
}

TEST_F(SweepTest, WriteReportCreatesTheFiles) {
  const auto dir = std::filesystem::temp_directory_path() / "gradleak_report_test";
  std::filesystem::remove_all(dir);
  WriteReport(*report_, *tok_, dir);
  for (const char* f : {"report.json", "summary.csv", "timings.csv"}) {
    EXPECT_TRUE(std::filesystem::is_regular_file(dir / f)) << f;
  }
  std::ifstream in(dir / "report.json");
  std::stringstream ss;
  ss << in.rdbuf();
  EXPECT_EQ(ss.str(), ReportJson(*report_, *tok_));
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace gradleak
