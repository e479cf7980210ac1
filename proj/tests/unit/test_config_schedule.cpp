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

#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>

#include "gradleak/config.hpp"
#include "gradleak/error.hpp"
#include "oracles.hpp"

namespace gradleak {
namespace {

const char* kMinimal = R"(
[model]
hidden = 32
heads = 4
ffn = 128
max_pos = 11
[data]
corpus = ../data/short_lines.txt
vocab = ../data/vocab.txt
)";

std::filesystem::path ConfigDir() { return testing::SourcePath("configs"); }

std::optional<ErrorKind> KindOf(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  return std::nullopt;
}

TEST(Config, ParsesValuesAndResolvesPaths) {
  const AttackConfig c = ParseConfig(std::string(kMinimal) + R"(
[stage2]
candidate_lengths = 4, 7
geo_scale = raw
[sweep]
batch_sizes = 1, 2, 4
sigmas = 0, 1e-4
)", ConfigDir());
  EXPECT_EQ(c.model.hidden, 32U);
  EXPECT_EQ(c.stage2.candidate_lengths, (std::vector<std::size_t>{4, 7}));
  EXPECT_EQ(c.stage2.geo_scale, Stage2Config::GeoScale::kRaw);
  EXPECT_EQ(c.sweep.batch_sizes, (std::vector<std::size_t>{1, 2, 4}));
  EXPECT_EQ(c.sweep.sigmas, (std::vector<double>{0.0, 1e-4}));
  EXPECT_TRUE(std::filesystem::is_regular_file(c.data.corpus));
  EXPECT_EQ(std::filesystem::weakly_canonical(c.data.vocab),
            std::filesystem::weakly_canonical(testing::SourcePath("data/vocab.txt")));
  EXPECT_NO_THROW(c.Validate());
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_EQ(KindOf([] { ParseConfig("[model]\nwidth = 3\n"); }), ErrorKind::kConfig);
  EXPECT_EQ(KindOf([] { ParseConfig("[bogus]\nx = 1\n"); }), ErrorKind::kConfig);
  EXPECT_EQ(KindOf([] { ParseConfig("[model]\nhidden = abc\n"); }), ErrorKind::kConfig);
  EXPECT_EQ(KindOf([] { ParseConfig("[model]\nhidden = -4\n"); }), ErrorKind::kConfig);
  EXPECT_EQ(KindOf([] { ParseConfig("[stage2]\nlength_normalize = maybe\n"); }),
            ErrorKind::kConfig);
  EXPECT_EQ(KindOf([] { ParseConfig("[sweep\n"); }), ErrorKind::kConfig);
}

TEST(Config, ValidationCatchesMissingFilesAndEmptyGrids) {
  AttackConfig c = ParseConfig(kMinimal, ConfigDir());
  c.data.corpus = "/nonexistent/corpus.txt";
  EXPECT_EQ(KindOf([&] { c.Validate(); }), ErrorKind::kConfig);
  c = ParseConfig(kMinimal, ConfigDir());
  c.sweep.batch_sizes.clear();
  EXPECT_EQ(KindOf([&] { c.Validate(); }), ErrorKind::kConfig);
  c = ParseConfig(kMinimal, ConfigDir());
  c.data.max_len = 11;
  EXPECT_EQ(KindOf([&] { c.Validate(); }), ErrorKind::kConfig);
}

TEST(Config, BundledConfigsLoadAndValidate) {
  for (const char* name : {"quickstart.ini", "batch_sweep.ini", "long_sweep.ini",
                           "noise_sweep.ini", "fedavg_sweep.ini", "classification.ini"}) {
    const AttackConfig c = LoadConfig(ConfigDir() / name);
    EXPECT_NO_THROW(c.Validate()) << name;
  }
}

TEST(Config, EnvironmentOverrides) {
  AttackConfig c = ParseConfig(kMinimal, ConfigDir());
  ::setenv("GRADLEAK_OUT", "/tmp/elsewhere", 1);
  ::setenv("GRADLEAK_THREADS", "3", 1);
  ApplyEnvOverrides(c);
  ::unsetenv("GRADLEAK_OUT");
  ::unsetenv("GRADLEAK_THREADS");
  EXPECT_EQ(c.out_dir, std::filesystem::path("/tmp/elsewhere"));
  EXPECT_EQ(c.threads, 3U);
}

TEST(Config, SnapshotRoundTrips) {
  const AttackConfig c = ParseConfig(std::string(kMinimal) + "[stage1]\nlambda_sub = 0.7\n",
                                     ConfigDir());
  const auto snap = ConfigSnapshot(c);
  EXPECT_EQ(snap.size(), ConfigKeys().size());
  std::string text;
  std::string section;
  for (const auto& [key, value] : snap) {
    const std::string s = key.substr(0, key.find('.'));
    if (s != section) text += "[" + (section = s) + "]\n";
    text += key.substr(key.find('.') + 1) + " = " + value + "\n";
  }
  const AttackConfig again = ParseConfig(text);
  EXPECT_EQ(ConfigSnapshot(again), snap);
  EXPECT_DOUBLE_EQ(again.stage1.lambda_sub, 0.7);
}

TEST(Schedule, ColumnsFollowTheBatchTable) {
  EXPECT_EQ(ScheduleFor(1).pool_size, 960U);
  EXPECT_EQ(ScheduleFor(2).batch, 4U);
  EXPECT_EQ(ScheduleFor(4).groups, 4U);
  EXPECT_EQ(ScheduleFor(8).beam_per_group * ScheduleFor(8).groups, 48U);
  EXPECT_EQ(ScheduleFor(100).batch, 16U);
  for (std::size_t b : {1U, 4U, 8U, 16U}) {
    const ScheduleColumn c = ScheduleFor(b);
    EXPECT_GE(c.beam_per_group * c.groups, c.groups);
  }
}

TEST(Schedule, PoolSizeScalesWithFloorAndCap) {
  PoolScaling s;
  // 960 * 256 * 10 / (50257 * 512) rounds to 0, so the 4 * B * L floor wins.
  EXPECT_EQ(ScaledPoolSize(1, 256, 10, s), 40U);
  EXPECT_EQ(ScaledPoolSize(4, 256, 10, s), 160U);
  s.reference_vocab = 256;
  s.reference_len = 10;
  EXPECT_EQ(ScaledPoolSize(1, 256, 10, s), 960U);
  EXPECT_EQ(ScaledPoolSize(8, 256, 10, s), 2400U);
  s.enabled = false;
  EXPECT_EQ(ScaledPoolSize(1, 20, 10, s), 200U);  // capped at V * L
}

TEST(Schedule, LocksKeepExplicitValues) {
  ModelConfig m = testing::ToyConfig();
  m.heads = 12;
  Stage1Config s1;
  Stage2Config s2;
  ApplySchedule(8, m, 10, PoolScaling{}, ScheduleLocks{}, s1, s2);
  EXPECT_EQ(s1.active_heads, 4U);
  EXPECT_EQ(s1.sparsity_heads, 3U);
  EXPECT_EQ(s2.groups, 8U);
  EXPECT_EQ(s2.beam_width, 48U);
  EXPECT_EQ(s1.pool_size, 320U);

  ScheduleLocks locks;
  locks.beam_width = true;
  locks.pool_size = true;
  s1.pool_size = 77;
  s2.beam_width = 16;
  ApplySchedule(4, m, 10, PoolScaling{}, locks, s1, s2);
  EXPECT_EQ(s1.pool_size, 77U);
  EXPECT_EQ(s2.beam_width, 16U);
  EXPECT_EQ(s2.groups, 4U);

  m.heads = 2;
  ApplySchedule(1, m, 10, PoolScaling{}, ScheduleLocks{}, s1, s2);
  EXPECT_EQ(s1.active_heads, 1U);
  EXPECT_EQ(s1.sparsity_heads, 1U);
}

TEST(Schedule, ExplicitConfigKeysLock) {
  const AttackConfig c = ParseConfig(std::string(kMinimal) + "[stage2]\nbeam_width = 8\ngroups = 2\n",
                                     ConfigDir());
  const AttackSettings s = c.ResolveFor(4);
  EXPECT_EQ(s.stage2.beam_width, 8U);
  EXPECT_EQ(s.stage2.groups, 2U);
  EXPECT_EQ(c.ResolveFor(4).stage1.pool_size, 160U);
}

}  // namespace
}  // namespace gradleak
