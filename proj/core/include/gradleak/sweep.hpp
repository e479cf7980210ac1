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

// Experiment grids: every (batch size, noise level, local epochs) point runs
// the same seeded rounds, scores the attack (and optionally the baseline)
// against the hidden batch, and aggregates over rounds.

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gradleak/attack.hpp"
#include "gradleak/config.hpp"
#include "gradleak/evaluation.hpp"
#include "gradleak/federation.hpp"

namespace gradleak {

struct GridPoint {
  std::size_t batch_size = 1;
  double sigma = 0.0;
  Protocol protocol = Protocol::kFedSgd;
  std::size_t local_epochs = 1;
};

struct BaselineRecord {
  std::vector<TokenSeq> recovered;
  Alignment alignment;
  RoundScore score;
  std::size_t nodes = 0;
  double seconds = 0.0;
};

struct RoundRecord {
  std::size_t round = 0;
  std::uint64_t seed = 0;
  std::vector<TokenSeq> references;
  std::vector<TokenSeq> recovered;
  Alignment alignment;
  RoundScore score;
  std::size_t pool_entries = 0;
  std::vector<std::size_t> lengths;
  std::size_t candidates = 0;
  std::size_t representatives = 0;
  std::size_t degenerate = 0;
  OmpResult omp;
  StageTimings timings;
  bool has_baseline = false;
  BaselineRecord baseline;
};

struct Aggregate {
  MeanStd rouge1;
  MeanStd rouge2;
  MeanStd rougeL;
};

struct GridResult {
  GridPoint point;
  std::vector<RoundRecord> rounds;
  Aggregate attack;
  bool has_baseline = false;
  Aggregate baseline;
};

struct SweepReport {
  std::vector<std::pair<std::string, std::string>> config;
  std::vector<GridResult> grid;
};

// Seed of round r, shared by every grid point so points are paired.
std::uint64_t RoundSeed(std::uint64_t run_seed, std::size_t round);

// Grid points in nesting order batch size, sigma, epochs. Epochs only vary
// under fedavg; with fedsgd the list collapses to one point per (B, sigma).
std::vector<GridPoint> ExpandGrid(const AttackConfig& config);

// Model for a run: the checkpoint if configured, else InitParams(config.model).
ModelParams LoadRunModel(const AttackConfig& config);

GridResult RunGridPoint(const AttackConfig& config, const ModelParams& params,
                        const Tokenizer& tokenizer, const Corpus& corpus, const GridPoint& point);

SweepReport RunSweep(const AttackConfig& config, const ModelParams& params,
                     const Tokenizer& tokenizer, const Corpus& corpus,
                     const std::vector<GridPoint>& grid);

Aggregate AggregateScores(const std::vector<RoundScore>& scores);

}  // namespace gradleak
