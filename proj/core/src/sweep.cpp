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

#include "gradleak/sweep.hpp"

#include <chrono>

#include "gradleak/baseline.hpp"
#include "gradleak/checkpoint.hpp"
#include "gradleak/error.hpp"
#include "gradleak/parallel.hpp"

namespace gradleak {
namespace {

TokenSeq Words(const Sample& s) { return TokenSeq(s.ids.begin() + 1, s.ids.end()); }

}  // namespace

std::uint64_t RoundSeed(std::uint64_t run_seed, std::size_t round) {
  // splitmix64 finalizer
  std::uint64_t z = run_seed + 0x9e3779b97f4a7c15ull * (static_cast<std::uint64_t>(round) + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::vector<GridPoint> ExpandGrid(const AttackConfig& config) {
  std::vector<GridPoint> grid;
  const std::vector<std::size_t> epochs =
      config.protocol == Protocol::kFedAvg ? config.sweep.local_epochs : std::vector<std::size_t>{1};
  for (std::size_t b : config.sweep.batch_sizes) {
    for (double sigma : config.sweep.sigmas) {
      for (std::size_t e : epochs) grid.push_back({b, sigma, config.protocol, e});
    }
  }
  Require(!grid.empty(), ErrorKind::kConfig, "sweep: empty grid");
  return grid;
}

ModelParams LoadRunModel(const AttackConfig& config) {
  if (config.checkpoint.empty()) return InitParams(config.model);
  ModelParams params = LoadCheckpoint(config.checkpoint);
  Require(params.config == config.model, ErrorKind::kConfig,
          "config: checkpoint model differs from the [model] section");
  return params;
}

Aggregate AggregateScores(const std::vector<RoundScore>& scores) {
  std::vector<double> r1, r2, rl;
  for (const RoundScore& s : scores) {
    r1.push_back(s.rouge1);
    r2.push_back(s.rouge2);
    rl.push_back(s.rougeL);
  }
  return {ComputeMeanStd(r1), ComputeMeanStd(r2), ComputeMeanStd(rl)};
}

GridResult RunGridPoint(const AttackConfig& config, const ModelParams& params,
                        const Tokenizer& tokenizer, const Corpus& corpus, const GridPoint& point) {
  GridResult out;
  out.point = point;
  out.has_baseline = config.sweep.baseline;
  out.rounds.resize(config.sweep.rounds);
  const AttackSettings settings = config.ResolveFor(point.batch_size);
  const ProtocolSpec protocol = config.ProtocolFor(point.batch_size, point.sigma, point.local_epochs);

  ParallelFor(config.sweep.rounds, ResolveThreads(config.threads), [&](std::size_t r) {
    RoundRecord& rec = out.rounds[r];
    rec.round = r;
    rec.seed = RoundSeed(config.seed, r);
    const FedRound round = SimulateRound(params, tokenizer, corpus, point.batch_size, protocol, rec.seed);
    for (const Sample& s : round.batch) rec.references.push_back(Words(s));

    const AttackResult attack = RunAttack(round.observed, params, tokenizer, point.batch_size, settings);
    rec.recovered = attack.reconstruction.recovered;
    rec.alignment = AlignBatch(rec.recovered, rec.references);
    rec.score = Summarize(rec.alignment);
    rec.pool_entries = attack.pool_entries;
    rec.lengths = attack.lengths;
    rec.candidates = attack.candidates;
    rec.representatives = attack.reconstruction.representatives.size();
    rec.degenerate = attack.reconstruction.degenerate.size();
    rec.omp = attack.reconstruction.omp;
    rec.timings = attack.timings;

    if (config.sweep.baseline) {
      rec.has_baseline = true;
      const auto t0 = std::chrono::steady_clock::now();
      const BaselineResult base = BaselineExhaustive(round.observed, params, tokenizer,
                                                     point.batch_size, config.data.max_len,
                                                     config.baseline);
      rec.baseline.seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      rec.baseline.recovered = base.recovered;
      rec.baseline.nodes = base.nodes;
      rec.baseline.alignment = AlignBatch(base.recovered, rec.references);
      rec.baseline.score = Summarize(rec.baseline.alignment);
    }
  });

  std::vector<RoundScore> attack_scores, base_scores;
  for (const RoundRecord& rec : out.rounds) {
    attack_scores.push_back(rec.score);
    if (rec.has_baseline) base_scores.push_back(rec.baseline.score);
  }
  out.attack = AggregateScores(attack_scores);
  if (out.has_baseline) out.baseline = AggregateScores(base_scores);
  return out;
}

SweepReport RunSweep(const AttackConfig& config, const ModelParams& params,
                     const Tokenizer& tokenizer, const Corpus& corpus,
                     const std::vector<GridPoint>& grid) {
  Require(!grid.empty(), ErrorKind::kConfig, "sweep: empty grid");
  SweepReport report;
  report.config = ConfigSnapshot(config);
  for (const GridPoint& p : grid) {
    report.grid.push_back(RunGridPoint(config, params, tokenizer, corpus, p));
  }
  return report;
}

}  // namespace gradleak
