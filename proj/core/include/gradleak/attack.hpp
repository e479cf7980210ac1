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

// End-to-end attack on one observed update and the batch-size schedule that
// sizes each stage.

#pragma once

#include <cstddef>
#include <vector>

#include "gradleak/model.hpp"
#include "gradleak/stage1_pool.hpp"
#include "gradleak/stage2_decode.hpp"
#include "gradleak/stage3_omp.hpp"
#include "gradleak/tokenizer.hpp"

namespace gradleak {

// One column of the batch-size table.
struct ScheduleColumn {
  std::size_t batch = 1;
  std::size_t pool_size = 960;   // at the reference vocabulary and length
  std::size_t active_div = 4;    // |H_act| = H / active_div
  std::size_t sparsity_div = 6;  // |H_top| = H / sparsity_div
  std::size_t beam_per_group = 2;
  std::size_t groups = 1;
};

// Smallest tabulated batch size >= B (the last column beyond the table).
ScheduleColumn ScheduleFor(std::size_t batch_size);

struct PoolScaling {
  double reference_vocab = 50257;
  double reference_len = 512;
  bool enabled = true;
};

// Tabulated pool size times V * max_len / (reference_vocab * reference_len),
// at least 4 * B * max_len and at most V * max_len.
std::size_t ScaledPoolSize(std::size_t batch_size, std::size_t vocab, std::size_t max_len,
                           const PoolScaling& scaling);

// Which schedule-driven fields were set explicitly and must be kept.
struct ScheduleLocks {
  bool pool_size = false;
  bool active_heads = false;
  bool sparsity_heads = false;
  bool beam_width = false;
  bool groups = false;
};

void ApplySchedule(std::size_t batch_size, const ModelConfig& model, std::size_t max_len,
                   const PoolScaling& scaling, const ScheduleLocks& locks, Stage1Config& stage1,
                   Stage2Config& stage2);

struct AttackSettings {
  Stage1Config stage1;
  Stage2Config stage2;
  Stage3Config stage3;
  std::size_t max_len = 10;
};

struct StageTimings {
  double stage1 = 0.0;  // seconds
  double stage2 = 0.0;
  double stage3 = 0.0;
};

struct AttackResult {
  std::size_t pool_entries = 0;
  std::vector<std::size_t> lengths;
  std::size_t candidates = 0;
  ReconstructionResult reconstruction;
  StageTimings timings;
};

AttackResult RunAttack(const GradientBundle& observed, const ModelParams& params,
                       const Tokenizer& tokenizer, std::size_t batch_size,
                       const AttackSettings& settings);

}  // namespace gradleak
