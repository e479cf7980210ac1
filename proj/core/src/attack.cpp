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

#include "gradleak/attack.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "gradleak/error.hpp"

namespace gradleak {
namespace {

double SecondsSince(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

ScheduleColumn ScheduleFor(std::size_t batch_size) {
  if (batch_size <= 1) return {1, 960, 4, 6, 2, 1};
  if (batch_size <= 4) return {4, 1600, 4, 6, 4, 4};
  if (batch_size <= 8) return {8, 2400, 3, 4, 6, 8};
  return {16, 3200, 3, 4, 12, 16};
}

std::size_t ScaledPoolSize(std::size_t batch_size, std::size_t vocab, std::size_t max_len,
                           const PoolScaling& scaling) {
  const ScheduleColumn col = ScheduleFor(batch_size);
  double k = static_cast<double>(col.pool_size);
  if (scaling.enabled) {
    Require(scaling.reference_vocab > 0 && scaling.reference_len > 0, ErrorKind::kConfig,
            "schedule: reference sizes must be positive");
    k *= static_cast<double>(vocab) * static_cast<double>(max_len) /
         (scaling.reference_vocab * scaling.reference_len);
  }
  const std::size_t floor = 4 * batch_size * max_len;
  const std::size_t cap = vocab * max_len;
  return std::min(cap, std::max(floor, static_cast<std::size_t>(std::llround(k))));
}

void ApplySchedule(std::size_t batch_size, const ModelConfig& model, std::size_t max_len,
                   const PoolScaling& scaling, const ScheduleLocks& locks, Stage1Config& stage1,
                   Stage2Config& stage2) {
  const ScheduleColumn col = ScheduleFor(batch_size);
  if (!locks.pool_size) stage1.pool_size = ScaledPoolSize(batch_size, model.vocab_size, max_len, scaling);
  if (!locks.active_heads) stage1.active_heads = std::max<std::size_t>(1, model.heads / col.active_div);
  if (!locks.sparsity_heads) {
    stage1.sparsity_heads = std::max<std::size_t>(1, model.heads / col.sparsity_div);
  }
  if (!locks.groups) stage2.groups = col.groups;
  if (!locks.beam_width) stage2.beam_width = col.beam_per_group * stage2.groups;
}

AttackResult RunAttack(const GradientBundle& observed, const ModelParams& params,
                       const Tokenizer& tokenizer, std::size_t batch_size,
                       const AttackSettings& settings) {
  Require(batch_size >= 1, ErrorKind::kInvalidInput, "attack: batch size must be >= 1");
  settings.stage2.Validate();
  AttackResult out;

  auto t0 = std::chrono::steady_clock::now();
  const TokenPool pool = BuildTokenPool(observed, tokenizer, params, settings.stage1, settings.max_len);
  out.pool_entries = pool.entries.size();
  out.timings.stage1 = SecondsSince(t0);

  t0 = std::chrono::steady_clock::now();
  const DecodeResult decoded = RunDecoding(pool, observed, params, settings.stage2);
  out.lengths = decoded.lengths;
  out.candidates = decoded.candidates.size();
  out.timings.stage2 = SecondsSince(t0);

  t0 = std::chrono::steady_clock::now();
  out.reconstruction =
      Reconstruct(observed, decoded.candidates, params, tokenizer, batch_size, settings.stage3);
  out.timings.stage3 = SecondsSince(t0);
  return out;
}

}  // namespace gradleak
