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

// Reference attacker: depth-first enumeration of sentences whose every token
// lies in the first-layer query input span, with no further scoring.

#pragma once

#include <cstddef>
#include <vector>

#include "gradleak/linalg.hpp"
#include "gradleak/model.hpp"
#include "gradleak/tokenizer.hpp"

namespace gradleak {

struct BaselineConfig {
  std::size_t budget = 20000;  // nodes visited
  // A token is a member at a position when its mean per-head subspace score,
  // divided by the norm of its unprojected query, is below member_rel.
  double member_rel = 0.05;
  double rel_tol = kDefaultRankTol;

  void Validate() const;
};

struct BaselineResult {
  std::vector<TokenSeq> recovered;  // first batch_size leaves in search order
  std::size_t nodes = 0;
};

// Members per word position, ascending relative score then id.
std::vector<std::vector<TokenId>> SpanMembers(const GradientBundle& g, const Tokenizer& tokenizer,
                                              const ModelParams& params, std::size_t max_len,
                                              const BaselineConfig& cfg);

BaselineResult BaselineExhaustive(const GradientBundle& g, const ModelParams& params,
                                  const Tokenizer& tokenizer, std::size_t batch_size,
                                  std::size_t max_len, const BaselineConfig& cfg);

}  // namespace gradleak
