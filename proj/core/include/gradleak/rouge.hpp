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

// ROUGE-N and ROUGE-L over token ids.

#pragma once

#include <cstddef>

#include "gradleak/tokenizer.hpp"

namespace gradleak {

struct RougeTriple {
  double precision = 0.0;
  double recall = 0.0;
  double f = 0.0;
};

struct RougeScores {
  RougeTriple rouge1;
  RougeTriple rouge2;
  RougeTriple rougeL;
};

// F = 2PR / (P + R), 0 when P + R == 0.
double FScore(double precision, double recall);

// Clipped n-gram overlap. Sequences shorter than n have no n-grams; both
// empty gives all zeros.
RougeTriple RougeN(const TokenSeq& candidate, const TokenSeq& reference, std::size_t n);

std::size_t LcsLength(const TokenSeq& a, const TokenSeq& b);
RougeTriple RougeL(const TokenSeq& candidate, const TokenSeq& reference);

RougeScores ScoreAll(const TokenSeq& candidate, const TokenSeq& reference);

}  // namespace gradleak
