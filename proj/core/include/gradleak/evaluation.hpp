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

// Matching recovered sentences to references and summarizing scores.

#pragma once

#include <cstddef>
#include <vector>

#include "gradleak/rouge.hpp"
#include "gradleak/tokenizer.hpp"

namespace gradleak {

// Rectangular assignment maximizing the total of `weights` (rows x cols,
// row-major). Returns for each row the assigned column, or -1 when there
// are more rows than columns.
std::vector<long> MaxWeightAssignment(const std::vector<double>& weights, std::size_t rows,
                                      std::size_t cols);

struct Alignment {
  // Per reference: index into the recovered list, or -1 if unmatched.
  std::vector<long> match;
  // Per reference: scores against its match (all zero if unmatched).
  std::vector<RougeScores> scores;
};

// One-to-one assignment maximizing total ROUGE-L F.
Alignment AlignBatch(const std::vector<TokenSeq>& recovered,
                     const std::vector<TokenSeq>& references);

struct RoundScore {
  double rouge1 = 0.0;  // mean F over references, in [0, 1]
  double rouge2 = 0.0;
  double rougeL = 0.0;
};
RoundScore Summarize(const Alignment& alignment);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population
};
MeanStd ComputeMeanStd(const std::vector<double>& values);

// Kendall tau-a between two equally long sequences.
double KendallTau(const std::vector<double>& x, const std::vector<double>& y);
// Spearman rank correlation with average ranks for ties.
double SpearmanRho(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace gradleak
