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

#include "gradleak/rouge.hpp"

#include <algorithm>
#include <map>
#include <vector>

#include "gradleak/error.hpp"

namespace gradleak {
namespace {

std::map<TokenSeq, std::size_t> CountNgrams(const TokenSeq& seq, std::size_t n) {
  std::map<TokenSeq, std::size_t> counts;
  if (seq.size() < n) return counts;
  for (std::size_t i = 0; i + n <= seq.size(); ++i) {
    ++counts[TokenSeq(seq.begin() + static_cast<std::ptrdiff_t>(i),
                      seq.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

RougeTriple FromCounts(std::size_t overlap, std::size_t cand_total, std::size_t ref_total) {
  RougeTriple r;
  r.precision = cand_total ? static_cast<double>(overlap) / static_cast<double>(cand_total) : 0.0;
  r.recall = ref_total ? static_cast<double>(overlap) / static_cast<double>(ref_total) : 0.0;
  r.f = FScore(r.precision, r.recall);
  return r;
}

}  // namespace

double FScore(double precision, double recall) {
  const double sum = precision + recall;
  return sum > 0.0 ? 2.0 * precision * recall / sum : 0.0;
}

RougeTriple RougeN(const TokenSeq& candidate, const TokenSeq& reference, std::size_t n) {
  Require(n >= 1, ErrorKind::kInvalidInput, "rouge_n: n must be >= 1");
  const auto cand = CountNgrams(candidate, n);
  const auto ref = CountNgrams(reference, n);
  std::size_t overlap = 0;
  for (const auto& [gram, count] : cand) {
    auto it = ref.find(gram);
    if (it != ref.end()) overlap += std::min(count, it->second);
  }
  const std::size_t cand_total = candidate.size() >= n ? candidate.size() - n + 1 : 0;
  const std::size_t ref_total = reference.size() >= n ? reference.size() - n + 1 : 0;
  return FromCounts(overlap, cand_total, ref_total);
}

std::size_t LcsLength(const TokenSeq& a, const TokenSeq& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0);
  std::vector<std::size_t> cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

RougeTriple RougeL(const TokenSeq& candidate, const TokenSeq& reference) {
  return FromCounts(LcsLength(candidate, reference), candidate.size(), reference.size());
}

RougeScores ScoreAll(const TokenSeq& candidate, const TokenSeq& reference) {
  return {RougeN(candidate, reference, 1), RougeN(candidate, reference, 2),
          RougeL(candidate, reference)};
}

}  // namespace gradleak
