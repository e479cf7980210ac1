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

#include "gradleak/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "gradleak/error.hpp"

namespace gradleak {
namespace {

// Minimum-cost assignment of n rows to m >= n columns (potentials method).
std::vector<std::size_t> MinCostAssignment(const std::vector<double>& cost, std::size_t n,
                                           std::size_t m) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * m + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> row_to_col(n, 0);
  for (std::size_t j = 1; j <= m; ++j) {
    if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
  }
  return row_to_col;
}

std::vector<double> AverageRanks(const std::vector<double>& x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> rank(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = r;
    i = j + 1;
  }
  return rank;
}

}  // namespace

std::vector<long> MaxWeightAssignment(const std::vector<double>& weights, std::size_t rows,
                                      std::size_t cols) {
  Require(weights.size() == rows * cols, ErrorKind::kInvalidInput,
          "assignment: weight matrix has the wrong size");
  std::vector<long> out(rows, -1);
  if (rows == 0 || cols == 0) return out;
  if (rows <= cols) {
    std::vector<double> cost(weights.size());
    for (std::size_t i = 0; i < weights.size(); ++i) cost[i] = -weights[i];
    const auto assign = MinCostAssignment(cost, rows, cols);
    for (std::size_t r = 0; r < rows; ++r) out[r] = static_cast<long>(assign[r]);
    return out;
  }
  std::vector<double> cost(weights.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) cost[c * rows + r] = -weights[r * cols + c];
  }
  const auto assign = MinCostAssignment(cost, cols, rows);
  for (std::size_t c = 0; c < cols; ++c) out[assign[c]] = static_cast<long>(c);
  return out;
}

Alignment AlignBatch(const std::vector<TokenSeq>& recovered,
                     const std::vector<TokenSeq>& references) {
  const std::size_t rows = references.size();
  const std::size_t cols = recovered.size();
  std::vector<double> weights(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) weights[r * cols + c] = RougeL(recovered[c], references[r]).f;
  }
  Alignment out;
  out.match = MaxWeightAssignment(weights, rows, cols);
  out.scores.resize(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    if (out.match[r] >= 0) {
      out.scores[r] = ScoreAll(recovered[static_cast<std::size_t>(out.match[r])], references[r]);
    }
  }
  return out;
}

RoundScore Summarize(const Alignment& alignment) {
  RoundScore s;
  if (alignment.scores.empty()) return s;
  for (const RougeScores& r : alignment.scores) {
    s.rouge1 += r.rouge1.f;
    s.rouge2 += r.rouge2.f;
    s.rougeL += r.rougeL.f;
  }
  const auto n = static_cast<double>(alignment.scores.size());
  s.rouge1 /= n;
  s.rouge2 /= n;
  s.rougeL /= n;
  return s;
}

MeanStd ComputeMeanStd(const std::vector<double>& values) {
  MeanStd out;
  if (values.empty()) return out;
  const auto n = static_cast<double>(values.size());
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double sq = 0.0;
  for (double v : values) sq += (v - out.mean) * (v - out.mean);
  out.std = std::sqrt(sq / n);
  return out;
}

double KendallTau(const std::vector<double>& x, const std::vector<double>& y) {
  Require(x.size() == y.size(), ErrorKind::kInvalidInput, "kendall: length mismatch");
  const std::size_t n = x.size();
  if (n < 2) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double a = x[j] - x[i];
      const double b = y[j] - y[i];
      sum += static_cast<double>((a > 0) - (a < 0)) * static_cast<double>((b > 0) - (b < 0));
    }
  }
  return sum / (0.5 * static_cast<double>(n) * static_cast<double>(n - 1));
}

double SpearmanRho(const std::vector<double>& x, const std::vector<double>& y) {
  Require(x.size() == y.size(), ErrorKind::kInvalidInput, "spearman: length mismatch");
  if (x.size() < 2) return 0.0;
  const std::vector<double> rx = AverageRanks(x);
  const std::vector<double> ry = AverageRanks(y);
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / static_cast<double>(rx.size());
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / static_cast<double>(ry.size());
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace gradleak
