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

#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#ifndef GRADLEAK_SOURCE_DIR
#error "GRADLEAK_SOURCE_DIR must be defined"
#endif

namespace gradleak::testing {

ModelConfig ToyConfig(LabelMode mode, std::uint64_t seed) {
  ModelConfig c;
  c.layers = 2;
  c.hidden = 32;
  c.heads = 4;
  c.ffn = 128;
  c.max_pos = 12;
  c.vocab_size = 256;
  c.classes = 4;
  c.label_mode = mode;
  c.seed = seed;
  return c;
}

ModelParams PerturbedParams(const ModelConfig& config, double sigma, std::uint64_t seed) {
  ModelParams p = InitParams(config);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  for (std::size_t i = 0; i < p.tensors.size(); ++i) {
    Matrix& m = p.tensors.value(i);
    for (Eigen::Index j = 0; j < m.size(); ++j) m.data()[j] += noise(rng);
  }
  return p;
}

std::string ParamGroup(const std::string& path) {
  std::string leaf = path;
  if (leaf.rfind("layer", 0) == 0) leaf = leaf.substr(leaf.find('.') + 1);
  if (leaf == "tok_emb" || leaf == "pos_emb") return "embeddings";
  if (leaf.rfind("W_", 0) == 0) return "attention weights";
  if (leaf.rfind("b_", 0) == 0) return "attention biases";
  if (leaf.find("ln") != std::string::npos) return "layer norms";
  if (leaf.rfind("ffn.W", 0) == 0) return "ffn weights";
  if (leaf.rfind("ffn.b", 0) == 0) return "ffn biases";
  if (leaf.rfind("cls.", 0) == 0) return "classifier";
  return leaf;
}

std::vector<GroupCheck> FiniteDifferenceCheck(const ModelParams& params, const Sample& sample,
                                              std::size_t per_group, double step,
                                              double abs_floor, std::uint64_t seed) {
  const GradientBundle g = Backward(params, sample);
  ModelParams work = params;
  // (tensor index, flat entry) for every parameter, grouped.
  std::map<std::string, std::vector<std::pair<std::size_t, Eigen::Index>>> groups;
  for (std::size_t i = 0; i < work.tensors.size(); ++i) {
    const std::string group = ParamGroup(work.tensors.paths()[i]);
    for (Eigen::Index j = 0; j < work.tensors.value(i).size(); ++j) groups[group].emplace_back(i, j);
  }
  std::mt19937_64 rng(seed);
  std::vector<GroupCheck> out;
  for (auto& [name, entries] : groups) {
    std::shuffle(entries.begin(), entries.end(), rng);
    GroupCheck check{name, std::min(per_group, entries.size()), 0.0};
    for (std::size_t k = 0; k < check.checked; ++k) {
      const auto [ti, j] = entries[k];
      double& x = work.tensors.value(ti).data()[j];
      const double orig = x;
      x = orig + step;
      const double up = Loss(work, sample);
      x = orig - step;
      const double down = Loss(work, sample);
      x = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = g.grads.value(ti).data()[j];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), abs_floor});
      check.worst_rel = std::max(check.worst_rel, std::abs(analytic - numeric) / denom);
    }
    out.push_back(check);
  }
  return out;
}

std::size_t BruteForceLcs(const TokenSeq& a, const TokenSeq& b) {
  const TokenSeq& s = a.size() <= b.size() ? a : b;
  const TokenSeq& t = a.size() <= b.size() ? b : a;
  std::size_t best = 0;
  const std::size_t n = s.size();
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << n); ++mask) {
    TokenSeq sub;
    for (std::size_t i = 0; i < n; ++i) {
      if (mask >> i & 1U) sub.push_back(s[i]);
    }
    if (sub.size() <= best) continue;
    std::size_t k = 0;
    for (TokenId x : t) {
      if (k < sub.size() && sub[k] == x) ++k;
    }
    if (k == sub.size()) best = sub.size();
  }
  return best;
}

double BruteForceAssignmentValue(const std::vector<double>& weights, std::size_t rows,
                                 std::size_t cols) {
  const bool transpose = rows > cols;
  const std::size_t small = transpose ? cols : rows;
  const std::size_t large = transpose ? rows : cols;
  auto at = [&](std::size_t i, std::size_t j) {
    return transpose ? weights[j * cols + i] : weights[i * cols + j];
  };
  std::vector<std::size_t> perm(large);
  std::iota(perm.begin(), perm.end(), 0);
  double best = -INFINITY;
  do {
    double total = 0.0;
    for (std::size_t i = 0; i < small; ++i) total += at(i, perm[i]);
    best = std::max(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

std::vector<std::size_t> ExhaustiveBestSubset(const std::vector<Vector>& atoms,
                                              const Vector& target, std::size_t k) {
  const std::size_t n = atoms.size();
  std::vector<std::size_t> best;
  double best_res = INFINITY;
  std::vector<char> pick(n, 0);
  std::fill(pick.begin(), pick.begin() + static_cast<std::ptrdiff_t>(std::min(k, n)), 1);
  do {
    std::vector<std::size_t> subset;
    for (std::size_t i = 0; i < n; ++i) {
      if (pick[i]) subset.push_back(i);
    }
    Eigen::MatrixXd a(target.size(), static_cast<Eigen::Index>(subset.size()));
    for (std::size_t c = 0; c < subset.size(); ++c) a.col(static_cast<Eigen::Index>(c)) = atoms[subset[c]];
    const Vector coef = a.colPivHouseholderQr().solve(target);
    const double res = (target - a * coef).norm();
    if (res < best_res) {
      best_res = res;
      best = subset;
    }
  } while (std::prev_permutation(pick.begin(), pick.end()));
  return best;
}

bool OmpTrialMatchesOracle(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::uniform_real_distribution<double> mag(0.5, 1.5);
  const std::size_t batch = 1 + rng() % 3;
  const std::size_t n = std::max<std::size_t>(4, batch + 1 + rng() % 12);
  const Eigen::Index dim = 48;
  std::vector<Vector> raw(n);
  std::vector<GradientAtom> atoms(n);
  for (std::size_t i = 0; i < n; ++i) {
    raw[i] = Vector(dim);
    for (auto& x : raw[i]) x = n01(rng);
    atoms[i] = GradientAtom{i, raw[i], raw[i].norm()};
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  Vector target = Vector::Zero(dim);
  for (std::size_t j = 0; j < batch; ++j) {
    target += (rng() % 2 ? 1.0 : -1.0) * mag(rng) * raw[order[j]];
  }
  Vector noise(dim);
  for (auto& x : noise) x = n01(rng);
  target += 0.01 * target.norm() / noise.norm() * noise;

  Stage3Config cfg;
  cfg.refine_passes = 0;
  std::vector<std::size_t> omp = OmpSelect(target, atoms, batch, cfg).support;
  std::sort(omp.begin(), omp.end());
  return omp == ExhaustiveBestSubset(raw, target, batch);
}

Matrix RandomRankMatrix(std::size_t rows, std::size_t cols, std::size_t r, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  Matrix left(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(r));
  Matrix right(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < left.size(); ++i) left.data()[i] = n01(rng);
  for (Eigen::Index i = 0; i < right.size(); ++i) right.data()[i] = n01(rng);
  if (r == 0) return Matrix::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  return left * right;
}

std::string SourcePath(const std::string& relative) {
  return std::string(GRADLEAK_SOURCE_DIR) + "/" + relative;
}

}  // namespace gradleak::testing
