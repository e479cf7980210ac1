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

#include "gradleak/stage3_omp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <tuple>

#include "gradleak/error.hpp"
#include "gradleak/parallel.hpp"
#include "gradleak/rouge.hpp"

namespace gradleak {

const char* ToString(AtomParams params) {
  switch (params) {
    case AtomParams::kAll:
      return "all";
    case AtomParams::kLayerWeights:
      return "layers";
    case AtomParams::kQueryWeights:
      return "query";
  }
  return "?";
}

AtomParams ParseAtomParams(const std::string& text) {
  if (text == "all") return AtomParams::kAll;
  if (text == "layers") return AtomParams::kLayerWeights;
  if (text == "query") return AtomParams::kQueryWeights;
  Fail(ErrorKind::kConfig, "unknown atom parameter set: " + text);
}

const char* ToString(OmpStop stop) {
  switch (stop) {
    case OmpStop::kResidual:
      return "residual";
    case OmpStop::kSupportSize:
      return "support-size";
    case OmpStop::kStagnation:
      return "stagnation";
  }
  return "?";
}

void Stage3Config::Validate(const ModelConfig& model) const {
  Require(ridge_lambda > 0, ErrorKind::kConfig, "stage3: ridge_lambda must be positive");
  Require(eps_scale > 0, ErrorKind::kConfig, "stage3: eps_scale must be positive");
  Require(tau_cluster > 0 && tau_cluster <= 1, ErrorKind::kConfig,
          "stage3: tau_cluster must lie in (0, 1]");
  Require(stagnation_tol > 0, ErrorKind::kConfig, "stage3: stagnation_tol must be positive");
  Require(refine_passes <= 1000, ErrorKind::kConfig, "stage3: refine_passes must be <= 1000");
  Require(surrogate_class >= 0 && static_cast<std::size_t>(surrogate_class) < model.classes,
          ErrorKind::kConfig, "stage3: surrogate_class out of range");
}

ClusterResult ClusterCandidates(const std::vector<DecodedCandidate>& candidates, double tau) {
  const std::size_t n = candidates.size();
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (candidates[i].tokens.size() != candidates[j].tokens.size()) continue;
      if (find(i) == find(j)) continue;
      if (RougeL(candidates[i].tokens, candidates[j].tokens).f >= tau) {
        parent[std::max(find(i), find(j))] = std::min(find(i), find(j));
      }
    }
  }
  auto better = [&](std::size_t a, std::size_t b) {
    const DecodedCandidate& x = candidates[a];
    const DecodedCandidate& y = candidates[b];
    return std::forward_as_tuple(x.score, x.tokens.size(), x.tokens) <
           std::forward_as_tuple(y.score, y.tokens.size(), y.tokens);
  };
  // Best member per root, then clusters ordered by their representative.
  std::vector<std::size_t> best(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r = find(i);
    if (best[r] == n || better(i, best[r])) best[r] = i;
  }
  std::vector<std::size_t> reps;
  for (std::size_t r = 0; r < n; ++r) {
    if (best[r] != n) reps.push_back(best[r]);
  }
  std::sort(reps.begin(), reps.end(), better);
  std::vector<std::size_t> cluster_index(n, 0);
  ClusterResult out;
  for (std::size_t k = 0; k < reps.size(); ++k) {
    cluster_index[find(reps[k])] = k;
    out.representatives.push_back(candidates[reps[k]]);
  }
  out.cluster_of.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.cluster_of[i] = cluster_index[find(i)];
  return out;
}

std::vector<std::string> AtomParamPaths(const ModelConfig& config, AtomParams params) {
  const std::size_t top = std::min<std::size_t>(2, config.layers);
  switch (params) {
    case AtomParams::kAll:
      return AllParamPaths(config);
    case AtomParams::kLayerWeights: {
      std::vector<std::size_t> layers(top);
      std::iota(layers.begin(), layers.end(), 1);
      return LayerParamPaths(config, layers);
    }
    case AtomParams::kQueryWeights: {
      std::vector<std::string> paths;
      for (std::size_t l = 1; l <= top; ++l) paths.push_back(ProjectionPath(l, ProjRole::kQ));
      return paths;
    }
  }
  Fail(ErrorKind::kConfig, "unknown atom parameter set");
}

Sample SurrogateSample(const ModelConfig& config, const Tokenizer& tokenizer,
                       const TokenSeq& words, int surrogate_class) {
  if (config.label_mode == LabelMode::kNextToken) return MakeLmSample(tokenizer, words);
  return MakeClassificationSample(tokenizer, words, surrogate_class);
}

GradientAtom MakeAtom(const TokenSeq& words, std::size_t index, const ModelParams& params,
                      const Tokenizer& tokenizer, const Stage3Config& cfg,
                      const std::vector<std::string>& order) {
  const Sample sample = SurrogateSample(params.config, tokenizer, words, cfg.surrogate_class);
  const GradientBundle g = Backward(params, sample);
  GradientAtom atom;
  atom.index = index;
  atom.values = Flatten(g.grads, order);
  atom.norm = atom.values.norm();
  Require(std::isfinite(atom.norm) && atom.norm > 0.0, ErrorKind::kNumeric,
          "make_atom: degenerate gradient atom");
  return atom;
}

std::vector<double> NormalizedCorrelations(const std::vector<GradientAtom>& atoms,
                                           const Vector& residual, std::size_t threads) {
  std::vector<double> out(atoms.size(), 0.0);
  ParallelFor(atoms.size(), threads, [&](std::size_t i) {
    if (atoms[i].norm > 0.0) out[i] = std::abs(atoms[i].values.dot(residual)) / atoms[i].norm;
  });
  return out;
}

OmpResult OmpSelect(const Vector& target, const std::vector<GradientAtom>& atoms,
                    std::size_t batch_size, const Stage3Config& cfg) {
  Require(!atoms.empty(), ErrorKind::kInvalidInput, "omp: empty dictionary");
  Require(batch_size >= 1, ErrorKind::kInvalidInput, "omp: batch size must be >= 1");
  Require(std::any_of(atoms.begin(), atoms.end(), [](const GradientAtom& a) { return a.norm > 0.0; }),
          ErrorKind::kInvalidInput, "omp: every atom is degenerate");
  for (const GradientAtom& a : atoms) {
    Require(a.values.size() == target.size(), ErrorKind::kInvalidInput,
            "omp: atom length differs from target");
  }

  const double eps = cfg.eps_scale * target.norm();
  OmpResult result;
  Vector residual = target;
  result.residual_norms.push_back(residual.norm());
  std::vector<char> used(atoms.size(), 0);
  std::vector<const Vector*> active;

  while (true) {
    if (result.residual_norms.back() < eps) {
      result.stop = OmpStop::kResidual;
      break;
    }
    if (result.support.size() >= batch_size) {
      result.stop = OmpStop::kSupportSize;
      break;
    }
    const std::vector<double> corr = NormalizedCorrelations(atoms, residual, cfg.threads);
    std::size_t pick = atoms.size();
    for (std::size_t i = 0; i < atoms.size(); ++i) {
      if (used[i] || atoms[i].norm <= 0.0) continue;
      if (pick == atoms.size() || corr[i] > corr[pick]) pick = i;
    }
    if (pick == atoms.size()) {
      result.stop = OmpStop::kStagnation;
      break;
    }
    used[pick] = 1;
    result.support.push_back(pick);
    active.push_back(&atoms[pick].values);

    const Vector alpha = RidgeSolve(std::span<const Vector* const>(active), target, cfg.ridge_lambda);
    residual = target;
    for (std::size_t j = 0; j < active.size(); ++j) {
      residual.noalias() -= alpha[static_cast<Eigen::Index>(j)] * *active[j];
    }
    result.coefficients.assign(alpha.data(), alpha.data() + alpha.size());
    const double before = result.residual_norms.back();
    result.residual_norms.push_back(residual.norm());
    if (before - result.residual_norms.back() < cfg.stagnation_tol * before) {
      result.stop = OmpStop::kStagnation;
      break;
    }
  }
  return result;
}

namespace {

// Residual norm of the ridge refit on `support`, from Gram entries.
double RefitResidual(const Eigen::MatrixXd& gram, const Vector& rhs, double target_sq,
                     const std::vector<std::size_t>& support, double lambda, Vector* alpha) {
  const auto k = static_cast<Eigen::Index>(support.size());
  Eigen::MatrixXd g(k, k);
  Vector b(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    b(i) = rhs(static_cast<Eigen::Index>(support[i]));
    for (Eigen::Index j = 0; j < k; ++j) {
      g(i, j) = gram(static_cast<Eigen::Index>(support[i]), static_cast<Eigen::Index>(support[j]));
    }
  }
  Eigen::MatrixXd reg = g;
  reg.diagonal().array() += lambda;
  Eigen::LLT<Eigen::MatrixXd> llt(reg);
  if (llt.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
  const Vector a = llt.solve(b);
  if (alpha) *alpha = a;
  const double sq = target_sq - 2.0 * a.dot(b) + a.dot(g * a);
  return std::sqrt(std::max(sq, 0.0));
}

}  // namespace

void RefineSupport(const Vector& target, const std::vector<GradientAtom>& atoms,
                   const Stage3Config& cfg, OmpResult& result) {
  const std::size_t n = atoms.size();
  if (cfg.refine_passes == 0 || result.support.empty() || result.support.size() >= n) return;
  const auto nn = static_cast<Eigen::Index>(n);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  Eigen::MatrixXd gram = Eigen::MatrixXd::Constant(nn, nn, nan);
  Vector rhs(nn);
  ParallelFor(n, cfg.threads, [&](std::size_t j) {
    const auto jj = static_cast<Eigen::Index>(j);
    rhs(jj) = atoms[j].values.dot(target);
    gram(jj, jj) = atoms[j].norm * atoms[j].norm;
  });
  const double target_sq = target.squaredNorm();
  auto fill = [&](const std::vector<std::size_t>& columns) {
    ParallelFor(n, cfg.threads, [&](std::size_t j) {
      const auto jj = static_cast<Eigen::Index>(j);
      for (std::size_t c : columns) {
        const auto cc = static_cast<Eigen::Index>(c);
        if (std::isnan(gram(jj, cc))) gram(jj, cc) = atoms[j].values.dot(atoms[c].values);
      }
    });
    for (std::size_t c : columns) {
      const auto cc = static_cast<Eigen::Index>(c);
      for (Eigen::Index j = 0; j < nn; ++j) gram(cc, j) = gram(j, cc);
    }
  };

  std::vector<std::size_t> support = result.support;
  fill(support);
  double current = RefitResidual(gram, rhs, target_sq, support, cfg.ridge_lambda, nullptr);
  const double inf = std::numeric_limits<double>::infinity();
  for (std::size_t pass = 0; pass < cfg.refine_passes; ++pass) {
    std::vector<char> in_support(n, 0);
    for (std::size_t s : support) in_support[s] = 1;
    // best[j] = (residual, slot) for replacing some slot by atom j.
    std::vector<std::pair<double, std::size_t>> best(n, {inf, 0});
    ParallelFor(n, cfg.threads, [&](std::size_t j) {
      if (in_support[j] || atoms[j].norm <= 0.0) return;
      std::vector<std::size_t> trial = support;
      for (std::size_t slot = 0; slot < support.size(); ++slot) {
        trial[slot] = j;
        const double r = RefitResidual(gram, rhs, target_sq, trial, cfg.ridge_lambda, nullptr);
        if (r < best[j].first) best[j] = {r, slot};
        trial[slot] = support[slot];
      }
    });
    std::size_t pick = n;
    for (std::size_t j = 0; j < n; ++j) {
      if (best[j].first < (pick == n ? current : best[pick].first)) pick = j;
    }
    if (pick != n && current - best[pick].first > cfg.stagnation_tol * current) {
      support[best[pick].second] = pick;
      current = best[pick].first;
      ++result.swaps;
      fill({pick});
      continue;
    }
    if (support.size() < 2 || cfg.refine_pool < 2) break;

    std::vector<std::size_t> pool;
    for (std::size_t j = 0; j < n; ++j) {
      if (best[j].first < inf) pool.push_back(j);
    }
    std::stable_sort(pool.begin(), pool.end(),
                     [&](std::size_t a, std::size_t b) { return best[a].first < best[b].first; });
    if (pool.size() > cfg.refine_pool) pool.resize(cfg.refine_pool);
    if (pool.size() < 2) break;
    fill(pool);
    struct Pair {
      double residual;
      std::size_t s1, s2, j1, j2;
    };
    const std::size_t m = pool.size();
    std::vector<Pair> best_pair(m, Pair{inf, 0, 0, 0, 0});
    ParallelFor(m, cfg.threads, [&](std::size_t a) {
      std::vector<std::size_t> trial = support;
      for (std::size_t b = a + 1; b < m; ++b) {
        for (std::size_t s1 = 0; s1 < support.size(); ++s1) {
          for (std::size_t s2 = s1 + 1; s2 < support.size(); ++s2) {
            trial[s1] = pool[a];
            trial[s2] = pool[b];
            const double r = RefitResidual(gram, rhs, target_sq, trial, cfg.ridge_lambda, nullptr);
            if (r < best_pair[a].residual) best_pair[a] = {r, s1, s2, pool[a], pool[b]};
            trial[s1] = support[s1];
            trial[s2] = support[s2];
          }
        }
      }
    });
    const Pair* top = nullptr;
    for (const Pair& p : best_pair) {
      if (p.residual < (top ? top->residual : current)) top = &p;
    }
    if (!top || current - top->residual <= cfg.stagnation_tol * current) break;
    support[top->s1] = top->j1;
    support[top->s2] = top->j2;
    current = top->residual;
    result.swaps += 2;
  }
  if (result.swaps == 0) return;

  std::vector<const Vector*> active;
  for (std::size_t s : support) active.push_back(&atoms[s].values);
  const Vector alpha = RidgeSolve(std::span<const Vector* const>(active), target, cfg.ridge_lambda);
  Vector residual = target;
  for (std::size_t j = 0; j < active.size(); ++j) {
    residual.noalias() -= alpha[static_cast<Eigen::Index>(j)] * *active[j];
  }
  result.support = support;
  result.coefficients.assign(alpha.data(), alpha.data() + alpha.size());
  result.residual_norms.push_back(residual.norm());
}

ReconstructionResult Reconstruct(const GradientBundle& g,
                                 const std::vector<DecodedCandidate>& candidates,
                                 const ModelParams& params, const Tokenizer& tokenizer,
                                 std::size_t batch_size, const Stage3Config& cfg) {
  cfg.Validate(params.config);
  Require(!candidates.empty(), ErrorKind::kInvalidInput, "reconstruct: no candidates");
  ReconstructionResult out;
  out.representatives = ClusterCandidates(candidates, cfg.tau_cluster).representatives;
  if (cfg.max_atoms > 0 && out.representatives.size() > cfg.max_atoms) {
    out.representatives.resize(cfg.max_atoms);
  }

  const std::vector<std::string> order = AtomParamPaths(params.config, cfg.atom_params);
  const std::size_t n = out.representatives.size();
  std::vector<GradientAtom> built(n);
  std::vector<char> ok(n, 0);
  ParallelFor(n, cfg.threads, [&](std::size_t i) {
    try {
      built[i] = MakeAtom(out.representatives[i].tokens, i, params, tokenizer, cfg, order);
      ok[i] = 1;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kNumeric) throw;
    }
  });
  std::vector<GradientAtom> atoms;
  for (std::size_t i = 0; i < n; ++i) {
    if (ok[i]) {
      atoms.push_back(std::move(built[i]));
    } else {
      out.degenerate.push_back(i);
    }
  }
  Require(!atoms.empty(), ErrorKind::kInvalidInput, "reconstruct: every atom is degenerate");

  const Vector target = Flatten(g.grads, order);
  const std::vector<double> first = NormalizedCorrelations(atoms, target, cfg.threads);
  out.first_scores.assign(n, 0.0);
  for (std::size_t k = 0; k < atoms.size(); ++k) out.first_scores[atoms[k].index] = first[k];
  out.omp = OmpSelect(target, atoms, batch_size, cfg);
  RefineSupport(target, atoms, cfg, out.omp);
  // Report support in representative indices.
  for (std::size_t& s : out.omp.support) {
    s = atoms[s].index;
    out.recovered.push_back(out.representatives[s].tokens);
  }
  return out;
}

}  // namespace gradleak
