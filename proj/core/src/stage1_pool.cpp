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

#include "gradleak/stage1_pool.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gradleak/error.hpp"
#include "gradleak/parallel.hpp"

namespace gradleak {

void Stage1Config::Validate(const ModelConfig& model, std::size_t max_len) const {
  Require(lambda_sub >= 0 && lambda_cons >= 0 && lambda_sparse >= 0, ErrorKind::kConfig,
          "stage1: score weights must be non-negative");
  Require(pool_size >= 1, ErrorKind::kConfig, "stage1: pool_size must be >= 1");
  Require(pool_size <= model.vocab_size * max_len, ErrorKind::kConfig,
          "stage1: pool_size exceeds vocab_size * max_len");
  Require(active_heads >= 1 && active_heads <= model.heads, ErrorKind::kConfig,
          "stage1: active_heads must lie in [1, heads]");
  Require(sparsity_heads >= 1 && sparsity_heads <= model.heads, ErrorKind::kConfig,
          "stage1: sparsity_heads must lie in [1, heads]");
  Require(tau_scale > 0, ErrorKind::kConfig, "stage1: tau_scale must be positive");
  Require(rel_tol > 0 && rel_tol < 1, ErrorKind::kConfig, "stage1: rel_tol must lie in (0, 1)");
}

std::vector<std::size_t> SelectActiveHeads(const GradientBundle& g, const ModelConfig& config,
                                           std::size_t n, HeadRanking ranking) {
  Require(n >= 1 && n <= config.heads, ErrorKind::kInvalidInput,
          "select_active_heads: n must lie in [1, H]");
  std::vector<double> key(config.heads);
  for (std::size_t h = 0; h < config.heads; ++h) {
    const Matrix slice = HeadSlice(g, config, 1, ProjRole::kQ, h);
    const double fro2 = slice.squaredNorm();
    if (ranking == HeadRanking::kFrobenius || fro2 == 0.0) {
      key[h] = fro2;
    } else {
      Eigen::JacobiSVD<Eigen::MatrixXd> svd(slice);
      const double top = svd.singularValues()(0);
      key[h] = fro2 / (top * top);
    }
  }
  std::vector<std::size_t> order(config.heads);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return key[a] > key[b]; });
  order.resize(n);
  std::sort(order.begin(), order.end());
  return order;
}

double HeadSubspaceScore(const Vector& query_input, const SubspaceProjector& span,
                         const Matrix& w_q, std::size_t head, std::size_t head_dim) {
  Require(static_cast<std::size_t>(w_q.cols()) >= (head + 1) * head_dim, ErrorKind::kInvalidInput,
          "subspace_score: head out of range");
  const Vector r = span.Residual(query_input);
  const auto c0 = static_cast<Eigen::Index>(head * head_dim);
  return (r.transpose() * w_q.middleCols(c0, static_cast<Eigen::Index>(head_dim))).norm();
}

double AggregateSubspace(std::span<const double> head_scores) {
  Require(!head_scores.empty(), ErrorKind::kInvalidInput, "aggregate_subspace: no heads");
  return std::accumulate(head_scores.begin(), head_scores.end(), 0.0) /
         static_cast<double>(head_scores.size());
}

double ConsistencyScore(std::span<const double> head_scores) {
  if (head_scores.size() < 2) return 0.0;
  const double mean = AggregateSubspace(head_scores);
  double acc = 0.0;
  for (double s : head_scores) acc += (s - mean) * (s - mean);
  return std::sqrt(acc / static_cast<double>(head_scores.size()));
}

std::size_t SubThresholdCount(const Vector& response, const Vector& tau) {
  Require(response.size() == tau.size(), ErrorKind::kInvalidInput,
          "sparsity: response and threshold lengths differ");
  std::size_t count = 0;
  for (Eigen::Index m = 0; m < response.size(); ++m) {
    if (std::abs(response(m)) <= tau(m)) ++count;
  }
  return count;
}

double BlockSparsity(const Vector& response, const SparsityModel& model, std::size_t block) {
  const auto w = static_cast<Eigen::Index>(model.block_width);
  const auto c0 = static_cast<Eigen::Index>(block) * w;
  Require(c0 + w <= response.size(), ErrorKind::kInvalidInput, "sparsity: block out of range");
  return static_cast<double>(SubThresholdCount(response.segment(c0, w), model.tau.segment(c0, w))) /
         static_cast<double>(w);
}

double SparsityScore(const Vector& response, const SparsityModel& model) {
  Require(!model.top_blocks.empty(), ErrorKind::kInvalidState, "sparsity: no blocks selected");
  double acc = 0.0;
  for (std::size_t b : model.top_blocks) acc += BlockSparsity(response, model, b);
  return acc / static_cast<double>(model.top_blocks.size());
}

SparsityModel FitSparsityModel(const Matrix& responses, std::size_t blocks, double tau_scale,
                               std::size_t n_top) {
  Require(responses.rows() > 0, ErrorKind::kInvalidState,
          "sparsity: empty candidate set for threshold estimation");
  Require(blocks >= 1 && responses.cols() % static_cast<Eigen::Index>(blocks) == 0,
          ErrorKind::kInvalidInput, "sparsity: response width not divisible by block count");
  Require(n_top >= 1 && n_top <= blocks, ErrorKind::kInvalidInput,
          "sparsity: n_top must lie in [1, blocks]");
  SparsityModel model;
  model.block_width = static_cast<std::size_t>(responses.cols()) / blocks;
  model.tau.resize(responses.cols());
  std::vector<double> column(static_cast<std::size_t>(responses.rows()));
  for (Eigen::Index m = 0; m < responses.cols(); ++m) {
    for (Eigen::Index c = 0; c < responses.rows(); ++c) {
      column[static_cast<std::size_t>(c)] = std::abs(responses(c, m));
    }
    const std::size_t mid = column.size() / 2;
    std::nth_element(column.begin(), column.begin() + static_cast<std::ptrdiff_t>(mid),
                     column.end());
    double median = column[mid];
    if (column.size() % 2 == 0) {
      median = 0.5 * (median + *std::max_element(column.begin(),
                                                 column.begin() + static_cast<std::ptrdiff_t>(mid)));
    }
    model.tau(m) = tau_scale * median;
  }

  std::vector<double> mean_sparsity(blocks, 0.0);
  for (Eigen::Index c = 0; c < responses.rows(); ++c) {
    const Vector u = responses.row(c).transpose();
    for (std::size_t b = 0; b < blocks; ++b) mean_sparsity[b] += BlockSparsity(u, model, b);
  }
  std::vector<std::size_t> order(blocks);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return mean_sparsity[a] > mean_sparsity[b];
  });
  order.resize(n_top);
  std::sort(order.begin(), order.end());
  model.top_blocks = std::move(order);
  return model;
}

void MinMaxNormalize(std::vector<double>& values, const std::vector<char>& mask) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!mask[i]) continue;
    lo = std::min(lo, values[i]);
    hi = std::max(hi, values[i]);
  }
  const double range = hi - lo;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!mask[i]) continue;
    values[i] = range > 0.0 ? (values[i] - lo) / range : 0.0;
  }
}

Matrix CandidateQueryInputs(const ModelParams& params, std::size_t pos) {
  const ModelConfig& cfg = params.config;
  Require(pos + 1 < cfg.max_pos, ErrorKind::kInvalidInput, "stage1: position out of range");
  const Matrix& tok = params.tensors.at("tok_emb");
  Matrix e = tok;
  e.rowwise() += params.tensors.at("pos_emb").row(static_cast<Eigen::Index>(pos + 1));
  return ApplyLayerNorm(e, params.tensors.at(LayerPath(1, "ln1.gain")),
                        params.tensors.at(LayerPath(1, "ln1.bias")));
}

TokenPool BuildTokenPool(const GradientBundle& g, const Tokenizer& tokenizer,
                         const ModelParams& params, const Stage1Config& cfg, std::size_t max_len) {
  const ModelConfig& mc = params.config;
  cfg.Validate(mc, max_len);
  Require(max_len >= 1 && max_len + 1 <= mc.max_pos, ErrorKind::kInvalidInput,
          "stage1: max_len must lie in [1, max_pos - 1]");
  Require(tokenizer.vocab_size() == mc.vocab_size, ErrorKind::kInvalidInput,
          "stage1: tokenizer and model vocabularies differ");

  const std::size_t V = mc.vocab_size;
  const std::size_t H = mc.heads;
  const std::size_t dh = mc.head_dim();
  const Matrix& grad_q = g.grads.at(ProjectionPath(1, ProjRole::kQ));
  const Matrix& grad_w1 = g.grads.at(LayerPath(1, "ffn.W_1"));
  const Matrix& w_q = params.tensors.at(ProjectionPath(1, ProjRole::kQ));
  Require(grad_q.allFinite() && grad_w1.allFinite(), ErrorKind::kNumeric,
          "stage1: non-finite gradient");

  TokenPool pool;
  pool.max_len = max_len;
  pool.bos_id = tokenizer.bos_id();
  pool.active_heads = SelectActiveHeads(g, mc, cfg.active_heads, cfg.head_ranking);
  const SubspaceProjector span = InputSpanProjector(grad_q, cfg.rel_tol);
  const bool residual_response = cfg.sparsity_response == SparsityResponse::kResidual;
  const SubspaceProjector ffn_span =
      residual_response ? InputSpanProjector(grad_w1, cfg.rel_tol) : SubspaceProjector();
  const Matrix& w1 = params.tensors.at(LayerPath(1, "ffn.W_1"));

  CandidateTable& table = pool.table;
  table.vocab = V;
  table.max_len = max_len;
  const std::size_t n = V * max_len;
  table.eligible.assign(n, 0);
  table.sub.assign(n, 0.0);
  table.cons.assign(n, 0.0);
  table.sparse.assign(n, 0.0);
  table.rel.assign(n, 0.0);
  for (std::size_t p = 0; p < max_len; ++p) {
    for (std::size_t v = 0; v < V; ++v) {
      const auto id = static_cast<TokenId>(v);
      const bool special = tokenizer.IsSpecial(id) && id != tokenizer.unk_id();
      table.eligible[table.index(id, p)] = special ? 0 : 1;
    }
  }

  // Geometric scores and FFN responses, one position per task.
  Matrix responses(static_cast<Eigen::Index>(n), grad_w1.cols());
  ParallelFor(max_len, cfg.threads, [&](std::size_t p) {
    const Matrix a = CandidateQueryInputs(params, p);
    const Matrix resid = span.ResidualRows(a);
    std::vector<double> heads(pool.active_heads.size());
    Matrix per_head(a.rows(), static_cast<Eigen::Index>(pool.active_heads.size()));
    Vector free_score = Vector::Zero(a.rows());
    for (std::size_t i = 0; i < pool.active_heads.size(); ++i) {
      const auto c0 = static_cast<Eigen::Index>(pool.active_heads[i] * dh);
      const auto w = w_q.middleCols(c0, static_cast<Eigen::Index>(dh));
      per_head.col(static_cast<Eigen::Index>(i)) = (resid * w).rowwise().norm();
      free_score += (a * w).rowwise().norm();
    }
    free_score /= static_cast<double>(pool.active_heads.size());
    for (std::size_t v = 0; v < V; ++v) {
      const auto row = static_cast<Eigen::Index>(v);
      for (std::size_t i = 0; i < heads.size(); ++i) {
        heads[i] = per_head(row, static_cast<Eigen::Index>(i));
      }
      const std::size_t idx = table.index(static_cast<TokenId>(v), p);
      table.sub[idx] = AggregateSubspace(heads);
      table.cons[idx] = ConsistencyScore(heads);
      const double f = free_score(row);
      table.rel[idx] = f > 0.0 ? table.sub[idx] / f : 0.0;
    }
    auto rows = responses.middleRows(static_cast<Eigen::Index>(p * V), static_cast<Eigen::Index>(V));
    if (residual_response) {
      rows = ffn_span.ResidualRows(a) * w1;
    } else {
      rows = a * grad_w1;
    }
  });

  std::vector<Eigen::Index> eligible_rows;
  for (std::size_t i = 0; i < n; ++i) {
    if (table.eligible[i]) eligible_rows.push_back(static_cast<Eigen::Index>(i));
  }
  const Matrix candidate_responses = responses(eligible_rows, Eigen::all);
  const SparsityModel sparsity =
      FitSparsityModel(candidate_responses, H, cfg.tau_scale, cfg.sparsity_heads);
  pool.sparsity_heads = sparsity.top_blocks;
  for (Eigen::Index r : eligible_rows) {
    table.sparse[static_cast<std::size_t>(r)] =
        SparsityScore(responses.row(r).transpose(), sparsity);
  }

  std::vector<double> sub = table.sub;
  std::vector<double> cons = table.cons;
  std::vector<double> sparse = table.sparse;
  MinMaxNormalize(sub, table.eligible);
  MinMaxNormalize(cons, table.eligible);
  MinMaxNormalize(sparse, table.eligible);
  table.total.assign(n, std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < n; ++i) {
    if (!table.eligible[i]) continue;
    table.total[i] = cfg.lambda_sub * sub[i] + cfg.lambda_cons * cons[i] -
                     cfg.lambda_sparse * sparse[i];
  }

  // Stable top-k by (s_total, token, pos).
  std::vector<std::size_t> order;
  order.reserve(eligible_rows.size());
  for (Eigen::Index r : eligible_rows) order.push_back(static_cast<std::size_t>(r));
  auto before = [&](std::size_t a, std::size_t b) {
    if (table.total[a] != table.total[b]) return table.total[a] < table.total[b];
    const std::size_t ta = a % V, tb = b % V;
    if (ta != tb) return ta < tb;
    return a / V < b / V;
  };
  const std::size_t k = std::min(cfg.pool_size, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    before);
  order.resize(k);

  pool.by_position.assign(max_len, {});
  pool.entries.reserve(k);
  for (std::size_t idx : order) {
    PoolEntry e;
    e.token = static_cast<TokenId>(idx % V);
    e.pos = idx / V;
    e.s_sub = table.sub[idx];
    e.s_cons = table.cons[idx];
    e.s_sparse = table.sparse[idx];
    e.s_total = table.total[idx];
    pool.by_position[e.pos].push_back(pool.entries.size());
    pool.entries.push_back(e);
  }
  return pool;
}

}  // namespace gradleak
