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

// Token pool construction. Every (token, position) pair is scored against the
// first-layer query-gradient geometry and the FFN gradient sparsity pattern;
// the k best pairs form the pool that the decoder draws from.
//
// Positions are word positions: position p is model position p + 1, since
// model position 0 always holds <bos>.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "gradleak/linalg.hpp"
#include "gradleak/model.hpp"
#include "gradleak/tokenizer.hpp"

namespace gradleak {

enum class HeadRanking { kFrobenius, kStableRank };

// FFN response used by the sparsity score. kGradient: u = a * grad(W_1).
// kResidual: u = ((I - P_ffn) a) * W_1 with P_ffn the input span recovered
// from grad(W_1).
enum class SparsityResponse { kGradient, kResidual };

struct Stage1Config {
  double lambda_sub = 0.8;
  double lambda_cons = 0.5;
  double lambda_sparse = 0.5;
  std::size_t pool_size = 40;
  std::size_t active_heads = 1;
  std::size_t sparsity_heads = 1;
  double tau_scale = 0.5;
  double rel_tol = kDefaultRankTol;
  HeadRanking head_ranking = HeadRanking::kFrobenius;
  SparsityResponse sparsity_response = SparsityResponse::kResidual;
  std::size_t threads = 1;

  void Validate(const ModelConfig& model, std::size_t max_len) const;
};

struct PoolEntry {
  TokenId token = 0;
  std::size_t pos = 0;
  double s_sub = 0.0;
  double s_cons = 0.0;
  double s_sparse = 0.0;
  double s_total = 0.0;
};

// Raw scores of every candidate pair, indexed pos * vocab + token. Specials
// other than <unk> are never candidates.
struct CandidateTable {
  std::size_t vocab = 0;
  std::size_t max_len = 0;
  std::vector<char> eligible;
  std::vector<double> sub;
  std::vector<double> cons;
  std::vector<double> sparse;
  std::vector<double> total;
  // sub divided by the same score with no projection: near 0 for pairs
  // inside the span, whatever the share of the vocabulary that is.
  std::vector<double> rel;

  std::size_t index(TokenId token, std::size_t pos) const {
    return pos * vocab + static_cast<std::size_t>(token);
  }
};

struct TokenPool {
  std::vector<PoolEntry> entries;                 // ascending s_total
  std::vector<std::vector<std::size_t>> by_position;  // indices into entries
  CandidateTable table;
  std::vector<std::size_t> active_heads;
  std::vector<std::size_t> sparsity_heads;
  std::size_t max_len = 0;
  TokenId bos_id = 0;
};

// The n heads with the largest layer-1 query-slice Frobenius norm (or stable
// rank); ties go to the lower head index. Result is sorted ascending.
std::vector<std::size_t> SelectActiveHeads(const GradientBundle& g, const ModelConfig& config,
                                           std::size_t n,
                                           HeadRanking ranking = HeadRanking::kFrobenius);

// || ((I - P) a) W_Q[:, head] || for a query input a (length d) and the span
// P of the layer's inputs recovered from its W_Q gradient.
double HeadSubspaceScore(const Vector& query_input, const SubspaceProjector& span,
                         const Matrix& w_q, std::size_t head, std::size_t head_dim);

double AggregateSubspace(std::span<const double> head_scores);
// Population standard deviation; 0 for fewer than two heads.
double ConsistencyScore(std::span<const double> head_scores);

// Number of entries with |u_m| <= tau_m.
std::size_t SubThresholdCount(const Vector& response, const Vector& tau);

// Per-dimension thresholds over the FFN responses of the candidate set.
struct SparsityModel {
  Vector tau;                            // length ffn
  std::size_t block_width = 0;           // ffn / H
  std::vector<std::size_t> top_blocks;   // H_top
};

// Fraction of block dimensions under threshold, averaged over top_blocks.
double SparsityScore(const Vector& response, const SparsityModel& model);
// Fraction of dimensions under threshold within one block.
double BlockSparsity(const Vector& response, const SparsityModel& model, std::size_t block);

// tau_m = tau_scale * median_c |u_m(c)| over the candidate responses (rows).
// H_top = the n blocks with the largest mean block sparsity. Raises
// kInvalidState for an empty candidate set.
SparsityModel FitSparsityModel(const Matrix& responses, std::size_t blocks, double tau_scale,
                               std::size_t n_top);

// Min-max normalization over the selected entries (others untouched). A
// constant input maps to 0.
void MinMaxNormalize(std::vector<double>& values, const std::vector<char>& mask);

TokenPool BuildTokenPool(const GradientBundle& g, const Tokenizer& tokenizer,
                         const ModelParams& params, const Stage1Config& cfg, std::size_t max_len);

// Layer-1 query inputs LN1(tok_emb[v] + pos_emb[p + 1]) for all tokens at word
// position p (V x d).
Matrix CandidateQueryInputs(const ModelParams& params, std::size_t pos);

}  // namespace gradleak
