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

// Sentence decoding over the token pool. Each extension is scored by how well
// the second-layer query input it produces fits the input span recovered from
// the second-layer query gradient, blended with the model's own next-token
// preference. Beams are split into groups with staggered starts.

#pragma once

#include <cstddef>
#include <set>
#include <vector>

#include "gradleak/linalg.hpp"
#include "gradleak/model.hpp"
#include "gradleak/stage1_pool.hpp"

namespace gradleak {

struct Stage2Config {
  std::size_t beam_width = 2;
  std::size_t groups = 1;
  double beta_lm = 0.33;
  double lambda_div = 0.15;
  double lambda_ng = 0.2;
  std::size_t ngram_n = 3;
  bool length_normalize = true;
  double tau_pos = 0.25;
  // Candidates whose relative subspace score is below keep_rel always pass
  // the positional filter.
  double keep_rel = 0.05;
  std::size_t fallback_size = 16;
  // Empty means detect from the pool.
  std::vector<std::size_t> candidate_lengths;
  std::size_t max_lengths = 4;
  // A token counts as present at a position when its relative subspace score
  // is below length_rel.
  double length_rel = 0.05;
  // A hypothesis is also finished when every continuation's distance to the
  // span exceeds end_rel times its unprojected norm (0 disables).
  double end_rel = 1e-3;
  // How raw distances enter the step cost. kLogRatio uses ln(d / m + floor)
  // with m the median distance over the group's expansions at that step, so
  // an exact fit and a near miss stay far apart whatever the model scale.
  enum class GeoScale { kRaw, kStandardized, kLogRatio };
  GeoScale geo_scale = GeoScale::kLogRatio;
  double geo_floor = 1e-6;
  // Distances below zero_rel times the unprojected norm count as exact fits
  // (0), so rounding noise is not amplified by the log ratio.
  double zero_rel = 1e-9;
  double rel_tol = kDefaultRankTol;
  std::size_t threads = 1;

  void Validate() const;
};

// Input span of the second-layer query projection plus the heads that are
// averaged when measuring distance to it.
struct Layer2Geometry {
  SubspaceProjector span;
  std::vector<std::size_t> heads;
  std::size_t head_dim = 0;
  std::size_t num_heads = 0;
};

Layer2Geometry BuildLayer2Geometry(const GradientBundle& g, const ModelConfig& config,
                                   const std::vector<std::size_t>& heads, double rel_tol);

// Mean over geometry.heads of || head chunk of (I - P) h ||, h the layer-2
// query input at the new position.
double GeoDistance(const Vector& query_input, const Layer2Geometry& geometry);
// Same, running the model over `prefix` (starting with <bos>) + candidate.
double GeoDistance(const IncrementalModel& model, const TokenSeq& prefix, TokenId candidate,
                   const Layer2Geometry& geometry);

// z-scores; a constant input maps to zeros.
std::vector<double> Standardize(const std::vector<double>& values);

// Distances of one step mapped according to cfg.geo_scale.
std::vector<double> ScaleDistances(const std::vector<double>& raw, const Stage2Config& cfg);

// d_geo - beta_lm * standardized LM score.
double StepCost(double d_geo, double s_lm_standardized, const Stage2Config& cfg);

struct BeamHypothesis {
  TokenSeq tokens;  // words only
  double sum = 0.0;
  double score = 0.0;
  std::set<TokenId> seen_tokens;
  std::set<TokenSeq> seen_ngrams;
  std::size_t group = 0;
  PrefixState state;  // model state after <bos> + tokens
};

// Score of extending `h` by `token` at 1-based step t = h.tokens.size() + 1
// with step cost d_t: (sum + d_t) / t (or the raw sum) plus the repetition
// penalties for an already seen token and an already seen n-gram.
double HypothesisScore(const BeamHypothesis& h, TokenId token, double step_cost,
                       const Stage2Config& cfg);

// Appends `token` with step cost d_t and score, updating the seen sets.
void AdvanceHypothesis(BeamHypothesis& h, TokenId token, double step_cost, double score,
                       const Stage2Config& cfg);

// Pool tokens at `pos` whose subspace score falls below the tau_pos quantile
// of that position's pool scores (tau_pos >= 1 keeps all), plus every
// candidate at `pos` whose relative subspace score is below keep_rel, pooled
// or not (0 disables). Never empty: falls back to the fallback_size best
// tokens at `pos` by subspace score.
std::vector<TokenId> PositionalFilter(const TokenPool& pool, std::size_t pos, double tau_pos,
                                      std::size_t fallback_size = 16, double keep_rel = 0.0);

// Sequence lengths suggested by where the per-position count of relative
// subspace scores below `rel` drops. At most max_lengths values, ascending, always
// including the last position with any such token.
std::vector<std::size_t> DetectLengths(const TokenPool& pool, double rel,
                                       std::size_t max_lengths = 4);

struct DecodedCandidate {
  TokenSeq tokens;
  double score = 0.0;
  std::size_t group = 0;
};

struct DecodeResult {
  std::vector<DecodedCandidate> candidates;  // ascending score, deduplicated
  std::vector<std::size_t> lengths;
};

// Decodes up to the largest candidate length and collects every group's beam
// when it reaches a candidate length. Pruning never looks at the target
// length, so this equals decoding each length separately. Hypotheses that
// pass the end test are collected as well.
DecodeResult RunDecoding(const TokenPool& pool, const GradientBundle& g, const ModelParams& params,
                         const Stage2Config& cfg);

}  // namespace gradleak
