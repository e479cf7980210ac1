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

#include "gradleak/stage2_decode.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "gradleak/error.hpp"
#include "gradleak/parallel.hpp"

namespace gradleak {

void Stage2Config::Validate() const {
  Require(groups >= 1 && beam_width >= groups, ErrorKind::kConfig,
          "stage2: need beam_width >= groups >= 1");
  Require(beam_width % groups == 0, ErrorKind::kConfig,
          "stage2: beam_width must be a multiple of groups");
  Require(beta_lm >= 0 && lambda_div >= 0 && lambda_ng >= 0, ErrorKind::kConfig,
          "stage2: penalties must be non-negative");
  Require(ngram_n >= 1, ErrorKind::kConfig, "stage2: ngram_n must be >= 1");
  Require(tau_pos > 0, ErrorKind::kConfig, "stage2: tau_pos must be positive");
  Require(fallback_size >= 1, ErrorKind::kConfig, "stage2: fallback_size must be >= 1");
  Require(max_lengths >= 1, ErrorKind::kConfig, "stage2: max_lengths must be >= 1");
  Require(length_rel > 0, ErrorKind::kConfig, "stage2: length_rel must be positive");
  Require(end_rel >= 0, ErrorKind::kConfig, "stage2: end_rel must be non-negative");
  Require(geo_floor > 0, ErrorKind::kConfig, "stage2: geo_floor must be positive");
  Require(zero_rel >= 0 && zero_rel < 1, ErrorKind::kConfig, "stage2: zero_rel must lie in [0, 1)");
  Require(keep_rel >= 0, ErrorKind::kConfig, "stage2: keep_rel must be non-negative");
}

Layer2Geometry BuildLayer2Geometry(const GradientBundle& g, const ModelConfig& config,
                                   const std::vector<std::size_t>& heads, double rel_tol) {
  Require(config.layers >= 2, ErrorKind::kInvalidInput, "stage2: model needs two layers");
  Require(!heads.empty(), ErrorKind::kInvalidInput, "stage2: no heads selected");
  for (std::size_t h : heads) {
    Require(h < config.heads, ErrorKind::kInvalidInput, "stage2: head out of range");
  }
  Layer2Geometry geo;
  geo.span = InputSpanProjector(g.grads.at(ProjectionPath(2, ProjRole::kQ)), rel_tol);
  geo.heads = heads;
  geo.head_dim = config.head_dim();
  geo.num_heads = config.heads;
  return geo;
}

double GeoDistance(const Vector& query_input, const Layer2Geometry& geometry) {
  const Vector r = geometry.span.Residual(query_input);
  const auto dh = static_cast<Eigen::Index>(geometry.head_dim);
  double acc = 0.0;
  for (std::size_t h : geometry.heads) {
    acc += r.segment(static_cast<Eigen::Index>(h) * dh, dh).norm();
  }
  return acc / static_cast<double>(geometry.heads.size());
}

double GeoDistance(const IncrementalModel& model, const TokenSeq& prefix, TokenId candidate,
                   const Layer2Geometry& geometry) {
  const ModelConfig& cfg = model.params().config;
  Require(prefix.size() + 1 <= cfg.max_pos, ErrorKind::kInvalidInput,
          "geo_distance: prefix plus candidate exceeds max positions");
  const PrefixState state = model.Start(prefix);
  return GeoDistance(model.QueryInputAt(state, candidate, 2), geometry);
}

std::vector<double> Standardize(const std::vector<double>& values) {
  std::vector<double> out(values.size(), 0.0);
  if (values.empty()) return out;
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  if (!(sd > 0.0)) return out;
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - mean) / sd;
  return out;
}

std::vector<double> ScaleDistances(const std::vector<double>& raw, const Stage2Config& cfg) {
  switch (cfg.geo_scale) {
    case Stage2Config::GeoScale::kRaw:
      return raw;
    case Stage2Config::GeoScale::kStandardized:
      return Standardize(raw);
    case Stage2Config::GeoScale::kLogRatio:
      break;
  }
  if (raw.empty()) return {};
  std::vector<double> sorted = raw;
  const std::size_t mid = sorted.size() / 2;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(mid), sorted.end());
  const double m = sorted[mid];
  std::vector<double> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    out[i] = m > 0.0 ? std::log(raw[i] / m + cfg.geo_floor) : std::log(cfg.geo_floor);
  }
  return out;
}

double StepCost(double d_geo, double s_lm_standardized, const Stage2Config& cfg) {
  return d_geo - cfg.beta_lm * s_lm_standardized;
}

namespace {

// The n-gram that `token` would complete after `tokens`, or empty if too short.
TokenSeq NewNgram(const TokenSeq& tokens, TokenId token, std::size_t n) {
  if (tokens.size() + 1 < n) return {};
  TokenSeq gram(tokens.end() - static_cast<std::ptrdiff_t>(n - 1), tokens.end());
  gram.push_back(token);
  return gram;
}

}  // namespace

double HypothesisScore(const BeamHypothesis& h, TokenId token, double step_cost,
                       const Stage2Config& cfg) {
  const double t = static_cast<double>(h.tokens.size() + 1);
  const double sum = h.sum + step_cost;
  double score = cfg.length_normalize ? sum / t : sum;
  if (h.seen_tokens.contains(token)) score += cfg.lambda_div;
  const TokenSeq gram = NewNgram(h.tokens, token, cfg.ngram_n);
  if (!gram.empty() && h.seen_ngrams.contains(gram)) score += cfg.lambda_ng;
  return score;
}

void AdvanceHypothesis(BeamHypothesis& h, TokenId token, double step_cost, double score,
                       const Stage2Config& cfg) {
  TokenSeq gram = NewNgram(h.tokens, token, cfg.ngram_n);
  if (!gram.empty()) h.seen_ngrams.insert(std::move(gram));
  h.seen_tokens.insert(token);
  h.tokens.push_back(token);
  h.sum += step_cost;
  h.score = score;
}

std::vector<TokenId> PositionalFilter(const TokenPool& pool, std::size_t pos, double tau_pos,
                                      std::size_t fallback_size, double keep_rel) {
  Require(pos < pool.max_len, ErrorKind::kInvalidInput, "positional_filter: position out of range");
  const CandidateTable& table = pool.table;
  std::vector<TokenId> out;
  const std::vector<std::size_t>& here = pool.by_position[pos];
  if (!here.empty()) {
    if (tau_pos >= 1.0) {
      for (std::size_t i : here) out.push_back(pool.entries[i].token);
    } else {
      std::vector<double> scores;
      for (std::size_t i : here) scores.push_back(pool.entries[i].s_sub);
      std::sort(scores.begin(), scores.end());
      const double rank = tau_pos * static_cast<double>(scores.size() - 1);
      const auto lo = static_cast<std::size_t>(std::floor(rank));
      const std::size_t hi = std::min(lo + 1, scores.size() - 1);
      const double q = scores[lo] + (rank - static_cast<double>(lo)) * (scores[hi] - scores[lo]);
      for (std::size_t i : here) {
        if (pool.entries[i].s_sub < q) out.push_back(pool.entries[i].token);
      }
    }
  }
  if (keep_rel > 0.0) {
    for (std::size_t v = 0; v < table.vocab; ++v) {
      const std::size_t i = table.index(static_cast<TokenId>(v), pos);
      if (table.eligible[i] && table.rel[i] < keep_rel) out.push_back(static_cast<TokenId>(v));
    }
  }
  if (!out.empty()) {
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }
  std::vector<TokenId> all;
  for (std::size_t v = 0; v < table.vocab; ++v) {
    const auto id = static_cast<TokenId>(v);
    if (table.eligible[table.index(id, pos)]) all.push_back(id);
  }
  const std::size_t keep = std::min(fallback_size, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(),
                    [&](TokenId a, TokenId b) {
                      const double sa = table.sub[table.index(a, pos)];
                      const double sb = table.sub[table.index(b, pos)];
                      return sa != sb ? sa < sb : a < b;
                    });
  all.resize(keep);
  std::sort(all.begin(), all.end());
  return all;
}

std::vector<std::size_t> DetectLengths(const TokenPool& pool, double rel,
                                       std::size_t max_lengths) {
  const CandidateTable& table = pool.table;
  Require(!table.rel.empty(), ErrorKind::kInvalidState, "detect_lengths: empty candidate table");

  const std::size_t L = table.max_len;
  std::vector<std::size_t> count(L + 1, 0);
  for (std::size_t p = 0; p < L; ++p) {
    for (std::size_t v = 0; v < table.vocab; ++v) {
      const std::size_t i = table.index(static_cast<TokenId>(v), p);
      if (table.eligible[i] && table.rel[i] < rel) ++count[p];
    }
  }
  // (drop size, length) for every position after which the count falls.
  std::vector<std::pair<std::size_t, std::size_t>> drops;
  std::size_t last = 0;
  for (std::size_t p = 0; p < L; ++p) {
    if (count[p] == 0) continue;
    last = p + 1;
    if (count[p + 1] < count[p]) drops.emplace_back(count[p] - count[p + 1], p + 1);
  }
  if (last == 0) return {L};
  std::stable_sort(drops.begin(), drops.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second > b.second;
  });
  std::vector<std::size_t> lengths{last};
  for (const auto& [size, len] : drops) {
    if (lengths.size() >= max_lengths) break;
    if (std::find(lengths.begin(), lengths.end(), len) == lengths.end()) lengths.push_back(len);
  }
  std::sort(lengths.begin(), lengths.end());
  return lengths;
}

namespace {

struct Expansion {
  std::size_t parent = 0;
  TokenId token = 0;
  double cost = 0.0;
  double score = 0.0;
};

bool ExpansionBefore(const Expansion& a, const Expansion& b,
                     const std::vector<BeamHypothesis>& beam) {
  if (a.score != b.score) return a.score < b.score;
  const TokenSeq& ta = beam[a.parent].tokens;
  const TokenSeq& tb = beam[b.parent].tokens;
  if (ta != tb) return ta < tb;
  return a.token < b.token;
}

struct StepCosts {
  std::vector<double> geo;     // raw distances
  std::vector<double> rel;     // distances over the unprojected norm
  std::vector<double> lm_z;    // standardized LM scores
};

StepCosts ExtensionCosts(const IncrementalModel& model, const BeamHypothesis& h,
                         const std::vector<TokenId>& options, const Layer2Geometry& geometry,
                         double zero_rel) {
  const Matrix& tok = model.params().tensors.at("tok_emb");
  std::vector<double> lm(options.size());
  StepCosts out;
  out.geo.resize(options.size());
  out.rel.resize(options.size());
  const Matrix inputs = model.QueryInputsAt(h.state, options, 2);
  const Matrix r = geometry.span.ResidualRows(inputs);
  const auto dh = static_cast<Eigen::Index>(geometry.head_dim);
  for (std::size_t i = 0; i < options.size(); ++i) {
    lm[i] = tok.row(options[i]).dot(h.state.final_hidden);
    const auto row = static_cast<Eigen::Index>(i);
    double acc = 0.0;
    double free = 0.0;
    for (std::size_t hd : geometry.heads) {
      const auto c0 = static_cast<Eigen::Index>(hd) * dh;
      acc += r.block(row, c0, 1, dh).norm();
      free += inputs.block(row, c0, 1, dh).norm();
    }
    const bool exact = acc <= zero_rel * free;
    out.geo[i] = exact ? 0.0 : acc / static_cast<double>(geometry.heads.size());
    out.rel[i] = exact || free <= 0.0 ? 0.0 : acc / free;
  }
  out.lm_z = Standardize(lm);
  return out;
}

// Step costs for every (hypothesis, option) of one group, row-major. With
// the distances are scaled over the whole group so that hypotheses stay
// comparable.
std::vector<double> GroupCosts(const std::vector<StepCosts>& parts, const Stage2Config& cfg) {
  std::vector<double> geo;
  for (const StepCosts& p : parts) geo.insert(geo.end(), p.geo.begin(), p.geo.end());
  geo = ScaleDistances(geo, cfg);
  std::vector<double> cost(geo.size());
  std::size_t k = 0;
  for (const StepCosts& p : parts) {
    for (double z : p.lm_z) {
      cost[k] = StepCost(geo[k], z, cfg);
      ++k;
    }
  }
  return cost;
}

// True when no option brings the hypothesis close to the span.
bool LooksFinished(const std::vector<double>& rel, double end_rel) {
  if (end_rel <= 0.0 || rel.empty()) return false;
  return *std::min_element(rel.begin(), rel.end()) > end_rel;
}

}  // namespace

DecodeResult RunDecoding(const TokenPool& pool, const GradientBundle& g, const ModelParams& params,
                         const Stage2Config& cfg) {
  cfg.Validate();
  Require(!pool.entries.empty(), ErrorKind::kInvalidInput, "run_decoding: empty pool");
  Require(pool.max_len + 1 <= params.config.max_pos, ErrorKind::kInvalidInput,
          "run_decoding: pool positions exceed the model context");

  DecodeResult result;
  result.lengths = cfg.candidate_lengths.empty()
                       ? DetectLengths(pool, cfg.length_rel, cfg.max_lengths)
                       : cfg.candidate_lengths;
  Require(!result.lengths.empty(), ErrorKind::kInvalidState, "run_decoding: no candidate lengths");
  std::sort(result.lengths.begin(), result.lengths.end());
  result.lengths.erase(std::unique(result.lengths.begin(), result.lengths.end()),
                       result.lengths.end());
  for (std::size_t len : result.lengths) {
    Require(len >= 1 && len <= pool.max_len, ErrorKind::kInvalidInput,
            "run_decoding: candidate length out of range");
  }

  const IncrementalModel model(params);
  const Layer2Geometry geometry =
      BuildLayer2Geometry(g, params.config, pool.active_heads, cfg.rel_tol);
  const std::size_t per_group = cfg.beam_width / cfg.groups;

  BeamHypothesis root;
  root.state = model.Start({pool.bos_id});

  // Step 1: rank all first tokens, then deal them out to groups with stride G.
  const std::vector<TokenId> first =
      PositionalFilter(pool, 0, cfg.tau_pos, cfg.fallback_size, cfg.keep_rel);
  const std::vector<double> first_cost =
      GroupCosts({ExtensionCosts(model, root, first, geometry, cfg.zero_rel)}, cfg);
  std::vector<Expansion> ranked;
  for (std::size_t i = 0; i < first.size(); ++i) {
    ranked.push_back({0, first[i], first_cost[i], HypothesisScore(root, first[i], first_cost[i], cfg)});
  }
  const std::vector<BeamHypothesis> root_beam{root};
  std::sort(ranked.begin(), ranked.end(), [&](const Expansion& a, const Expansion& b) {
    return ExpansionBefore(a, b, root_beam);
  });
  std::vector<std::vector<BeamHypothesis>> groups(cfg.groups);
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    const std::size_t grp = r % cfg.groups;
    if (groups[grp].size() >= per_group) continue;
    BeamHypothesis h = root;
    h.group = grp;
    AdvanceHypothesis(h, ranked[r].token, ranked[r].cost, ranked[r].score, cfg);
    h.state = model.Extend(root.state, ranked[r].token);
    groups[grp].push_back(std::move(h));
  }

  std::map<TokenSeq, DecodedCandidate> finished;
  auto finish = [&](const BeamHypothesis& h) {
    auto [it, inserted] =
        finished.try_emplace(h.tokens, DecodedCandidate{h.tokens, h.score, h.group});
    if (!inserted && h.score < it->second.score) it->second = {h.tokens, h.score, h.group};
  };
  auto collect = [&](std::size_t length) {
    if (!std::binary_search(result.lengths.begin(), result.lengths.end(), length)) return;
    for (const auto& beam : groups) {
      for (const BeamHypothesis& h : beam) finish(h);
    }
  };
  collect(1);

  const std::size_t max_len = result.lengths.back();
  for (std::size_t t = 1; t < max_len; ++t) {
    const std::vector<TokenId> options = PositionalFilter(pool, t, cfg.tau_pos, cfg.fallback_size, cfg.keep_rel);
    for (auto& beam : groups) {
      if (beam.empty()) continue;
      std::vector<StepCosts> costs(beam.size());
      ParallelFor(beam.size(), cfg.threads, [&](std::size_t i) {
        costs[i] = ExtensionCosts(model, beam[i], options, geometry, cfg.zero_rel);
      });
      const std::vector<double> group_cost = GroupCosts(costs, cfg);
      std::vector<Expansion> cand;
      cand.reserve(beam.size() * options.size());
      for (std::size_t i = 0; i < beam.size(); ++i) {
        if (LooksFinished(costs[i].rel, cfg.end_rel)) finish(beam[i]);
        for (std::size_t j = 0; j < options.size(); ++j) {
          const double c = group_cost[i * options.size() + j];
          cand.push_back({i, options[j], c, HypothesisScore(beam[i], options[j], c, cfg)});
        }
      }
      const std::size_t keep = std::min(per_group, cand.size());
      std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep), cand.end(),
                        [&](const Expansion& a, const Expansion& b) {
                          return ExpansionBefore(a, b, beam);
                        });
      std::vector<BeamHypothesis> next;
      next.reserve(keep);
      for (std::size_t i = 0; i < keep; ++i) {
        const Expansion& e = cand[i];
        BeamHypothesis h = beam[e.parent];
        AdvanceHypothesis(h, e.token, e.cost, e.score, cfg);
        h.state = model.Extend(beam[e.parent].state, e.token);
        next.push_back(std::move(h));
      }
      beam = std::move(next);
    }
    collect(t + 1);
  }

  for (auto& [tokens, c] : finished) result.candidates.push_back(std::move(c));
  std::stable_sort(result.candidates.begin(), result.candidates.end(),
                   [](const DecodedCandidate& a, const DecodedCandidate& b) {
                     return a.score != b.score ? a.score < b.score : a.tokens < b.tokens;
                   });
  return result;
}

}  // namespace gradleak
