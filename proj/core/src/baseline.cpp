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

#include "gradleak/baseline.hpp"

#include <algorithm>

#include "gradleak/error.hpp"
#include "gradleak/stage1_pool.hpp"

namespace gradleak {

void BaselineConfig::Validate() const {
  Require(member_rel > 0, ErrorKind::kConfig, "baseline: member_rel must be positive");
  Require(rel_tol > 0 && rel_tol < 1, ErrorKind::kConfig, "baseline: rel_tol must lie in (0, 1)");
}

std::vector<std::vector<TokenId>> SpanMembers(const GradientBundle& g, const Tokenizer& tokenizer,
                                              const ModelParams& params, std::size_t max_len,
                                              const BaselineConfig& cfg) {
  const ModelConfig& mc = params.config;
  Require(max_len >= 1 && max_len + 1 <= mc.max_pos, ErrorKind::kInvalidInput,
          "baseline: max_len must lie in [1, max_pos - 1]");
  const SubspaceProjector span =
      InputSpanProjector(g.grads.at(ProjectionPath(1, ProjRole::kQ)), cfg.rel_tol);
  const Matrix& w_q = params.tensors.at(ProjectionPath(1, ProjRole::kQ));
  const std::size_t dh = mc.head_dim();

  std::vector<std::vector<TokenId>> members(max_len);
  for (std::size_t p = 0; p < max_len; ++p) {
    const Matrix a = CandidateQueryInputs(params, p);
    std::vector<std::pair<double, TokenId>> scored;
    for (std::size_t v = 0; v < mc.vocab_size; ++v) {
      const auto id = static_cast<TokenId>(v);
      if (tokenizer.IsSpecial(id) && id != tokenizer.unk_id()) continue;
      const Vector x = a.row(static_cast<Eigen::Index>(v)).transpose();
      std::vector<double> heads(mc.heads);
      for (std::size_t h = 0; h < mc.heads; ++h) heads[h] = HeadSubspaceScore(x, span, w_q, h, dh);
      const Vector q = w_q.transpose() * x;
      double free = 0.0;
      for (std::size_t h = 0; h < mc.heads; ++h) {
        free += q.segment(static_cast<Eigen::Index>(h * dh), static_cast<Eigen::Index>(dh)).norm();
      }
      free /= static_cast<double>(mc.heads);
      const double rel = free > 0.0 ? AggregateSubspace(heads) / free : 0.0;
      if (rel < cfg.member_rel) scored.emplace_back(rel, id);
    }
    std::sort(scored.begin(), scored.end());
    for (const auto& s : scored) members[p].push_back(s.second);
  }
  return members;
}

BaselineResult BaselineExhaustive(const GradientBundle& g, const ModelParams& params,
                                  const Tokenizer& tokenizer, std::size_t batch_size,
                                  std::size_t max_len, const BaselineConfig& cfg) {
  cfg.Validate();
  Require(batch_size >= 1, ErrorKind::kInvalidInput, "baseline: batch size must be >= 1");
  BaselineResult out;
  if (cfg.budget == 0) return out;
  const auto members = SpanMembers(g, tokenizer, params, max_len, cfg);

  // Iterative DFS; each stack frame is (prefix length, next child index).
  TokenSeq prefix;
  std::vector<std::size_t> next_child{0};
  out.nodes = 1;  // root
  while (!next_child.empty() && out.recovered.size() < batch_size) {
    const std::size_t depth = prefix.size();
    const bool has_children = depth < max_len && !members[depth].empty();
    if (!has_children) {
      if (!prefix.empty()) out.recovered.push_back(prefix);
    } else if (next_child.back() < members[depth].size() && out.nodes < cfg.budget) {
      prefix.push_back(members[depth][next_child.back()++]);
      next_child.push_back(0);
      ++out.nodes;
      continue;
    }
    next_child.pop_back();
    if (!prefix.empty()) prefix.pop_back();
  }
  return out;
}

}  // namespace gradleak
