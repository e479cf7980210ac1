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

// Sparse reconstruction in gradient space. Decoded candidates are clustered,
// each representative becomes a gradient atom under a fixed surrogate label,
// and orthogonal matching pursuit picks the B atoms that explain the
// observed update.

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "gradleak/linalg.hpp"
#include "gradleak/model.hpp"
#include "gradleak/stage2_decode.hpp"
#include "gradleak/tokenizer.hpp"

namespace gradleak {

// Parameters flattened into an atom. kLayerWeights: every tensor of layers 1
// and 2. kQueryWeights: the query projections of layers 1 and 2 only.
enum class AtomParams { kAll, kLayerWeights, kQueryWeights };
const char* ToString(AtomParams params);
AtomParams ParseAtomParams(const std::string& text);

struct Stage3Config {
  double ridge_lambda = 1e-3;
  double eps_scale = 1e-4;
  double tau_cluster = 0.8;
  // Class used as the surrogate label in classification mode. Next-token
  // mode always uses the candidate itself as the target.
  int surrogate_class = 0;
  AtomParams atom_params = AtomParams::kLayerWeights;
  double stagnation_tol = 1e-12;
  // Swap passes after greedy selection (0 keeps the greedy support).
  std::size_t refine_passes = 8;
  // Unused atoms considered for two-for-two exchanges when no single
  // exchange helps (ranked by their best single-exchange residual).
  std::size_t refine_pool = 32;
  // Cluster representatives turned into atoms, best Stage II score first
  // (0 keeps all).
  std::size_t max_atoms = 256;
  std::size_t threads = 1;

  void Validate(const ModelConfig& model) const;
};

// Candidates grouped by single linkage on ROUGE-L F >= tau between
// candidates of equal length. Each cluster is
// represented by its lowest-score member (ties: shorter, then smaller ids).
struct ClusterResult {
  std::vector<DecodedCandidate> representatives;
  std::vector<std::size_t> cluster_of;  // per input candidate
};
ClusterResult ClusterCandidates(const std::vector<DecodedCandidate>& candidates, double tau);

std::vector<std::string> AtomParamPaths(const ModelConfig& config, AtomParams params);

struct GradientAtom {
  std::size_t index = 0;
  Vector values;
  double norm = 0.0;
};

// Sample used to differentiate a candidate under the surrogate label.
Sample SurrogateSample(const ModelConfig& config, const Tokenizer& tokenizer,
                       const TokenSeq& words, int surrogate_class);

// Raises kNumeric for a zero or non-finite gradient.
GradientAtom MakeAtom(const TokenSeq& words, std::size_t index, const ModelParams& params,
                      const Tokenizer& tokenizer, const Stage3Config& cfg,
                      const std::vector<std::string>& order);

enum class OmpStop { kResidual, kSupportSize, kStagnation };
const char* ToString(OmpStop stop);

struct OmpResult {
  std::vector<std::size_t> support;  // positions in the atom list, selection order
  std::vector<double> coefficients;
  std::vector<double> residual_norms;  // ||r_0||, then after each refit
  OmpStop stop = OmpStop::kSupportSize;
  std::size_t swaps = 0;  // exchanges applied by RefineSupport
};

// |<atom, r>| / ||atom|| for every atom (0 for a zero atom).
std::vector<double> NormalizedCorrelations(const std::vector<GradientAtom>& atoms,
                                           const Vector& residual, std::size_t threads = 1);

// Greedy selection by normalized correlation with ridge refits. Zero-norm
// atoms are never selected; if every atom is zero raises kInvalidInput.
OmpResult OmpSelect(const Vector& target, const std::vector<GradientAtom>& atoms,
                    std::size_t batch_size, const Stage3Config& cfg);

// Local search on a greedy support: each pass applies the exchange of one
// support atom for an unused atom that most lowers the refit residual, or
// failing that the best exchange of two support atoms for two atoms from the
// refine_pool shortlist. Stops when nothing lowers the residual by more than
// stagnation_tol relative.
// Updates support, coefficients, residual_norms (one entry per swap), swaps.
void RefineSupport(const Vector& target, const std::vector<GradientAtom>& atoms,
                   const Stage3Config& cfg, OmpResult& result);

struct ReconstructionResult {
  std::vector<DecodedCandidate> representatives;
  std::vector<std::size_t> degenerate;  // representatives left out of the dictionary
  OmpResult omp;
  std::vector<TokenSeq> recovered;      // selected sentences, selection order
  std::vector<double> first_scores;     // per representative; 0 when degenerate
};

ReconstructionResult Reconstruct(const GradientBundle& g,
                                 const std::vector<DecodedCandidate>& candidates,
                                 const ModelParams& params, const Tokenizer& tokenizer,
                                 std::size_t batch_size, const Stage3Config& cfg);

}  // namespace gradleak
