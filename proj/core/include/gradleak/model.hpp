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

// Toy pre-norm decoder transformer (GELU FFN, learned absolute positions,
// output head tied to the token embedding) with a hand-written backward pass.
// It is both the federated victim and the attacker's LM prior.

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "gradleak/linalg.hpp"
#include "gradleak/tokenizer.hpp"

namespace gradleak {

enum class LabelMode { kNextToken, kClassification };

const char* ToString(LabelMode mode);
LabelMode ParseLabelMode(const std::string& text);

struct ModelConfig {
  std::size_t layers = 2;
  std::size_t hidden = 32;
  std::size_t heads = 4;
  std::size_t ffn = 128;
  std::size_t max_pos = 12;
  std::size_t vocab_size = 256;
  std::size_t classes = 2;
  LabelMode label_mode = LabelMode::kNextToken;
  std::uint64_t seed = 0;
  double init_std = 0.02;

  std::size_t head_dim() const { return hidden / heads; }
  std::size_t ffn_block() const { return ffn / heads; }
  // Throws ErrorKind::kConfig on violated invariants.
  void Validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Token ids start with <bos>. In next-token mode `targets` holds the shifted
// sequence terminated by <eos> (one target per position); in classification
// mode `label` is used instead.
struct Sample {
  TokenSeq ids;
  TokenSeq targets;
  int label = 0;
};

// [<bos>, words...] with targets [words..., <eos>].
Sample MakeLmSample(const Tokenizer& tokenizer, const TokenSeq& words);
Sample MakeClassificationSample(const Tokenizer& tokenizer, const TokenSeq& words, int label);

struct ModelParams {
  ModelConfig config;
  TensorMap tensors;
};

enum class ProjRole { kQ, kK, kV };

std::string LayerPath(std::size_t layer, const std::string& leaf);  // layer is 1-based
std::string ProjectionPath(std::size_t layer, ProjRole role);

// Seeded N(0, init_std^2) weights, unit LayerNorm gains, zero biases.
ModelParams InitParams(const ModelConfig& config);
// Canonical parameter order (all tensors).
std::vector<std::string> AllParamPaths(const ModelConfig& config);
// Weights of the given 1-based layers (attention, FFN, LayerNorm).
std::vector<std::string> LayerParamPaths(const ModelConfig& config,
                                         const std::vector<std::size_t>& layers);

struct BatchMeta {
  std::size_t batch_size = 1;
  LabelMode label_mode = LabelMode::kNextToken;
  std::string protocol = "fedsgd";
};

// Per-parameter gradients for one sample or one aggregate.
struct GradientBundle {
  TensorMap grads;
  BatchMeta meta;
};

// Row-wise LayerNorm (eps 1e-5) with a 1 x d gain and bias.
Matrix ApplyLayerNorm(const Matrix& x, const Matrix& gain, const Matrix& bias);

// Row t = tok_emb[ids[t]] + pos_emb[t + pos_offset].
Matrix Embed(const ModelParams& params, const TokenSeq& ids, std::size_t pos_offset = 0);

struct ForwardResult {
  double loss = 0.0;
  // Residual stream entering each layer, then the output of the last layer.
  std::vector<Matrix> hidden_states;
  // LayerNorm output feeding W_Q/W_K/W_V of each layer.
  std::vector<Matrix> query_inputs;
  // query_inputs split column-wise into heads: [layer][head] is len x d_h.
  std::vector<std::vector<Matrix>> head_hidden;
  // Final LayerNorm output (len x d).
  Matrix final_hidden;
};

ForwardResult Forward(const ModelParams& params, const Sample& sample);

// Analytic gradients of the sample loss. `query_signal`, when given, receives
// the backpropagated signal dL/dQ of every layer (len x d).
GradientBundle Backward(const ModelParams& params, const Sample& sample,
                        double* loss = nullptr, std::vector<Matrix>* query_signal = nullptr);

// Scalar loss only; used by finite-difference checks.
double Loss(const ModelParams& params, const Sample& sample);

// <final hidden state at the last prefix position, output embedding of candidate>.
// An empty prefix scores 0.
double LmPriorScore(const ModelParams& params, const TokenSeq& prefix, TokenId candidate);
// Full next-token logits after the prefix.
Vector NextTokenLogits(const ModelParams& params, const TokenSeq& prefix);

// Columns [head*d_h, (head+1)*d_h) of the stored projection gradient.
Matrix HeadSlice(const GradientBundle& g, const ModelConfig& config, std::size_t layer,
                 ProjRole role, std::size_t head);

// Key/value cache for one decoded prefix. Cheap to copy at toy scale.
struct PrefixState {
  TokenSeq tokens;
  std::vector<Matrix> keys;    // per layer, capacity max_pos x d
  std::vector<Matrix> values;  // per layer
  Vector final_hidden;         // final LayerNorm output at the last position
};

// Incremental evaluation of the causal model, one position at a time. Results
// agree with Forward() to rounding.
class IncrementalModel {
 public:
  explicit IncrementalModel(const ModelParams& params);

  PrefixState Start(const TokenSeq& prefix) const;
  PrefixState Extend(const PrefixState& state, TokenId token) const;

  // Query input (LayerNorm output) of 1-based `layer` at the position that
  // `token` would occupy after `state`. Does not modify the state.
  Vector QueryInputAt(const PrefixState& state, TokenId token, std::size_t layer) const;
  // Same for several tokens at once, one row per token.
  Matrix QueryInputsAt(const PrefixState& state, const std::vector<TokenId>& tokens,
                       std::size_t layer) const;

  const ModelParams& params() const { return params_; }

 private:
  struct LayerRefs {
    const Matrix *ln1_g, *ln1_b, *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
    const Matrix *ln2_g, *ln2_b, *w1, *b1, *w2, *b2;
  };

  struct KvRow {
    Eigen::RowVectorXd key;
    Eigen::RowVectorXd value;
  };

  // Runs layers [0, upto) at the next position and returns the residual
  // stream after them. New key/value rows go to `new_kv`; the query input of
  // 0-based layer `upto` goes to `next_query_input`.
  Vector Step(const PrefixState& state, TokenId token, std::size_t upto,
              std::vector<KvRow>* new_kv, Vector* next_query_input) const;

  const ModelParams& params_;
  std::vector<LayerRefs> layers_;
  const Matrix* tok_emb_;
  const Matrix* pos_emb_;
  const Matrix* lnf_g_;
  const Matrix* lnf_b_;
};

}  // namespace gradleak
