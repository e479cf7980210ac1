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

#include "gradleak/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "gradleak/error.hpp"

namespace gradleak {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;

double Gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

double GeluGrad(double x) {
  const double u = kGeluC * (x + kGeluA * x * x * x);
  const double th = std::tanh(u);
  return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

struct LnCache {
  Matrix normalized;
  Vector inv_std;
};

Matrix LayerNormForward(const Matrix& x, const Matrix& gain, const Matrix& bias, LnCache* cache) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  Matrix normalized(n, d);
  Vector inv_std(n);
  for (Eigen::Index t = 0; t < n; ++t) {
    const double mean = x.row(t).mean();
    const RowVec centered = x.row(t).array() - mean;
    const double var = centered.squaredNorm() / static_cast<double>(d);
    inv_std(t) = 1.0 / std::sqrt(var + kLnEps);
    normalized.row(t) = centered * inv_std(t);
  }
  Matrix out = normalized.array().rowwise() * gain.row(0).array();
  out.rowwise() += bias.row(0);
  if (cache != nullptr) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

RowVec LayerNormRow(const RowVec& x, const Matrix& gain, const Matrix& bias) {
  const double mean = x.mean();
  const RowVec centered = x.array() - mean;
  const double var = centered.squaredNorm() / static_cast<double>(x.size());
  const RowVec normalized = centered / std::sqrt(var + kLnEps);
  return normalized.cwiseProduct(gain.row(0)) + bias.row(0);
}

Matrix LayerNormBackward(const Matrix& dout, const LnCache& cache, const Matrix& gain,
                         Matrix& dgain, Matrix& dbias) {
  const Eigen::Index n = dout.rows();
  const auto d = static_cast<double>(dout.cols());
  dgain.row(0) += (dout.array() * cache.normalized.array()).colwise().sum().matrix();
  dbias.row(0) += dout.colwise().sum();
  Matrix dx(n, dout.cols());
  for (Eigen::Index t = 0; t < n; ++t) {
    const RowVec dn = dout.row(t).cwiseProduct(gain.row(0));
    const double mean_dn = dn.sum() / d;
    const double mean_dn_n = dn.dot(cache.normalized.row(t)) / d;
    dx.row(t) = cache.inv_std(t) *
                (dn.array() - mean_dn - cache.normalized.row(t).array() * mean_dn_n).matrix();
  }
  return dx;
}

// Stable softmax over the first `count` entries; the rest are zero.
void SoftmaxPrefix(Eigen::Ref<RowVec> row, Eigen::Index count) {
  const double mx = row.head(count).maxCoeff();
  double total = 0.0;
  for (Eigen::Index j = 0; j < count; ++j) {
    row(j) = std::exp(row(j) - mx);
    total += row(j);
  }
  row.head(count) /= total;
  row.tail(row.size() - count).setZero();
}

double CrossEntropy(const RowVec& logits, Eigen::Index target, RowVec* probs) {
  const double mx = logits.maxCoeff();
  RowVec p = (logits.array() - mx).exp();
  const double total = p.sum();
  p /= total;
  const double loss = -(logits(target) - mx - std::log(total));
  if (probs != nullptr) *probs = std::move(p);
  return loss;
}

struct LayerCache {
  Matrix input;        // residual stream entering the layer
  LnCache ln1;
  Matrix a;            // LN1 output
  Matrix q, k, v;
  std::vector<Matrix> probs;  // per head, n x n (causal)
  Matrix attn;         // concatenated head outputs
  Matrix mid;          // residual after attention
  LnCache ln2;
  Matrix m;            // LN2 output
  Matrix pre_act;      // m W_1 + b_1
  Matrix act;          // gelu(pre_act)
};

struct Cache {
  std::vector<LayerCache> layers;
  Matrix final_input;
  LnCache lnf;
  Matrix z;
  Matrix probs;   // next-token: n x V ; classification: 1 x C
  RowVec pooled;
};

struct LayerView {
  const Matrix &ln1_g, &ln1_b, &wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo;
  const Matrix &ln2_g, &ln2_b, &w1, &b1, &w2, &b2;
};

LayerView ViewLayer(const TensorMap& t, std::size_t layer) {
  auto p = [&](const char* leaf) -> const Matrix& { return t.at(LayerPath(layer, leaf)); };
  return LayerView{p("ln1.gain"), p("ln1.bias"), p("W_Q"), p("b_Q"), p("W_K"), p("b_K"),
                   p("W_V"),      p("b_V"),      p("W_O"), p("b_O"), p("ln2.gain"),
                   p("ln2.bias"), p("ffn.W_1"),  p("ffn.b_1"), p("ffn.W_2"), p("ffn.b_2")};
}

void ValidateSample(const ModelParams& params, const Sample& sample) {
  const ModelConfig& cfg = params.config;
  Require(!sample.ids.empty(), ErrorKind::kInvalidInput, "sample: empty token sequence");
  Require(sample.ids.size() <= cfg.max_pos, ErrorKind::kInvalidInput,
          "sample: length exceeds max positions");
  for (TokenId id : sample.ids) {
    Require(id >= 0 && static_cast<std::size_t>(id) < cfg.vocab_size, ErrorKind::kInvalidInput,
            "sample: token id out of range");
  }
  if (cfg.label_mode == LabelMode::kNextToken) {
    Require(sample.targets.size() == sample.ids.size(), ErrorKind::kInvalidInput,
            "sample: next-token targets must match the sequence length");
    for (TokenId id : sample.targets) {
      Require(id >= 0 && static_cast<std::size_t>(id) < cfg.vocab_size,
              ErrorKind::kInvalidInput, "sample: target id out of range");
    }
  } else {
    Require(sample.label >= 0 && static_cast<std::size_t>(sample.label) < cfg.classes,
            ErrorKind::kInvalidInput, "sample: class label out of range");
  }
}

double RunForward(const ModelParams& params, const Sample& sample, Cache& cache) {
  ValidateSample(params, sample);
  const ModelConfig& cfg = params.config;
  const TensorMap& t = params.tensors;
  const auto n = static_cast<Eigen::Index>(sample.ids.size());
  const auto dh = static_cast<Eigen::Index>(cfg.head_dim());
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Matrix x = Embed(params, sample.ids);
  cache.layers.resize(cfg.layers);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const LayerView w = ViewLayer(t, l + 1);
    LayerCache& lc = cache.layers[l];
    lc.input = x;
    lc.a = LayerNormForward(x, w.ln1_g, w.ln1_b, &lc.ln1);
    lc.q = (lc.a * w.wq).rowwise() + w.bq.row(0);
    lc.k = (lc.a * w.wk).rowwise() + w.bk.row(0);
    lc.v = (lc.a * w.wv).rowwise() + w.bv.row(0);
    lc.attn = Matrix::Zero(n, x.cols());
    lc.probs.assign(cfg.heads, Matrix());
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      const Eigen::Index c0 = static_cast<Eigen::Index>(h) * dh;
      Matrix s = (lc.q.middleCols(c0, dh) * lc.k.middleCols(c0, dh).transpose()) * scale;
      for (Eigen::Index i = 0; i < n; ++i) SoftmaxPrefix(s.row(i), i + 1);
      lc.attn.middleCols(c0, dh) = s * lc.v.middleCols(c0, dh);
      lc.probs[h] = std::move(s);
    }
    lc.mid = x + ((lc.attn * w.wo).rowwise() + w.bo.row(0));
    lc.m = LayerNormForward(lc.mid, w.ln2_g, w.ln2_b, &lc.ln2);
    lc.pre_act = (lc.m * w.w1).rowwise() + w.b1.row(0);
    lc.act = lc.pre_act.unaryExpr(&Gelu);
    x = lc.mid + ((lc.act * w.w2).rowwise() + w.b2.row(0));
  }
  cache.final_input = x;
  cache.z = LayerNormForward(x, t.at("ln_f.gain"), t.at("ln_f.bias"), &cache.lnf);

  double loss = 0.0;
  if (cfg.label_mode == LabelMode::kNextToken) {
    const Matrix logits = cache.z * t.at("tok_emb").transpose();
    cache.probs.resize(n, logits.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
      RowVec p;
      loss += CrossEntropy(logits.row(i), sample.targets[static_cast<std::size_t>(i)], &p);
      cache.probs.row(i) = p;
    }
    loss /= static_cast<double>(n);
  } else {
    cache.pooled = cache.z.colwise().mean();
    const RowVec logits = cache.pooled * t.at("cls.W") + t.at("cls.b").row(0);
    RowVec p;
    loss = CrossEntropy(logits, sample.label, &p);
    cache.probs = p;
  }
  if (!std::isfinite(loss)) Fail(ErrorKind::kNumeric, "forward: non-finite loss");
  return loss;
}

}  // namespace

const char* ToString(LabelMode mode) {
  return mode == LabelMode::kNextToken ? "next_token" : "classification";
}

LabelMode ParseLabelMode(const std::string& text) {
  if (text == "next_token") return LabelMode::kNextToken;
  if (text == "classification") return LabelMode::kClassification;
  Fail(ErrorKind::kConfig, "unknown label mode: " + text);
}

void ModelConfig::Validate() const {
  Require(layers >= 2, ErrorKind::kConfig, "model: at least two layers are required");
  Require(hidden >= 1 && heads >= 1, ErrorKind::kConfig, "model: hidden and heads must be >= 1");
  Require(hidden % heads == 0, ErrorKind::kConfig, "model: hidden must be divisible by heads");
  Require(ffn >= heads && ffn % heads == 0, ErrorKind::kConfig,
          "model: ffn must be a positive multiple of heads");
  Require(max_pos >= 2, ErrorKind::kConfig, "model: max_pos must be >= 2");
  Require(vocab_size >= 5, ErrorKind::kConfig, "model: vocabulary too small");
  Require(classes >= 2, ErrorKind::kConfig, "model: classes must be >= 2");
  Require(init_std > 0.0 && std::isfinite(init_std), ErrorKind::kConfig,
          "model: init_std must be positive");
}

Sample MakeLmSample(const Tokenizer& tokenizer, const TokenSeq& words) {
  Sample s;
  s.ids.reserve(words.size() + 1);
  s.ids.push_back(tokenizer.bos_id());
  s.ids.insert(s.ids.end(), words.begin(), words.end());
  s.targets = words;
  s.targets.push_back(tokenizer.eos_id());
  return s;
}

Sample MakeClassificationSample(const Tokenizer& tokenizer, const TokenSeq& words, int label) {
  Sample s;
  s.ids.push_back(tokenizer.bos_id());
  s.ids.insert(s.ids.end(), words.begin(), words.end());
  s.label = label;
  return s;
}

std::string LayerPath(std::size_t layer, const std::string& leaf) {
  return "layer" + std::to_string(layer) + "." + leaf;
}

std::string ProjectionPath(std::size_t layer, ProjRole role) {
  switch (role) {
    case ProjRole::kQ: return LayerPath(layer, "W_Q");
    case ProjRole::kK: return LayerPath(layer, "W_K");
    case ProjRole::kV: return LayerPath(layer, "W_V");
  }
  return {};
}

namespace {

const std::vector<std::string>& LayerLeaves() {
  static const std::vector<std::string> leaves = {
      "ln1.gain", "ln1.bias", "W_Q", "b_Q", "W_K", "b_K", "W_V", "b_V", "W_O", "b_O",
      "ln2.gain", "ln2.bias", "ffn.W_1", "ffn.b_1", "ffn.W_2", "ffn.b_2"};
  return leaves;
}

}  // namespace

std::vector<std::string> AllParamPaths(const ModelConfig& config) {
  std::vector<std::string> paths = {"tok_emb", "pos_emb"};
  for (std::size_t l = 1; l <= config.layers; ++l) {
    for (const std::string& leaf : LayerLeaves()) paths.push_back(LayerPath(l, leaf));
  }
  for (const char* p : {"ln_f.gain", "ln_f.bias", "cls.W", "cls.b"}) paths.emplace_back(p);
  return paths;
}

std::vector<std::string> LayerParamPaths(const ModelConfig& config,
                                         const std::vector<std::size_t>& layers) {
  std::vector<std::string> paths;
  for (std::size_t l : layers) {
    Require(l >= 1 && l <= config.layers, ErrorKind::kInvalidInput, "layer index out of range");
    for (const std::string& leaf : LayerLeaves()) paths.push_back(LayerPath(l, leaf));
  }
  return paths;
}

ModelParams InitParams(const ModelConfig& config) {
  config.Validate();
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, config.init_std);
  const auto d = static_cast<Eigen::Index>(config.hidden);
  const auto f = static_cast<Eigen::Index>(config.ffn);
  auto randn = [&](Eigen::Index r, Eigen::Index c) {
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
    return m;
  };
  auto ones = [](Eigen::Index c) { return Matrix::Ones(1, c); };
  auto zeros = [](Eigen::Index c) { return Matrix::Zero(1, c); };

  ModelParams params;
  params.config = config;
  TensorMap& t = params.tensors;
  t.Add("tok_emb", randn(static_cast<Eigen::Index>(config.vocab_size), d));
  t.Add("pos_emb", randn(static_cast<Eigen::Index>(config.max_pos), d));
  for (std::size_t l = 1; l <= config.layers; ++l) {
    t.Add(LayerPath(l, "ln1.gain"), ones(d));
    t.Add(LayerPath(l, "ln1.bias"), zeros(d));
    for (const char* proj : {"Q", "K", "V", "O"}) {
      t.Add(LayerPath(l, std::string("W_") + proj), randn(d, d));
      t.Add(LayerPath(l, std::string("b_") + proj), zeros(d));
    }
    t.Add(LayerPath(l, "ln2.gain"), ones(d));
    t.Add(LayerPath(l, "ln2.bias"), zeros(d));
    t.Add(LayerPath(l, "ffn.W_1"), randn(d, f));
    t.Add(LayerPath(l, "ffn.b_1"), zeros(f));
    t.Add(LayerPath(l, "ffn.W_2"), randn(f, d));
    t.Add(LayerPath(l, "ffn.b_2"), zeros(d));
  }
  t.Add("ln_f.gain", ones(d));
  t.Add("ln_f.bias", zeros(d));
  t.Add("cls.W", randn(d, static_cast<Eigen::Index>(config.classes)));
  t.Add("cls.b", zeros(static_cast<Eigen::Index>(config.classes)));

  // Insertion order above is the canonical order; keep them in lockstep.
  if (t.paths() != AllParamPaths(config)) {
    Fail(ErrorKind::kInvalidState, "init: parameter order drifted from AllParamPaths");
  }
  return params;
}

Matrix ApplyLayerNorm(const Matrix& x, const Matrix& gain, const Matrix& bias) {
  Require(gain.cols() == x.cols() && bias.cols() == x.cols(), ErrorKind::kInvalidInput,
          "layer_norm: width mismatch");
  return LayerNormForward(x, gain, bias, nullptr);
}

Matrix Embed(const ModelParams& params, const TokenSeq& ids, std::size_t pos_offset) {
  const ModelConfig& cfg = params.config;
  const Matrix& tok = params.tensors.at("tok_emb");
  const Matrix& pos = params.tensors.at("pos_emb");
  Require(ids.size() + pos_offset <= cfg.max_pos, ErrorKind::kInvalidInput,
          "embed: sequence exceeds max positions");
  Matrix out(static_cast<Eigen::Index>(ids.size()), tok.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    Require(ids[i] >= 0 && static_cast<std::size_t>(ids[i]) < cfg.vocab_size,
            ErrorKind::kInvalidInput, "embed: token id out of range");
    out.row(static_cast<Eigen::Index>(i)) =
        tok.row(ids[i]) + pos.row(static_cast<Eigen::Index>(i + pos_offset));
  }
  return out;
}

ForwardResult Forward(const ModelParams& params, const Sample& sample) {
  Cache cache;
  ForwardResult out;
  out.loss = RunForward(params, sample, cache);
  const ModelConfig& cfg = params.config;
  const auto dh = static_cast<Eigen::Index>(cfg.head_dim());
  for (const LayerCache& lc : cache.layers) {
    out.hidden_states.push_back(lc.input);
    out.query_inputs.push_back(lc.a);
    std::vector<Matrix> heads;
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      heads.push_back(lc.a.middleCols(static_cast<Eigen::Index>(h) * dh, dh));
    }
    out.head_hidden.push_back(std::move(heads));
  }
  out.hidden_states.push_back(cache.final_input);
  out.final_hidden = cache.z;
  return out;
}

double Loss(const ModelParams& params, const Sample& sample) {
  Cache cache;
  return RunForward(params, sample, cache);
}

GradientBundle Backward(const ModelParams& params, const Sample& sample, double* loss,
                        std::vector<Matrix>* query_signal) {
  Cache cache;
  const double value = RunForward(params, sample, cache);
  if (loss != nullptr) *loss = value;

  const ModelConfig& cfg = params.config;
  const TensorMap& t = params.tensors;
  const auto n = static_cast<Eigen::Index>(sample.ids.size());
  const auto dh = static_cast<Eigen::Index>(cfg.head_dim());
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  GradientBundle out;
  out.grads = t.ZerosLike();
  out.meta.batch_size = 1;
  out.meta.label_mode = cfg.label_mode;
  TensorMap& g = out.grads;

  Matrix dz;
  if (cfg.label_mode == LabelMode::kNextToken) {
    Matrix dlogits = cache.probs;
    for (Eigen::Index i = 0; i < n; ++i) dlogits(i, sample.targets[static_cast<std::size_t>(i)]) -= 1.0;
    dlogits /= static_cast<double>(n);
    dz = dlogits * t.at("tok_emb");
    g.at("tok_emb").noalias() += dlogits.transpose() * cache.z;
  } else {
    RowVec dlogits = cache.probs.row(0);
    dlogits(sample.label) -= 1.0;
    g.at("cls.W").noalias() += cache.pooled.transpose() * dlogits;
    g.at("cls.b").row(0) += dlogits;
    const RowVec dpooled = dlogits * t.at("cls.W").transpose();
    dz = dpooled.replicate(n, 1) / static_cast<double>(n);
  }
  Matrix dx = LayerNormBackward(dz, cache.lnf, t.at("ln_f.gain"), g.at("ln_f.gain"),
                                g.at("ln_f.bias"));

  if (query_signal != nullptr) query_signal->assign(cfg.layers, Matrix());
  for (std::size_t li = cfg.layers; li-- > 0;) {
    const std::size_t l = li + 1;
    const LayerView w = ViewLayer(t, l);
    const LayerCache& lc = cache.layers[li];
    auto grad = [&](const char* leaf) -> Matrix& { return g.at(LayerPath(l, leaf)); };

    // FFN
    grad("ffn.W_2").noalias() += lc.act.transpose() * dx;
    grad("ffn.b_2").row(0) += dx.colwise().sum();
    Matrix dpre = (dx * w.w2.transpose()).cwiseProduct(lc.pre_act.unaryExpr(&GeluGrad));
    grad("ffn.W_1").noalias() += lc.m.transpose() * dpre;
    grad("ffn.b_1").row(0) += dpre.colwise().sum();
    const Matrix dm = dpre * w.w1.transpose();
    Matrix dmid = dx + LayerNormBackward(dm, lc.ln2, w.ln2_g, grad("ln2.gain"), grad("ln2.bias"));

    // Attention output projection
    grad("W_O").noalias() += lc.attn.transpose() * dmid;
    grad("b_O").row(0) += dmid.colwise().sum();
    const Matrix dattn = dmid * w.wo.transpose();

    Matrix dq = Matrix::Zero(n, lc.q.cols());
    Matrix dk = Matrix::Zero(n, lc.k.cols());
    Matrix dv = Matrix::Zero(n, lc.v.cols());
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      const Eigen::Index c0 = static_cast<Eigen::Index>(h) * dh;
      const Matrix& p = lc.probs[h];
      const Matrix dout = dattn.middleCols(c0, dh);
      dv.middleCols(c0, dh) = p.transpose() * dout;
      const Matrix dp = dout * lc.v.middleCols(c0, dh).transpose();
      Matrix ds = p.cwiseProduct(dp);
      const Vector row_dot = ds.rowwise().sum();
      ds -= p.cwiseProduct(row_dot.replicate(1, n));
      ds *= scale;
      dq.middleCols(c0, dh) = ds * lc.k.middleCols(c0, dh);
      dk.middleCols(c0, dh) = ds.transpose() * lc.q.middleCols(c0, dh);
    }
    grad("W_Q").noalias() += lc.a.transpose() * dq;
    grad("b_Q").row(0) += dq.colwise().sum();
    grad("W_K").noalias() += lc.a.transpose() * dk;
    grad("b_K").row(0) += dk.colwise().sum();
    grad("W_V").noalias() += lc.a.transpose() * dv;
    grad("b_V").row(0) += dv.colwise().sum();
    const Matrix da = dq * w.wq.transpose() + dk * w.wk.transpose() + dv * w.wv.transpose();
    dx = dmid + LayerNormBackward(da, lc.ln1, w.ln1_g, grad("ln1.gain"), grad("ln1.bias"));
    if (query_signal != nullptr) (*query_signal)[li] = std::move(dq);
  }

  Matrix& dtok = g.at("tok_emb");
  Matrix& dpos = g.at("pos_emb");
  for (Eigen::Index i = 0; i < n; ++i) {
    dtok.row(sample.ids[static_cast<std::size_t>(i)]) += dx.row(i);
    dpos.row(i) += dx.row(i);
  }
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!g.value(i).allFinite()) Fail(ErrorKind::kNumeric, "backward: non-finite gradient");
  }
  return out;
}

Vector NextTokenLogits(const ModelParams& params, const TokenSeq& prefix) {
  Require(!prefix.empty(), ErrorKind::kInvalidInput, "logits: empty prefix");
  IncrementalModel inc(params);
  const PrefixState state = inc.Start(prefix);
  return params.tensors.at("tok_emb") * state.final_hidden;
}

double LmPriorScore(const ModelParams& params, const TokenSeq& prefix, TokenId candidate) {
  Require(candidate >= 0 && static_cast<std::size_t>(candidate) < params.config.vocab_size,
          ErrorKind::kInvalidInput, "lm prior: candidate id out of range");
  if (prefix.empty()) return 0.0;
  IncrementalModel inc(params);
  const PrefixState state = inc.Start(prefix);
  return params.tensors.at("tok_emb").row(candidate).dot(state.final_hidden.transpose());
}

Matrix HeadSlice(const GradientBundle& g, const ModelConfig& config, std::size_t layer,
                 ProjRole role, std::size_t head) {
  Require(layer >= 1 && layer <= config.layers, ErrorKind::kInvalidInput,
          "head_slice: layer out of range");
  Require(head < config.heads, ErrorKind::kInvalidInput, "head_slice: head out of range");
  const Matrix& full = g.grads.at(ProjectionPath(layer, role));
  const auto dh = static_cast<Eigen::Index>(config.head_dim());
  return full.middleCols(static_cast<Eigen::Index>(head) * dh, dh);
}

// ---------------------------------------------------------------------------
// IncrementalModel

IncrementalModel::IncrementalModel(const ModelParams& params) : params_(params) {
  const TensorMap& t = params.tensors;
  for (std::size_t l = 1; l <= params.config.layers; ++l) {
    auto p = [&](const char* leaf) { return &t.at(LayerPath(l, leaf)); };
    layers_.push_back(LayerRefs{p("ln1.gain"), p("ln1.bias"), p("W_Q"), p("b_Q"), p("W_K"),
                                p("b_K"), p("W_V"), p("b_V"), p("W_O"), p("b_O"),
                                p("ln2.gain"), p("ln2.bias"), p("ffn.W_1"), p("ffn.b_1"),
                                p("ffn.W_2"), p("ffn.b_2")});
  }
  tok_emb_ = &t.at("tok_emb");
  pos_emb_ = &t.at("pos_emb");
  lnf_g_ = &t.at("ln_f.gain");
  lnf_b_ = &t.at("ln_f.bias");
}

Vector IncrementalModel::Step(const PrefixState& state, TokenId token, std::size_t upto,
                              std::vector<KvRow>* new_kv, Vector* next_query_input) const {
  const ModelConfig& cfg = params_.config;
  const std::size_t pos = state.tokens.size();
  Require(pos < cfg.max_pos, ErrorKind::kInvalidInput, "decode: sequence exceeds max positions");
  Require(token >= 0 && static_cast<std::size_t>(token) < cfg.vocab_size,
          ErrorKind::kInvalidInput, "decode: token id out of range");
  const auto dh = static_cast<Eigen::Index>(cfg.head_dim());
  const auto p = static_cast<Eigen::Index>(pos);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  RowVec x = tok_emb_->row(token) + pos_emb_->row(p);
  for (std::size_t l = 0; l < upto; ++l) {
    const LayerRefs& w = layers_[l];
    const RowVec a = LayerNormRow(x, *w.ln1_g, *w.ln1_b);
    const RowVec q = a * *w.wq + w.bq->row(0);
    const RowVec k = a * *w.wk + w.bk->row(0);
    const RowVec v = a * *w.wv + w.bv->row(0);
    const Matrix& kc = state.keys[l];
    const Matrix& vc = state.values[l];
    RowVec attn(x.size());
    RowVec scores(p + 1);
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      const Eigen::Index c0 = static_cast<Eigen::Index>(h) * dh;
      if (p > 0) {
        scores.head(p) = (kc.block(0, c0, p, dh) * q.segment(c0, dh).transpose()).transpose();
      }
      scores(p) = q.segment(c0, dh).dot(k.segment(c0, dh));
      scores *= scale;
      SoftmaxPrefix(scores, p + 1);
      RowVec o = scores(p) * v.segment(c0, dh);
      if (p > 0) o += scores.head(p) * vc.block(0, c0, p, dh);
      attn.segment(c0, dh) = o;
    }
    if (new_kv != nullptr) new_kv->push_back(KvRow{k, v});
    const RowVec mid = x + attn * *w.wo + w.bo->row(0);
    const RowVec m = LayerNormRow(mid, *w.ln2_g, *w.ln2_b);
    const RowVec act = (m * *w.w1 + w.b1->row(0)).unaryExpr(&Gelu);
    x = mid + act * *w.w2 + w.b2->row(0);
  }
  if (next_query_input != nullptr && upto < layers_.size()) {
    const LayerRefs& w = layers_[upto];
    *next_query_input = LayerNormRow(x, *w.ln1_g, *w.ln1_b).transpose();
  }
  return x.transpose();
}

PrefixState IncrementalModel::Start(const TokenSeq& prefix) const {
  const ModelConfig& cfg = params_.config;
  PrefixState state;
  const auto cap = static_cast<Eigen::Index>(cfg.max_pos);
  const auto d = static_cast<Eigen::Index>(cfg.hidden);
  state.keys.assign(cfg.layers, Matrix::Zero(cap, d));
  state.values.assign(cfg.layers, Matrix::Zero(cap, d));
  state.final_hidden = Vector::Zero(d);
  for (TokenId id : prefix) state = Extend(state, id);
  return state;
}

PrefixState IncrementalModel::Extend(const PrefixState& state, TokenId token) const {
  std::vector<KvRow> kv;
  const Vector x = Step(state, token, layers_.size(), &kv, nullptr);
  PrefixState next = state;
  const auto p = static_cast<Eigen::Index>(state.tokens.size());
  for (std::size_t l = 0; l < kv.size(); ++l) {
    next.keys[l].row(p) = kv[l].key;
    next.values[l].row(p) = kv[l].value;
  }
  next.tokens.push_back(token);
  next.final_hidden = LayerNormRow(x.transpose(), *lnf_g_, *lnf_b_).transpose();
  return next;
}

Vector IncrementalModel::QueryInputAt(const PrefixState& state, TokenId token,
                                      std::size_t layer) const {
  Require(layer >= 1 && layer <= layers_.size(), ErrorKind::kInvalidInput,
          "decode: layer out of range");
  Vector query_input;
  Step(state, token, layer - 1, nullptr, &query_input);
  return query_input;
}

Matrix IncrementalModel::QueryInputsAt(const PrefixState& state, const std::vector<TokenId>& tokens,
                                       std::size_t layer) const {
  Require(layer >= 1 && layer <= layers_.size(), ErrorKind::kInvalidInput,
          "decode: layer out of range");
  const ModelConfig& cfg = params_.config;
  const std::size_t pos = state.tokens.size();
  Require(pos < cfg.max_pos, ErrorKind::kInvalidInput, "decode: sequence exceeds max positions");
  const auto m = static_cast<Eigen::Index>(tokens.size());
  const auto d = static_cast<Eigen::Index>(cfg.hidden);
  const auto dh = static_cast<Eigen::Index>(cfg.head_dim());
  const auto p = static_cast<Eigen::Index>(pos);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Matrix x(m, d);
  for (Eigen::Index i = 0; i < m; ++i) {
    const TokenId t = tokens[static_cast<std::size_t>(i)];
    Require(t >= 0 && static_cast<std::size_t>(t) < cfg.vocab_size, ErrorKind::kInvalidInput,
            "decode: token id out of range");
    x.row(i) = tok_emb_->row(t) + pos_emb_->row(p);
  }
  auto layer_norm = [m](const Matrix& in, const Matrix& gain, const Matrix& bias) {
    Matrix out(in.rows(), in.cols());
    for (Eigen::Index i = 0; i < m; ++i) out.row(i) = LayerNormRow(in.row(i), gain, bias);
    return out;
  };
  for (std::size_t l = 0; l + 1 < layer; ++l) {
    const LayerRefs& w = layers_[l];
    const Matrix a = layer_norm(x, *w.ln1_g, *w.ln1_b);
    const Matrix q = (a * *w.wq).rowwise() + w.bq->row(0);
    const Matrix k = (a * *w.wk).rowwise() + w.bk->row(0);
    const Matrix v = (a * *w.wv).rowwise() + w.bv->row(0);
    Matrix attn(m, d);
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      const Eigen::Index c0 = static_cast<Eigen::Index>(h) * dh;
      Matrix scores(m, p + 1);
      if (p > 0) scores.leftCols(p) = q.middleCols(c0, dh) * state.keys[l].block(0, c0, p, dh).transpose();
      scores.col(p) = q.middleCols(c0, dh).cwiseProduct(k.middleCols(c0, dh)).rowwise().sum();
      scores *= scale;
      for (Eigen::Index i = 0; i < m; ++i) {
        RowVec row = scores.row(i);
        SoftmaxPrefix(row, p + 1);
        scores.row(i) = row;
      }
      Matrix o = scores.col(p).asDiagonal() * v.middleCols(c0, dh);
      if (p > 0) o += scores.leftCols(p) * state.values[l].block(0, c0, p, dh);
      attn.middleCols(c0, dh) = o;
    }
    const Matrix mid = x + ((attn * *w.wo).rowwise() + w.bo->row(0));
    const Matrix mn = layer_norm(mid, *w.ln2_g, *w.ln2_b);
    const Matrix act = ((mn * *w.w1).rowwise() + w.b1->row(0)).unaryExpr(&Gelu);
    x = mid + ((act * *w.w2).rowwise() + w.b2->row(0));
  }
  const LayerRefs& w = layers_[layer - 1];
  return layer_norm(x, *w.ln1_g, *w.ln1_b);
}

}  // namespace gradleak
