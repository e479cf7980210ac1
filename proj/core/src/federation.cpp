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

#include "gradleak/federation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "gradleak/error.hpp"

namespace gradleak {
namespace {

bool ValidUtf8(const std::string& s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t extra = 0;
    std::uint32_t cp = 0;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      extra = 1;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      extra = 2;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      extra = 3;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + extra >= s.size()) return false;
    for (std::size_t k = 1; k <= extra; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    static constexpr std::uint32_t kMin[] = {0, 0x80, 0x800, 0x10000};
    if (cp < kMin[extra] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return false;
    i += extra + 1;
  }
  return true;
}

// Canonical order of a batch so that summation is independent of the order
// the client happened to hold its samples in.
std::vector<std::size_t> CanonicalOrder(const std::vector<Sample>& batch) {
  std::vector<std::size_t> order(batch.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const Sample& x = batch[a];
    const Sample& y = batch[b];
    if (x.ids != y.ids) return x.ids < y.ids;
    if (x.targets != y.targets) return x.targets < y.targets;
    return x.label < y.label;
  });
  return order;
}

}  // namespace

Corpus LoadCorpus(const std::filesystem::path& path, const Tokenizer& tokenizer,
                  std::size_t max_len) {
  Require(max_len >= 1, ErrorKind::kInvalidInput, "corpus: max_len must be >= 1");
  std::ifstream in(path, std::ios::binary);
  Require(in.good(), ErrorKind::kIo, "corpus: cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();
  Require(!text.empty(), ErrorKind::kInvalidInput, "corpus: empty file " + path.string());
  Require(ValidUtf8(text), ErrorKind::kFormat, "corpus: invalid UTF-8 in " + path.string());

  Corpus corpus;
  corpus.source = path;
  corpus.tokenizer_fingerprint = tokenizer.Fingerprint();
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    TokenSeq ids = tokenizer.Encode(line);
    if (ids.empty()) continue;
    if (ids.size() > max_len) ids.resize(max_len);
    corpus.lines.push_back(line);
    corpus.tokens.push_back(std::move(ids));
  }
  Require(!corpus.tokens.empty(), ErrorKind::kInvalidInput,
          "corpus: no non-blank lines in " + path.string());
  return corpus;
}

const char* ToString(Protocol protocol) {
  return protocol == Protocol::kFedSgd ? "fedsgd" : "fedavg";
}

Protocol ParseProtocol(const std::string& text) {
  if (text == "fedsgd") return Protocol::kFedSgd;
  if (text == "fedavg") return Protocol::kFedAvg;
  Fail(ErrorKind::kConfig, "unknown protocol: " + text);
}

GradientBundle AggregateFedSgd(const ModelParams& params, const std::vector<Sample>& batch) {
  Require(!batch.empty(), ErrorKind::kInvalidInput, "fedsgd: empty batch");
  GradientBundle total;
  bool first = true;
  for (std::size_t j : CanonicalOrder(batch)) {
    GradientBundle g = Backward(params, batch[j]);
    if (first) {
      total = std::move(g);
      first = false;
    } else {
      total.grads += g.grads;
    }
  }
  if (batch.size() > 1) total.grads *= 1.0 / static_cast<double>(batch.size());
  total.meta.batch_size = batch.size();
  total.meta.label_mode = params.config.label_mode;
  total.meta.protocol = ToString(Protocol::kFedSgd);
  return total;
}

GradientBundle FedAvgUpdate(const ModelParams& params, const std::vector<Sample>& batch,
                            const FedAvgSpec& spec, std::uint64_t seed) {
  Require(!batch.empty(), ErrorKind::kInvalidInput, "fedavg: empty batch");
  Require(spec.lr > 0.0, ErrorKind::kInvalidInput, "fedavg: learning rate must be positive");
  Require(spec.local_epochs >= 1, ErrorKind::kInvalidInput, "fedavg: local_epochs must be >= 1");
  Require(spec.mini_batch >= 1 && spec.mini_batch <= batch.size(), ErrorKind::kInvalidInput,
          "fedavg: mini_batch must be in [1, B]");

  ModelParams local = params;
  TensorMap pseudo = params.tensors.ZerosLike();
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(batch.size());
  for (std::size_t epoch = 0; epoch < spec.local_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += spec.mini_batch) {
      const std::size_t stop = std::min(order.size(), start + spec.mini_batch);
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(stop));
      std::sort(idx.begin(), idx.end());
      std::vector<Sample> mini;
      mini.reserve(idx.size());
      for (std::size_t i : idx) mini.push_back(batch[i]);
      const GradientBundle step = AggregateFedSgd(local, mini);
      local.tensors.AddScaled(step.grads, -spec.lr);
      pseudo += step.grads;
    }
  }
  GradientBundle out;
  out.grads = std::move(pseudo);
  out.meta.batch_size = batch.size();
  out.meta.label_mode = params.config.label_mode;
  out.meta.protocol = ToString(Protocol::kFedAvg);
  return out;
}

GradientBundle AddGaussianNoise(const GradientBundle& g, double sigma, std::uint64_t seed) {
  Require(sigma >= 0.0 && std::isfinite(sigma), ErrorKind::kInvalidInput,
          "noise: sigma must be finite and non-negative");
  GradientBundle out = g;
  if (sigma == 0.0) return out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  for (std::size_t i = 0; i < out.grads.size(); ++i) {
    Matrix& m = out.grads.value(i);
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] += noise(rng);
  }
  return out;
}

Sample MakeVictimSample(const ModelConfig& config, const Tokenizer& tokenizer,
                        const TokenSeq& words) {
  if (config.label_mode == LabelMode::kNextToken) return MakeLmSample(tokenizer, words);
  std::uint64_t h = 1469598103934665603ull;
  for (TokenId id : words) {
    h ^= static_cast<std::uint64_t>(id);
    h *= 1099511628211ull;
  }
  return MakeClassificationSample(tokenizer, words, static_cast<int>(h % config.classes));
}

FedRound SimulateRound(const ModelParams& params, const Tokenizer& tokenizer,
                       const Corpus& corpus, std::size_t batch_size,
                       const ProtocolSpec& protocol, std::uint64_t seed) {
  Require(batch_size >= 1, ErrorKind::kInvalidInput, "round: batch size must be >= 1");
  Require(batch_size <= corpus.tokens.size(), ErrorKind::kInvalidInput,
          "round: batch size exceeds corpus size");
  Require(corpus.tokenizer_fingerprint == tokenizer.Fingerprint(), ErrorKind::kInvalidInput,
          "round: corpus was tokenized with a different vocabulary");

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> pick(corpus.tokens.size());
  std::iota(pick.begin(), pick.end(), 0);
  for (std::size_t i = 0; i < batch_size; ++i) {
    std::uniform_int_distribution<std::size_t> dist(i, pick.size() - 1);
    std::swap(pick[i], pick[dist(rng)]);
  }
  pick.resize(batch_size);

  FedRound round;
  round.seed = seed;
  round.protocol = protocol;
  round.corpus_indices = pick;
  for (std::size_t i : pick) {
    round.batch.push_back(MakeVictimSample(params.config, tokenizer, corpus.tokens[i]));
  }
  if (protocol.protocol == Protocol::kFedSgd) {
    round.observed = AggregateFedSgd(params, round.batch);
  } else {
    round.observed = FedAvgUpdate(params, round.batch, protocol.fedavg, seed ^ 0x5eedfedaull);
  }
  if (protocol.noise_sigma > 0.0) {
    round.observed = AddGaussianNoise(round.observed, protocol.noise_sigma, seed ^ 0x0015e5eedull);
  }
  return round;
}

}  // namespace gradleak
