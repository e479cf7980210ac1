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

// Simulated honest-but-curious federation: corpus ingestion, client batch
// sampling, FedSGD aggregation, FedAvg local training and additive Gaussian
// noise on the shared update.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gradleak/model.hpp"
#include "gradleak/tokenizer.hpp"

namespace gradleak {

struct Corpus {
  std::vector<std::string> lines;
  std::vector<TokenSeq> tokens;  // words only, truncated to max_len
  std::filesystem::path source;
  std::uint64_t tokenizer_fingerprint = 0;
};

// One sample per non-empty line. Lines that encode to more than `max_len`
// words are truncated. Raises kInvalidInput on an empty file, kFormat on
// invalid UTF-8 and kIo when the file cannot be read.
Corpus LoadCorpus(const std::filesystem::path& path, const Tokenizer& tokenizer,
                  std::size_t max_len);

enum class Protocol { kFedSgd, kFedAvg };
const char* ToString(Protocol protocol);
Protocol ParseProtocol(const std::string& text);

struct FedAvgSpec {
  std::size_t local_epochs = 1;
  double lr = 1e-3;
  std::size_t mini_batch = 1;
};

struct ProtocolSpec {
  Protocol protocol = Protocol::kFedSgd;
  FedAvgSpec fedavg;
  double noise_sigma = 0.0;
};

// A client round. `batch` is ground truth and never reaches the attacker;
// only `observed` does.
struct FedRound {
  std::vector<Sample> batch;
  std::vector<std::size_t> corpus_indices;
  GradientBundle observed;
  ProtocolSpec protocol;
  std::uint64_t seed = 0;
};

// (1/B) sum_j Backward(params, batch_j).
GradientBundle AggregateFedSgd(const ModelParams& params, const std::vector<Sample>& batch);

// E epochs of mini-batch SGD from `params`; returns the pseudo-gradient
// (theta_0 - theta_T) / eta, accumulated as the sum of the applied step
// gradients so that a single full-batch step reproduces FedSGD bit for bit.
GradientBundle FedAvgUpdate(const ModelParams& params, const std::vector<Sample>& batch,
                            const FedAvgSpec& spec, std::uint64_t seed);

// g + N(0, sigma^2) per entry. sigma == 0 returns g unchanged.
GradientBundle AddGaussianNoise(const GradientBundle& g, double sigma, std::uint64_t seed);

// Draws B distinct corpus lines (without replacement when possible) and
// produces the observed update under `protocol`.
FedRound SimulateRound(const ModelParams& params, const Tokenizer& tokenizer,
                       const Corpus& corpus, std::size_t batch_size,
                       const ProtocolSpec& protocol, std::uint64_t seed);

// Builds the training sample the victim uses for a corpus line. In
// classification mode the label is derived deterministically from the line.
Sample MakeVictimSample(const ModelConfig& config, const Tokenizer& tokenizer,
                        const TokenSeq& words);

}  // namespace gradleak
