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

// Hot paths of one attack round on the toy model.

#include <benchmark/benchmark.h>

#include <random>
#include <string>

#include "gradleak/federation.hpp"
#include "gradleak/rouge.hpp"
#include "gradleak/stage1_pool.hpp"
#include "gradleak/stage2_decode.hpp"
#include "gradleak/stage3_omp.hpp"

namespace gradleak {
namespace {

struct Fixture {
  Tokenizer tokenizer;
  Corpus corpus;
  ModelParams params;

  Fixture()
      : tokenizer(Tokenizer::FromFile(std::string(GRADLEAK_SOURCE_DIR) + "/data/vocab.txt")),
        corpus(LoadCorpus(std::string(GRADLEAK_SOURCE_DIR) + "/data/short_lines.txt", tokenizer, 10)),
        params(InitParams(Config())) {}

  static ModelConfig Config() {
    ModelConfig c;
    c.layers = 2;
    c.hidden = 32;
    c.heads = 4;
    c.ffn = 128;
    c.max_pos = 11;
    c.vocab_size = 256;
    c.seed = 7;
    return c;
  }

  FedRound Round(std::size_t batch) const {
    return SimulateRound(params, tokenizer, corpus, batch, ProtocolSpec{}, 1);
  }
};

const Fixture& Shared() {
  static const Fixture f;
  return f;
}

void BM_Backward(benchmark::State& state) {
  const Fixture& f = Shared();
  const Sample s = MakeLmSample(f.tokenizer, f.corpus.tokens[0]);
  for (auto _ : state) benchmark::DoNotOptimize(Backward(f.params, s));
}
BENCHMARK(BM_Backward);

void BM_InputSpan(benchmark::State& state) {
  const Fixture& f = Shared();
  const FedRound round = f.Round(static_cast<std::size_t>(state.range(0)));
  const Matrix& g = round.observed.grads.at("layer1.W_Q");
  for (auto _ : state) benchmark::DoNotOptimize(InputSpanProjector(g, kDefaultRankTol));
}
BENCHMARK(BM_InputSpan)->Arg(1)->Arg(4);

void BM_TokenPool(benchmark::State& state) {
  const Fixture& f = Shared();
  const FedRound round = f.Round(static_cast<std::size_t>(state.range(0)));
  Stage1Config cfg;
  cfg.pool_size = 40 * static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(BuildTokenPool(round.observed, f.tokenizer, f.params, cfg, 10));
  }
}
BENCHMARK(BM_TokenPool)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_Decoding(benchmark::State& state) {
  const Fixture& f = Shared();
  const auto batch = static_cast<std::size_t>(state.range(0));
  const FedRound round = f.Round(batch);
  Stage1Config s1;
  s1.pool_size = 40 * batch;
  const TokenPool pool = BuildTokenPool(round.observed, f.tokenizer, f.params, s1, 10);
  Stage2Config s2;
  s2.groups = batch;
  s2.beam_width = 4 * batch;
  for (auto _ : state) benchmark::DoNotOptimize(RunDecoding(pool, round.observed, f.params, s2));
}
BENCHMARK(BM_Decoding)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_OmpSelect(benchmark::State& state) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n01;
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<GradientAtom> atoms(n);
  for (std::size_t i = 0; i < n; ++i) {
    Vector v(20000);
    for (auto& x : v) x = n01(rng);
    atoms[i] = GradientAtom{i, v, v.norm()};
  }
  const Vector target = atoms[0].values + atoms[1].values + atoms[2].values + atoms[3].values;
  Stage3Config cfg;
  for (auto _ : state) benchmark::DoNotOptimize(OmpSelect(target, atoms, 4, cfg));
}
BENCHMARK(BM_OmpSelect)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_RougeL(benchmark::State& state) {
  std::mt19937_64 rng(5);
  TokenSeq a(40), b(40);
  for (auto& t : a) t = static_cast<TokenId>(rng() % 50);
  for (auto& t : b) t = static_cast<TokenId>(rng() % 50);
  for (auto _ : state) benchmark::DoNotOptimize(RougeL(a, b));
}
BENCHMARK(BM_RougeL);

}  // namespace
}  // namespace gradleak

BENCHMARK_MAIN();
