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

// gradleak command-line tool: init-model, attack, sweep.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "gradleak/checkpoint.hpp"
#include "gradleak/config.hpp"
#include "gradleak/error.hpp"
#include "gradleak/federation.hpp"
#include "gradleak/report.hpp"
#include "gradleak/sweep.hpp"
#include "gradleak/tokenizer.hpp"

namespace {

using namespace gradleak;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitIo = 4;

int ExitCodeFor(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig:
    case ErrorKind::kInvalidInput:
    case ErrorKind::kFormat:
      return kExitConfig;
    case ErrorKind::kIo:
      return kExitIo;
    case ErrorKind::kNumeric:
    case ErrorKind::kSingularSystem:
    case ErrorKind::kInvalidState:
      return kExitNumeric;
  }
  return kExitNumeric;
}

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> threads;
  bool dry_run = false;
};

AttackConfig Resolve(const Options& opt) {
  AttackConfig cfg = LoadConfig(opt.config);
  ApplyEnvOverrides(cfg);
  if (opt.out) cfg.out_dir = *opt.out;
  if (opt.threads) cfg.threads = *opt.threads;
  return cfg;
}

int InitModel(const Options& opt) {
  AttackConfig cfg = Resolve(opt);
  if (opt.seed) cfg.model.seed = *opt.seed;
  cfg.model.Validate();
  if (opt.dry_run) {
    std::cout << "config ok\n";
    return kExitOk;
  }
  std::error_code ec;
  std::filesystem::create_directories(cfg.out_dir, ec);
  Require(!ec, ErrorKind::kIo, "cannot create " + cfg.out_dir.string());
  const std::filesystem::path path = cfg.out_dir / "model.ckpt";
  SaveCheckpoint(InitParams(cfg.model), path);
  std::cout << path.string() << "\n";
  return kExitOk;
}

int Run(const Options& opt, bool full_grid) {
  AttackConfig cfg = Resolve(opt);
  if (opt.seed) cfg.seed = *opt.seed;
  if (!full_grid) {
    cfg.sweep.batch_sizes.resize(std::min<std::size_t>(1, cfg.sweep.batch_sizes.size()));
    cfg.sweep.sigmas.resize(std::min<std::size_t>(1, cfg.sweep.sigmas.size()));
    cfg.sweep.local_epochs.resize(std::min<std::size_t>(1, cfg.sweep.local_epochs.size()));
  }
  cfg.Validate();
  const std::vector<GridPoint> grid = ExpandGrid(cfg);
  if (opt.dry_run) {
    std::cout << "config ok: " << grid.size() << " grid point(s), " << cfg.sweep.rounds
              << " round(s) each\n";
    return kExitOk;
  }
  const Tokenizer tokenizer = Tokenizer::FromFile(cfg.data.vocab);
  const Corpus corpus = LoadCorpus(cfg.data.corpus, tokenizer, cfg.data.max_len);
  const ModelParams params = LoadRunModel(cfg);
  const SweepReport report = RunSweep(cfg, params, tokenizer, corpus, grid);
  WriteReport(report, tokenizer, cfg.out_dir);
  for (const GridResult& g : report.grid) {
    std::printf("B=%zu sigma=%g %s E=%zu  ROUGE-1 %.2f  ROUGE-2 %.2f  ROUGE-L %.2f +- %.2f",
                g.point.batch_size, g.point.sigma, ToString(g.point.protocol), g.point.local_epochs,
                100.0 * g.attack.rouge1.mean, 100.0 * g.attack.rouge2.mean,
                100.0 * g.attack.rougeL.mean, 100.0 * g.attack.rougeL.std);
    if (g.has_baseline) std::printf("  baseline ROUGE-L %.2f", 100.0 * g.baseline.rougeL.mean);
    std::printf("\n");
  }
  std::cout << "report written to " << cfg.out_dir.string() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gradient leakage attack laboratory"};
  app.require_subcommand(1);
  Options opt;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config, "INI config file")->required();
    sub->add_option("--seed", opt.seed, "Override the seed");
    sub->add_option("--out", opt.out, "Output directory");
    sub->add_option("--threads", opt.threads, "Worker threads (0: all cores)");
    sub->add_flag("--dry-run", opt.dry_run, "Validate the config and exit");
  };
  CLI::App* init = app.add_subcommand("init-model", "Write a seeded model checkpoint");
  CLI::App* attack = app.add_subcommand("attack", "Attack the first grid point of the config");
  CLI::App* sweep = app.add_subcommand("sweep", "Attack every grid point of the config");
  for (CLI::App* sub : {init, attack, sweep}) add_common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (init->parsed()) return InitModel(opt);
    if (attack->parsed()) return Run(opt, false);
    return Run(opt, true);
  } catch (const Error& e) {
    std::cerr << "error (" << ToString(e.kind()) << "): " << e.what() << "\n";
    return ExitCodeFor(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  }
}
