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

// Run configuration: an INI file with one section per component. Every key
// is optional; unknown sections or keys are rejected. Relative paths are
// resolved against the directory of the config file.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "gradleak/attack.hpp"
#include "gradleak/baseline.hpp"
#include "gradleak/federation.hpp"
#include "gradleak/model.hpp"

namespace gradleak {

struct DataConfig {
  std::filesystem::path corpus;
  std::filesystem::path vocab;
  std::size_t max_len = 10;
};

struct SweepSpec {
  std::vector<std::size_t> batch_sizes{1};
  std::vector<double> sigmas{0.0};
  std::vector<std::size_t> local_epochs{1};  // used with the fedavg protocol
  std::size_t rounds = 20;
  bool baseline = false;
};

struct AttackConfig {
  ModelConfig model;
  std::filesystem::path checkpoint;  // empty: initialize from model.seed
  DataConfig data;
  Protocol protocol = Protocol::kFedSgd;
  double fedavg_lr = 1e-3;
  std::size_t fedavg_mini_batch = 0;  // 0: equal to the batch size
  Stage1Config stage1;
  Stage2Config stage2;
  Stage3Config stage3;
  BaselineConfig baseline;
  PoolScaling scaling;
  ScheduleLocks locks;
  SweepSpec sweep;
  std::filesystem::path out_dir = "out";
  std::uint64_t seed = 0;
  std::size_t threads = 0;  // 0: all available cores

  // Raises kConfig on any invalid value, including a missing corpus or vocab.
  void Validate() const;
  // Stage settings for one batch size with the schedule applied.
  AttackSettings ResolveFor(std::size_t batch_size) const;
  ProtocolSpec ProtocolFor(std::size_t batch_size, double sigma, std::size_t epochs) const;
};

AttackConfig ParseConfig(const std::string& text, const std::filesystem::path& base_dir = {});
AttackConfig LoadConfig(const std::filesystem::path& path);

// GRADLEAK_OUT and GRADLEAK_THREADS, when set, replace out_dir and threads.
void ApplyEnvOverrides(AttackConfig& config);

// Every key as "section.key" = value in schema order.
std::vector<std::pair<std::string, std::string>> ConfigSnapshot(const AttackConfig& config);

// Documented keys, "section.key", in schema order.
std::vector<std::string> ConfigKeys();

}  // namespace gradleak
