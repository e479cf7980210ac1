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

// Binary tensor files. Layout (all integers unsigned little-endian, all reals
// IEEE-754 binary64 little-endian):
//
//   magic    8 bytes  "GLCKPT01"
//   kind     u32      0 = model parameters, 1 = gradient bundle
//   config   u64 x 9  layers hidden heads ffn max_pos vocab classes label_mode seed
//            f64      init_std
//   count    u64      number of tensors
//   tensor   u32 name length, name bytes, u64 rows, u64 cols, rows*cols f64 row-major
//
// See docs/checkpoint_format.md.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "gradleak/federation.hpp"
#include "gradleak/model.hpp"

namespace gradleak {

inline constexpr char kCheckpointMagic[9] = "GLCKPT01";

enum class TensorFileKind : std::uint32_t { kParams = 0, kGradient = 1 };

std::string EncodeTensorFile(const ModelConfig& config, const TensorMap& tensors,
                             TensorFileKind kind);
// Raises kFormat on a malformed or truncated buffer.
void DecodeTensorFile(const std::string& bytes, ModelConfig* config, TensorMap* tensors,
                      TensorFileKind* kind);

void SaveCheckpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams LoadCheckpoint(const std::filesystem::path& path);

// Writes <stem>.bin (observed update, gradient kind) and <stem>.json
// (batch size, protocol, sigma, seed). Ground-truth samples are not written.
void SaveRoundFixture(const ModelParams& params, const FedRound& round,
                      const std::filesystem::path& stem);
GradientBundle LoadRoundFixture(const std::filesystem::path& stem, ModelConfig* config);

}  // namespace gradleak
