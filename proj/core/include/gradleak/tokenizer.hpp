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

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace gradleak {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

// Word-level tokenizer over a closed vocabulary. Whitespace separates units;
// anything outside the vocabulary maps to <unk>.
class Tokenizer {
 public:
  static constexpr std::string_view kPad = "<pad>";
  static constexpr std::string_view kUnk = "<unk>";
  static constexpr std::string_view kBos = "<bos>";
  static constexpr std::string_view kEos = "<eos>";

  explicit Tokenizer(std::vector<std::string> vocab);
  static Tokenizer FromFile(const std::filesystem::path& path);

  std::size_t vocab_size() const { return vocab_.size(); }
  const std::vector<std::string>& vocab() const { return vocab_; }

  TokenId pad_id() const { return pad_; }
  TokenId unk_id() const { return unk_; }
  TokenId bos_id() const { return bos_; }
  TokenId eos_id() const { return eos_; }
  bool IsSpecial(TokenId id) const { return id == pad_ || id == unk_ || id == bos_ || id == eos_; }

  // Words only; no <bos>.
  TokenSeq Encode(std::string_view text) const;
  std::string Decode(const TokenSeq& ids) const;
  // Decode skipping special tokens.
  std::string DecodeText(const TokenSeq& ids) const;

  const std::string& Unit(TokenId id) const;

  // FNV-1a over the vocabulary; recorded with corpora and reports.
  std::uint64_t Fingerprint() const;

 private:
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, TokenId> index_;
  TokenId pad_ = -1;
  TokenId unk_ = -1;
  TokenId bos_ = -1;
  TokenId eos_ = -1;
};

}  // namespace gradleak
