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

#include "gradleak/tokenizer.hpp"

#include <fstream>
#include <sstream>

#include "gradleak/error.hpp"

namespace gradleak {

Tokenizer::Tokenizer(std::vector<std::string> vocab) : vocab_(std::move(vocab)) {
  for (std::size_t i = 0; i < vocab_.size(); ++i) {
    Require(!vocab_[i].empty(), ErrorKind::kFormat, "tokenizer: empty vocabulary entry");
    Require(vocab_[i].find_first_of(" \t\r\n") == std::string::npos, ErrorKind::kFormat,
            "tokenizer: vocabulary entry contains whitespace: " + vocab_[i]);
    auto [it, inserted] = index_.emplace(vocab_[i], static_cast<TokenId>(i));
    Require(inserted, ErrorKind::kFormat, "tokenizer: duplicate vocabulary entry " + vocab_[i]);
  }
  auto special = [&](std::string_view name) {
    auto it = index_.find(std::string(name));
    Require(it != index_.end(), ErrorKind::kFormat,
            "tokenizer: vocabulary lacks " + std::string(name));
    return it->second;
  };
  pad_ = special(kPad);
  unk_ = special(kUnk);
  bos_ = special(kBos);
  eos_ = special(kEos);
}

Tokenizer Tokenizer::FromFile(const std::filesystem::path& path) {
  std::ifstream in(path);
  Require(in.good(), ErrorKind::kIo, "tokenizer: cannot open " + path.string());
  std::vector<std::string> vocab;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    vocab.push_back(line);
  }
  return Tokenizer(std::move(vocab));
}

TokenSeq Tokenizer::Encode(std::string_view text) const {
  TokenSeq ids;
  std::istringstream words{std::string(text)};
  std::string word;
  while (words >> word) {
    auto it = index_.find(word);
    ids.push_back(it == index_.end() ? unk_ : it->second);
  }
  return ids;
}

const std::string& Tokenizer::Unit(TokenId id) const {
  Require(id >= 0 && static_cast<std::size_t>(id) < vocab_.size(), ErrorKind::kInvalidInput,
          "tokenizer: id out of range");
  return vocab_[static_cast<std::size_t>(id)];
}

std::string Tokenizer::Decode(const TokenSeq& ids) const {
  std::string out;
  for (TokenId id : ids) {
    if (!out.empty()) out += ' ';
    out += Unit(id);
  }
  return out;
}

std::string Tokenizer::DecodeText(const TokenSeq& ids) const {
  std::string out;
  for (TokenId id : ids) {
    if (IsSpecial(id) && id != unk_) continue;
    if (!out.empty()) out += ' ';
    out += Unit(id);
  }
  return out;
}

std::uint64_t Tokenizer::Fingerprint() const {
  std::uint64_t h = 1469598103934665603ull;
  for (const std::string& w : vocab_) {
    for (unsigned char c : w) {
      h ^= c;
      h *= 1099511628211ull;
    }
    h ^= 0xff;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace gradleak
