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

#include "gradleak/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "gradleak/error.hpp"

namespace gradleak {
namespace {

class Writer {
 public:
  void Bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  void U32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void U64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void F64(double v) { U64(std::bit_cast<std::uint64_t>(v)); }
  std::string Take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}
  void Bytes(void* p, std::size_t n) {
    Need(n);
    std::memcpy(p, in_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t U32() { return static_cast<std::uint32_t>(Unsigned(4)); }
  std::uint64_t U64() { return Unsigned(8); }
  double F64() { return std::bit_cast<double>(U64()); }
  bool AtEnd() const { return pos_ == in_.size(); }

 private:
  void Need(std::size_t n) const {
    Require(in_.size() - pos_ >= n, ErrorKind::kFormat, "tensor file: truncated");
  }
  std::uint64_t Unsigned(int width) {
    Need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(width);
    return v;
  }

  const std::string& in_;
  std::size_t pos_ = 0;
};

std::string ReadFile(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  Require(in.good(), ErrorKind::kIo, "cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void WriteFile(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  Require(out.good(), ErrorKind::kIo, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  Require(out.good(), ErrorKind::kIo, "write failed: " + path.string());
}

}  // namespace

std::string EncodeTensorFile(const ModelConfig& config, const TensorMap& tensors,
                             TensorFileKind kind) {
  Writer w;
  w.Bytes(kCheckpointMagic, 8);
  w.U32(static_cast<std::uint32_t>(kind));
  w.U64(config.layers);
  w.U64(config.hidden);
  w.U64(config.heads);
  w.U64(config.ffn);
  w.U64(config.max_pos);
  w.U64(config.vocab_size);
  w.U64(config.classes);
  w.U64(static_cast<std::uint64_t>(config.label_mode));
  w.U64(config.seed);
  w.F64(config.init_std);
  w.U64(tensors.size());
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const std::string& name = tensors.paths()[i];
    const Matrix& m = tensors.value(i);
    w.U32(static_cast<std::uint32_t>(name.size()));
    w.Bytes(name.data(), name.size());
    w.U64(static_cast<std::uint64_t>(m.rows()));
    w.U64(static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index k = 0; k < m.size(); ++k) w.F64(m.data()[k]);
  }
  return w.Take();
}

void DecodeTensorFile(const std::string& bytes, ModelConfig* config, TensorMap* tensors,
                      TensorFileKind* kind) {
  Reader r(bytes);
  char magic[8];
  r.Bytes(magic, 8);
  Require(std::memcmp(magic, kCheckpointMagic, 8) == 0, ErrorKind::kFormat,
          "tensor file: bad magic");
  const std::uint32_t k = r.U32();
  Require(k <= 1, ErrorKind::kFormat, "tensor file: unknown kind");
  ModelConfig cfg;
  cfg.layers = r.U64();
  cfg.hidden = r.U64();
  cfg.heads = r.U64();
  cfg.ffn = r.U64();
  cfg.max_pos = r.U64();
  cfg.vocab_size = r.U64();
  cfg.classes = r.U64();
  const std::uint64_t mode = r.U64();
  Require(mode <= 1, ErrorKind::kFormat, "tensor file: unknown label mode");
  cfg.label_mode = static_cast<LabelMode>(mode);
  cfg.seed = r.U64();
  cfg.init_std = r.F64();
  const std::uint64_t count = r.U64();
  TensorMap out;
  for (std::uint64_t t = 0; t < count; ++t) {
    const std::uint32_t len = r.U32();
    Require(len <= 4096, ErrorKind::kFormat, "tensor file: name too long");
    std::string name(len, '\0');
    r.Bytes(name.data(), len);
    const std::uint64_t rows = r.U64();
    const std::uint64_t cols = r.U64();
    Require(rows <= (1u << 24) && cols <= (1u << 24) && rows * cols <= (1ull << 28),
            ErrorKind::kFormat, "tensor file: implausible shape for " + name);
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = r.F64();
    out.Add(std::move(name), std::move(m));
  }
  Require(r.AtEnd(), ErrorKind::kFormat, "tensor file: trailing bytes");
  if (config) *config = cfg;
  if (tensors) *tensors = std::move(out);
  if (kind) *kind = static_cast<TensorFileKind>(k);
}

void SaveCheckpoint(const ModelParams& params, const std::filesystem::path& path) {
  WriteFile(path, EncodeTensorFile(params.config, params.tensors, TensorFileKind::kParams));
}

ModelParams LoadCheckpoint(const std::filesystem::path& path) {
  ModelParams params;
  TensorFileKind kind{};
  DecodeTensorFile(ReadFile(path), &params.config, &params.tensors, &kind);
  Require(kind == TensorFileKind::kParams, ErrorKind::kFormat,
          "checkpoint: file holds a gradient bundle, not parameters");
  try {
    params.config.Validate();
  } catch (const Error& e) {
    Fail(ErrorKind::kFormat, std::string("checkpoint: ") + e.what());
  }
  const ModelParams reference = InitParams(params.config);
  Require(reference.tensors.SameShape(params.tensors), ErrorKind::kFormat,
          "checkpoint: tensors do not match the stored config");
  return params;
}

void SaveRoundFixture(const ModelParams& params, const FedRound& round,
                      const std::filesystem::path& stem) {
  std::filesystem::path bin = stem;
  bin += ".bin";
  std::filesystem::path meta = stem;
  meta += ".json";
  WriteFile(bin, EncodeTensorFile(params.config, round.observed.grads, TensorFileKind::kGradient));
  nlohmann::ordered_json j;
  j["schema"] = "gradleak.round/1";
  j["batch_size"] = round.observed.meta.batch_size;
  j["label_mode"] = ToString(round.observed.meta.label_mode);
  j["protocol"] = ToString(round.protocol.protocol);
  j["local_epochs"] = round.protocol.fedavg.local_epochs;
  j["lr"] = round.protocol.fedavg.lr;
  j["mini_batch"] = round.protocol.fedavg.mini_batch;
  j["noise_sigma"] = round.protocol.noise_sigma;
  j["seed"] = round.seed;
  WriteFile(meta, j.dump(2) + "\n");
}

GradientBundle LoadRoundFixture(const std::filesystem::path& stem, ModelConfig* config) {
  std::filesystem::path bin = stem;
  bin += ".bin";
  std::filesystem::path meta = stem;
  meta += ".json";
  GradientBundle g;
  TensorFileKind kind{};
  DecodeTensorFile(ReadFile(bin), config, &g.grads, &kind);
  Require(kind == TensorFileKind::kGradient, ErrorKind::kFormat,
          "round fixture: file holds parameters, not a gradient");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(ReadFile(meta));
    g.meta.batch_size = j.at("batch_size").get<std::size_t>();
    g.meta.label_mode = ParseLabelMode(j.at("label_mode").get<std::string>());
    g.meta.protocol = j.at("protocol").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    Fail(ErrorKind::kFormat, std::string("round fixture: ") + e.what());
  }
  return g;
}

}  // namespace gradleak
