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

#include "gradleak/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "gradleak/error.hpp"

namespace gradleak {
namespace {

std::string Trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> SplitList(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = Trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
T ParseNumber(const std::string& key, const std::string& text) {
  T value{};
  const std::string t = Trim(text);
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) {
    Fail(ErrorKind::kConfig, "config: invalid value for " + key + ": '" + text + "'");
  }
  return value;
}

std::size_t ParseSize(const std::string& key, const std::string& text) {
  return ParseNumber<std::size_t>(key, text);
}
double ParseReal(const std::string& key, const std::string& text) {
  return ParseNumber<double>(key, text);
}
bool ParseBool(const std::string& key, const std::string& text) {
  const std::string t = Trim(text);
  if (t == "true" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "no") return false;
  Fail(ErrorKind::kConfig, "config: invalid boolean for " + key + ": '" + text + "'");
}

std::string FormatReal(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

template <typename T>
std::string FormatList(const std::vector<T>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_floating_point_v<T>) {
      out += FormatReal(values[i]);
    } else {
      out += std::to_string(values[i]);
    }
  }
  return out;
}

const char* ToString(HeadRanking r) { return r == HeadRanking::kFrobenius ? "frobenius" : "stable_rank"; }
HeadRanking ParseHeadRanking(const std::string& t) {
  if (t == "frobenius") return HeadRanking::kFrobenius;
  if (t == "stable_rank") return HeadRanking::kStableRank;
  Fail(ErrorKind::kConfig, "config: unknown head ranking: " + t);
}
const char* ToString(SparsityResponse r) { return r == SparsityResponse::kGradient ? "gradient" : "residual"; }
SparsityResponse ParseSparsityResponse(const std::string& t) {
  if (t == "gradient") return SparsityResponse::kGradient;
  if (t == "residual") return SparsityResponse::kResidual;
  Fail(ErrorKind::kConfig, "config: unknown sparsity response: " + t);
}
const char* ToString(Stage2Config::GeoScale s) {
  switch (s) {
    case Stage2Config::GeoScale::kRaw:
      return "raw";
    case Stage2Config::GeoScale::kStandardized:
      return "standardized";
    case Stage2Config::GeoScale::kLogRatio:
      break;
  }
  return "log_ratio";
}
Stage2Config::GeoScale ParseGeoScale(const std::string& t) {
  if (t == "raw") return Stage2Config::GeoScale::kRaw;
  if (t == "standardized") return Stage2Config::GeoScale::kStandardized;
  if (t == "log_ratio") return Stage2Config::GeoScale::kLogRatio;
  Fail(ErrorKind::kConfig, "config: unknown geo scale: " + t);
}

std::filesystem::path ResolvePath(const std::filesystem::path& base, const std::string& text) {
  std::filesystem::path p(Trim(text));
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return (base / p).lexically_normal();
}

struct Key {
  std::string name;
  std::function<void(AttackConfig&, const std::string&, const std::filesystem::path&)> set;
  std::function<std::string(const AttackConfig&)> get;
};

#define GL_SIZE(NAME, FIELD)                                                                 \
  Key{NAME, [](AttackConfig& c, const std::string& v, const std::filesystem::path&) {        \
        c.FIELD = ParseSize(NAME, v);                                                        \
      },                                                                                     \
      [](const AttackConfig& c) { return std::to_string(c.FIELD); }}
#define GL_REAL(NAME, FIELD)                                                                 \
  Key{NAME, [](AttackConfig& c, const std::string& v, const std::filesystem::path&) {        \
        c.FIELD = ParseReal(NAME, v);                                                        \
      },                                                                                     \
      [](const AttackConfig& c) { return FormatReal(c.FIELD); }}
#define GL_BOOL(NAME, FIELD)                                                                 \
  Key{NAME, [](AttackConfig& c, const std::string& v, const std::filesystem::path&) {        \
        c.FIELD = ParseBool(NAME, v);                                                        \
      },                                                                                     \
      [](const AttackConfig& c) { return std::string(c.FIELD ? "true" : "false"); }}
#define GL_LOCKED_SIZE(NAME, FIELD, LOCK)                                                    \
  Key{NAME, [](AttackConfig& c, const std::string& v, const std::filesystem::path&) {        \
        c.locks.LOCK = Trim(v) != "auto";                                                    \
        if (c.locks.LOCK) c.FIELD = ParseSize(NAME, v);                                      \
      },                                                                                     \
      [](const AttackConfig& c) { return c.locks.LOCK ? std::to_string(c.FIELD) : "auto"; }}
#define GL_PATH(NAME, FIELD)                                                                 \
  Key{NAME, [](AttackConfig& c, const std::string& v, const std::filesystem::path& base) {   \
        c.FIELD = ResolvePath(base, v);                                                      \
      },                                                                                     \
      [](const AttackConfig& c) { return c.FIELD.generic_string(); }}
#define GL_ENUM(NAME, FIELD, PARSE)                                                          \
  Key{NAME, [](AttackConfig& c, const std::string& v, const std::filesystem::path&) {        \
        c.FIELD = PARSE(Trim(v));                                                            \
      },                                                                                     \
      [](const AttackConfig& c) { return std::string(ToString(c.FIELD)); }}

const std::vector<Key>& Registry() {
  static const std::vector<Key> keys = {
      GL_SIZE("model.layers", model.layers),
      GL_SIZE("model.hidden", model.hidden),
      GL_SIZE("model.heads", model.heads),
      GL_SIZE("model.ffn", model.ffn),
      GL_SIZE("model.max_pos", model.max_pos),
      GL_SIZE("model.vocab_size", model.vocab_size),
      GL_SIZE("model.classes", model.classes),
      GL_ENUM("model.label_mode", model.label_mode, ParseLabelMode),
      Key{"model.seed",
          [](AttackConfig& c, const std::string& v, const std::filesystem::path&) {
            c.model.seed = ParseNumber<std::uint64_t>("model.seed", v);
          },
          [](const AttackConfig& c) { return std::to_string(c.model.seed); }},
      GL_REAL("model.init_std", model.init_std),
      GL_PATH("model.checkpoint", checkpoint),
      GL_PATH("data.corpus", data.corpus),
      GL_PATH("data.vocab", data.vocab),
      GL_SIZE("data.max_len", data.max_len),
      GL_ENUM("federation.protocol", protocol, ParseProtocol),
      GL_REAL("federation.lr", fedavg_lr),
      GL_SIZE("federation.mini_batch", fedavg_mini_batch),
      GL_REAL("stage1.lambda_sub", stage1.lambda_sub),
      GL_REAL("stage1.lambda_cons", stage1.lambda_cons),
      GL_REAL("stage1.lambda_sparse", stage1.lambda_sparse),
      GL_LOCKED_SIZE("stage1.pool_size", stage1.pool_size, pool_size),
      GL_LOCKED_SIZE("stage1.active_heads", stage1.active_heads, active_heads),
      GL_LOCKED_SIZE("stage1.sparsity_heads", stage1.sparsity_heads, sparsity_heads),
      GL_REAL("stage1.tau_scale", stage1.tau_scale),
      GL_REAL("stage1.rel_tol", stage1.rel_tol),
      GL_ENUM("stage1.head_ranking", stage1.head_ranking, ParseHeadRanking),
      GL_ENUM("stage1.sparsity_response", stage1.sparsity_response, ParseSparsityResponse),
      GL_LOCKED_SIZE("stage2.beam_width", stage2.beam_width, beam_width),
      GL_LOCKED_SIZE("stage2.groups", stage2.groups, groups),
      GL_REAL("stage2.beta_lm", stage2.beta_lm),
      GL_REAL("stage2.lambda_div", stage2.lambda_div),
      GL_REAL("stage2.lambda_ng", stage2.lambda_ng),
      GL_SIZE("stage2.ngram_n", stage2.ngram_n),
      GL_BOOL("stage2.length_normalize", stage2.length_normalize),
      GL_REAL("stage2.tau_pos", stage2.tau_pos),
      GL_REAL("stage2.keep_rel", stage2.keep_rel),
      GL_SIZE("stage2.fallback_size", stage2.fallback_size),
      Key{"stage2.candidate_lengths",
          [](AttackConfig& c, const std::string& v, const std::filesystem::path&) {
            c.stage2.candidate_lengths.clear();
            const std::string t = Trim(v);
            if (t == "auto") return;
            for (const std::string& item : SplitList(t)) {
              c.stage2.candidate_lengths.push_back(ParseSize("stage2.candidate_lengths", item));
            }
          },
          [](const AttackConfig& c) {
            return c.stage2.candidate_lengths.empty() ? std::string("auto")
                                                      : FormatList(c.stage2.candidate_lengths);
          }},
      GL_SIZE("stage2.max_lengths", stage2.max_lengths),
      GL_REAL("stage2.length_rel", stage2.length_rel),
      GL_REAL("stage2.end_rel", stage2.end_rel),
      GL_ENUM("stage2.geo_scale", stage2.geo_scale, ParseGeoScale),
      GL_REAL("stage2.geo_floor", stage2.geo_floor),
      GL_REAL("stage2.zero_rel", stage2.zero_rel),
      GL_REAL("stage2.rel_tol", stage2.rel_tol),
      GL_REAL("stage3.ridge_lambda", stage3.ridge_lambda),
      GL_REAL("stage3.eps_scale", stage3.eps_scale),
      GL_REAL("stage3.tau_cluster", stage3.tau_cluster),
      Key{"stage3.surrogate_class",
          [](AttackConfig& c, const std::string& v, const std::filesystem::path&) {
            c.stage3.surrogate_class = ParseNumber<int>("stage3.surrogate_class", v);
          },
          [](const AttackConfig& c) { return std::to_string(c.stage3.surrogate_class); }},
      GL_ENUM("stage3.atom_params", stage3.atom_params, ParseAtomParams),
      GL_REAL("stage3.stagnation_tol", stage3.stagnation_tol),
      GL_SIZE("stage3.refine_passes", stage3.refine_passes),
      GL_SIZE("stage3.refine_pool", stage3.refine_pool),
      GL_SIZE("stage3.max_atoms", stage3.max_atoms),
      GL_SIZE("baseline.budget", baseline.budget),
      GL_REAL("baseline.member_rel", baseline.member_rel),
      GL_BOOL("schedule.scale_pool", scaling.enabled),
      GL_REAL("schedule.reference_vocab", scaling.reference_vocab),
      GL_REAL("schedule.reference_len", scaling.reference_len),
      Key{"sweep.batch_sizes",
          [](AttackConfig& c, const std::string& v, const std::filesystem::path&) {
            c.sweep.batch_sizes.clear();
            for (const std::string& item : SplitList(v)) {
              c.sweep.batch_sizes.push_back(ParseSize("sweep.batch_sizes", item));
            }
          },
          [](const AttackConfig& c) { return FormatList(c.sweep.batch_sizes); }},
      Key{"sweep.sigmas",
          [](AttackConfig& c, const std::string& v, const std::filesystem::path&) {
            c.sweep.sigmas.clear();
            for (const std::string& item : SplitList(v)) {
              c.sweep.sigmas.push_back(ParseReal("sweep.sigmas", item));
            }
          },
          [](const AttackConfig& c) { return FormatList(c.sweep.sigmas); }},
      Key{"sweep.local_epochs",
          [](AttackConfig& c, const std::string& v, const std::filesystem::path&) {
            c.sweep.local_epochs.clear();
            for (const std::string& item : SplitList(v)) {
              c.sweep.local_epochs.push_back(ParseSize("sweep.local_epochs", item));
            }
          },
          [](const AttackConfig& c) { return FormatList(c.sweep.local_epochs); }},
      GL_SIZE("sweep.rounds", sweep.rounds),
      GL_BOOL("sweep.baseline", sweep.baseline),
      Key{"run.seed",
          [](AttackConfig& c, const std::string& v, const std::filesystem::path&) {
            c.seed = ParseNumber<std::uint64_t>("run.seed", v);
          },
          [](const AttackConfig& c) { return std::to_string(c.seed); }},
      GL_SIZE("run.threads", threads),
      GL_PATH("run.out_dir", out_dir),
  };
  return keys;
}

#undef GL_SIZE
#undef GL_REAL
#undef GL_BOOL
#undef GL_LOCKED_SIZE
#undef GL_PATH
#undef GL_ENUM

}  // namespace

void AttackConfig::Validate() const {
  model.Validate();
  Require(data.max_len >= 1 && data.max_len + 1 <= model.max_pos, ErrorKind::kConfig,
          "config: data.max_len must lie in [1, model.max_pos - 1]");
  Require(!data.corpus.empty(), ErrorKind::kConfig, "config: data.corpus is required");
  Require(!data.vocab.empty(), ErrorKind::kConfig, "config: data.vocab is required");
  Require(std::filesystem::is_regular_file(data.corpus), ErrorKind::kConfig,
          "config: corpus not found: " + data.corpus.string());
  Require(std::filesystem::is_regular_file(data.vocab), ErrorKind::kConfig,
          "config: vocab not found: " + data.vocab.string());
  if (!checkpoint.empty()) {
    Require(std::filesystem::is_regular_file(checkpoint), ErrorKind::kConfig,
            "config: checkpoint not found: " + checkpoint.string());
  }
  Require(fedavg_lr > 0, ErrorKind::kConfig, "config: federation.lr must be positive");
  Require(!sweep.batch_sizes.empty(), ErrorKind::kConfig, "config: sweep.batch_sizes is empty");
  Require(!sweep.sigmas.empty(), ErrorKind::kConfig, "config: sweep.sigmas is empty");
  Require(!sweep.local_epochs.empty(), ErrorKind::kConfig, "config: sweep.local_epochs is empty");
  Require(sweep.rounds >= 1, ErrorKind::kConfig, "config: sweep.rounds must be >= 1");
  for (std::size_t b : sweep.batch_sizes) {
    Require(b >= 1, ErrorKind::kConfig, "config: batch sizes must be >= 1");
    Require(fedavg_mini_batch <= b, ErrorKind::kConfig,
            "config: federation.mini_batch exceeds a batch size");
    const AttackSettings s = ResolveFor(b);
    s.stage1.Validate(model, data.max_len);
    s.stage2.Validate();
    s.stage3.Validate(model);
  }
  for (double s : sweep.sigmas) Require(s >= 0, ErrorKind::kConfig, "config: sigmas must be >= 0");
  for (std::size_t e : sweep.local_epochs) {
    Require(e >= 1, ErrorKind::kConfig, "config: local_epochs must be >= 1");
  }
  baseline.Validate();
}

AttackSettings AttackConfig::ResolveFor(std::size_t batch_size) const {
  AttackSettings s;
  s.stage1 = stage1;
  s.stage2 = stage2;
  s.stage3 = stage3;
  s.max_len = data.max_len;
  ApplySchedule(batch_size, model, data.max_len, scaling, locks, s.stage1, s.stage2);
  s.stage1.threads = 1;
  s.stage2.threads = 1;
  s.stage3.threads = 1;
  return s;
}

ProtocolSpec AttackConfig::ProtocolFor(std::size_t batch_size, double sigma,
                                       std::size_t epochs) const {
  ProtocolSpec p;
  p.protocol = protocol;
  p.noise_sigma = sigma;
  p.fedavg.local_epochs = epochs;
  p.fedavg.lr = fedavg_lr;
  p.fedavg.mini_batch = fedavg_mini_batch == 0 ? batch_size : fedavg_mini_batch;
  return p;
}

AttackConfig ParseConfig(const std::string& text, const std::filesystem::path& base_dir) {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    Fail(ErrorKind::kConfig, std::string("config: ") + e.what());
  }
  std::map<std::string, const Key*> index;
  std::set<std::string> sections;
  for (const Key& k : Registry()) {
    index.emplace(k.name, &k);
    sections.insert(k.name.substr(0, k.name.find('.')));
  }

  AttackConfig config;
  for (const auto& [section, body] : tree) {
    Require(body.data().empty() && sections.contains(section), ErrorKind::kConfig,
            "config: unknown section or key outside a section: " + section);
    for (const auto& [key, value] : body) {
      const std::string name = section + "." + key;
      auto it = index.find(name);
      Require(it != index.end(), ErrorKind::kConfig, "config: unknown key " + name);
      it->second->set(config, value.data(), base_dir);
    }
  }
  return config;
}

AttackConfig LoadConfig(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  Require(static_cast<bool>(in), ErrorKind::kConfig, "config: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ParseConfig(ss.str(), path.parent_path());
}

void ApplyEnvOverrides(AttackConfig& config) {
  if (const char* out = std::getenv("GRADLEAK_OUT"); out && *out) config.out_dir = out;
  if (const char* t = std::getenv("GRADLEAK_THREADS"); t && *t) {
    config.threads = ParseSize("GRADLEAK_THREADS", t);
  }
}

std::vector<std::pair<std::string, std::string>> ConfigSnapshot(const AttackConfig& config) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const Key& k : Registry()) out.emplace_back(k.name, k.get(config));
  return out;
}

std::vector<std::string> ConfigKeys() {
  std::vector<std::string> out;
  for (const Key& k : Registry()) out.push_back(k.name);
  return out;
}

}  // namespace gradleak
