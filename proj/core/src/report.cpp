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

#include "gradleak/report.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "gradleak/error.hpp"
#include "json.hpp"

namespace gradleak {
namespace {

using nlohmann::ordered_json;

// Keys that only affect where and how fast a run executes.
bool IsRunLocal(const std::string& key) { return key == "run.out_dir" || key == "run.threads"; }

std::string Real(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

ordered_json Triple(const RougeTriple& t) {
  return {{"precision", 100.0 * t.precision}, {"recall", 100.0 * t.recall}, {"f", 100.0 * t.f}};
}

ordered_json Scores(const RoundScore& s) {
  return {{"rouge1", 100.0 * s.rouge1}, {"rouge2", 100.0 * s.rouge2}, {"rougeL", 100.0 * s.rougeL}};
}

ordered_json Agg(const Aggregate& a) {
  auto ms = [](const MeanStd& m) { return ordered_json{{"mean", 100.0 * m.mean}, {"std", 100.0 * m.std}}; };
  return {{"rouge1", ms(a.rouge1)}, {"rouge2", ms(a.rouge2)}, {"rougeL", ms(a.rougeL)}};
}

ordered_json Texts(const std::vector<TokenSeq>& seqs, const Tokenizer& tok) {
  ordered_json out = ordered_json::array();
  for (const TokenSeq& s : seqs) out.push_back(tok.DecodeText(s));
  return out;
}

ordered_json AlignmentJson(const Alignment& a) {
  ordered_json out = ordered_json::array();
  for (std::size_t r = 0; r < a.match.size(); ++r) {
    out.push_back({{"reference", r},
                   {"recovered", a.match[r]},
                   {"rouge1", Triple(a.scores[r].rouge1)},
                   {"rouge2", Triple(a.scores[r].rouge2)},
                   {"rougeL", Triple(a.scores[r].rougeL)}});
  }
  return out;
}

void Write(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  Require(static_cast<bool>(out), ErrorKind::kIo, "report: cannot write " + path.string());
  out << text;
  out.close();
  Require(static_cast<bool>(out), ErrorKind::kIo, "report: write failed for " + path.string());
}

}  // namespace

std::string ReportJson(const SweepReport& report, const Tokenizer& tokenizer) {
  ordered_json root;
  root["schema"] = kReportSchema;
  ordered_json config = ordered_json::object();
  for (const auto& [key, value] : report.config) {
    if (IsRunLocal(key)) continue;
    const auto dot = key.find('.');
    config[key.substr(0, dot)][key.substr(dot + 1)] = value;
  }
  root["config"] = config;

  ordered_json grid = ordered_json::array();
  for (const GridResult& g : report.grid) {
    ordered_json point;
    point["batch_size"] = g.point.batch_size;
    point["sigma"] = g.point.sigma;
    point["protocol"] = ToString(g.point.protocol);
    point["local_epochs"] = g.point.local_epochs;
    point["round_count"] = g.rounds.size();
    point["aggregate"] = Agg(g.attack);
    if (g.has_baseline) point["baseline_aggregate"] = Agg(g.baseline);
    ordered_json rounds = ordered_json::array();
    for (const RoundRecord& r : g.rounds) {
      ordered_json rec;
      rec["round"] = r.round;
      rec["seed"] = r.seed;
      rec["references"] = Texts(r.references, tokenizer);
      rec["recovered"] = Texts(r.recovered, tokenizer);
      rec["scores"] = Scores(r.score);
      rec["alignment"] = AlignmentJson(r.alignment);
      rec["pool_entries"] = r.pool_entries;
      rec["candidate_lengths"] = r.lengths;
      rec["candidates"] = r.candidates;
      rec["representatives"] = r.representatives;
      rec["degenerate_atoms"] = r.degenerate;
      rec["omp"] = {{"support", r.omp.support},
                    {"coefficients", r.omp.coefficients},
                    {"residual_norms", r.omp.residual_norms},
                    {"stop", ToString(r.omp.stop)},
                    {"swaps", r.omp.swaps}};
      if (r.has_baseline) {
        rec["baseline"] = {{"recovered", Texts(r.baseline.recovered, tokenizer)},
                           {"scores", Scores(r.baseline.score)},
                           {"nodes", r.baseline.nodes}};
      }
      rounds.push_back(std::move(rec));
    }
    point["rounds"] = std::move(rounds);
    grid.push_back(std::move(point));
  }
  root["grid"] = std::move(grid);
  return root.dump(2) + "\n";
}

std::string SummaryCsv(const SweepReport& report) {
  std::ostringstream out;
  out << "batch_size,sigma,protocol,local_epochs,rounds,"
         "rouge1_mean,rouge1_std,rouge2_mean,rouge2_std,rougeL_mean,rougeL_std,"
         "baseline_rougeL_mean,baseline_rougeL_std\n";
  for (const GridResult& g : report.grid) {
    out << g.point.batch_size << ',' << Real(g.point.sigma) << ',' << ToString(g.point.protocol)
        << ',' << g.point.local_epochs << ',' << g.rounds.size();
    for (const MeanStd* m : {&g.attack.rouge1, &g.attack.rouge2, &g.attack.rougeL}) {
      out << ',' << Real(100.0 * m->mean) << ',' << Real(100.0 * m->std);
    }
    if (g.has_baseline) {
      out << ',' << Real(100.0 * g.baseline.rougeL.mean) << ',' << Real(100.0 * g.baseline.rougeL.std);
    } else {
      out << ",,";
    }
    out << '\n';
  }
  return out.str();
}

std::string TimingsCsv(const SweepReport& report) {
  std::ostringstream out;
  out << "batch_size,sigma,local_epochs,round,stage1_s,stage2_s,stage3_s,baseline_s\n";
  for (const GridResult& g : report.grid) {
    for (const RoundRecord& r : g.rounds) {
      out << g.point.batch_size << ',' << Real(g.point.sigma) << ',' << g.point.local_epochs << ','
          << r.round << ',' << Real(r.timings.stage1) << ',' << Real(r.timings.stage2) << ','
          << Real(r.timings.stage3) << ',' << (r.has_baseline ? Real(r.baseline.seconds) : "")
          << '\n';
    }
  }
  return out.str();
}

void WriteReport(const SweepReport& report, const Tokenizer& tokenizer,
                 const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  Require(!ec, ErrorKind::kIo, "report: cannot create " + dir.string());
  Write(dir / "report.json", ReportJson(report, tokenizer));
  Write(dir / "summary.csv", SummaryCsv(report));
  Write(dir / "timings.csv", TimingsCsv(report));
}

}  // namespace gradleak
