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

// Report files. report.json holds the resolved config, every round and the
// aggregates; summary.csv has one row per grid point; timings.csv holds
// wall-clock stage times, kept apart so report.json is reproducible.
// Scores are written on a 0-100 scale.

#pragma once

#include <filesystem>
#include <string>

#include "gradleak/sweep.hpp"
#include "gradleak/tokenizer.hpp"

namespace gradleak {

inline constexpr const char* kReportSchema = "gradleak.report/1";

std::string ReportJson(const SweepReport& report, const Tokenizer& tokenizer);
std::string SummaryCsv(const SweepReport& report);
std::string TimingsCsv(const SweepReport& report);

// Writes report.json, summary.csv and timings.csv into `dir` (created if
// needed). Raises kIo on failure.
void WriteReport(const SweepReport& report, const Tokenizer& tokenizer,
                 const std::filesystem::path& dir);

}  // namespace gradleak
