/*
 * Copyright 2026 The Karula Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */


#ifndef KARULA_CORE_PIPELINE_HPP_
#define KARULA_CORE_PIPELINE_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

#include "core/config.hpp"

namespace karula::pipeline {

enum class Stage { gen_data, dissim, cv, train, check_bound, report, run };

std::string_view to_string(Stage s);
Stage parse_stage(std::string_view name);

// Process exit codes.
enum ExitCode : int { kOk = 0, kConfigError = 1, kRuntimeFailure = 2, kCheckFailure = 3 };

struct RunOptions {
  std::filesystem::path out_root = "runs";
  bool check = false;
  int threads = 1;
  // Restricts a stage to one repetition seed instead of every repetition.
  std::optional<std::uint64_t> only_seed;
};

struct Outcome {
  int code = kOk;
  std::string message;  // first error or failed check, empty on success
};

std::filesystem::path experiment_dir(const config::RunConfig& cfg, const RunOptions& opt);
std::filesystem::path seed_dir(const config::RunConfig& cfg, const RunOptions& opt,
                               std::uint64_t seed);

/// Runs one stage over the selected repetitions. Never throws; errors are
/// written to run.log with the stage name and mapped to an exit code.
Outcome run_stage(const config::RunConfig& cfg, Stage stage, const RunOptions& opt);

/// gen-data, dissim, cv, train, check-bound, report in order, skipping the
/// stages the configured strategies do not need.
Outcome run_pipeline(const config::RunConfig& cfg, const RunOptions& opt);

/// Projects a model stack given as JSON {stack, dissimilarity, t, eta, tol,
/// max_sweeps} and returns {point, sweeps, delta_hat, converged,
/// max_violation}. Throws ConfigError on malformed input.
nlohmann::json project_test(const nlohmann::json& input);

}  // namespace karula::pipeline

#endif  // KARULA_CORE_PIPELINE_HPP_
