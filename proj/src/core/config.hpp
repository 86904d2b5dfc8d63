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


#ifndef KARULA_CORE_CONFIG_HPP_
#define KARULA_CORE_CONFIG_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "core/clients.hpp"
#include "core/common.hpp"
#include "core/otcore.hpp"
#include "core/server.hpp"

namespace karula::config {

enum class DataSource { synthetic, files };

struct DataConfig {
  DataSource source = DataSource::synthetic;
  clients::SyntheticConfig synthetic;
  // Client CSV files for DataSource::files, resolved against the config
  // file's directory.
  std::vector<std::string> train_files;
  std::vector<std::string> test_files;
};

struct DissimConfig {
  Index n_ref = 50;
  double label_weight = 5.0;
  ot::EmbeddingOptions embedding;
};

struct CvConfig {
  std::vector<double> grid;
  int folds = 5;
  int rounds = 3000;  // Karula rounds per fold run
};

struct BoundsConfig {
  double box = 10.0;       // |theta|_inf bound used for L_X
  int oracle_trials = 200; // per client, for the oracle MSE estimate
};

struct RunConfig {
  std::string experiment;
  std::uint64_t seed = 0;
  int repetitions = 10;
  DataConfig data;
  double lambda = 1e-6;
  Index batch_size = 0;
  std::optional<Index> participation;
  DissimConfig dissim;
  std::vector<server::Strategy> strategies;
  std::optional<double> t;  // unset selects t by cross-validation
  CvConfig cv;
  std::map<server::Strategy, server::AlgoConfig> algo;
  BoundsConfig bounds;
};

/// The pipeline each stage hashes its inputs against.
enum class Scope { data, dissim, cv, train, report };

RunConfig default_config(const std::string& experiment);

/// Strict parse: unknown keys, wrong types and invariant violations raise
/// ConfigError. `base_dir` anchors relative data paths.
RunConfig parse_config(const std::string& text, const std::string& origin,
                       const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path);

/// Fully resolved configuration, including every default.
nlohmann::json to_json(const RunConfig& cfg);
RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});

void validate(const RunConfig& cfg);

/// Number of clients the configuration describes.
Index client_count(const RunConfig& cfg);

/// Seed of repetition r.
std::uint64_t repetition_seed(const RunConfig& cfg, int r);

/// 16 hex digits of FNV-1a over the canonical resolved JSON.
std::string config_hash(const RunConfig& cfg);

/// Hash of the configuration sections a stage's outputs depend on, for one
/// repetition seed. Train hashes also depend on the strategy.
std::string scope_hash(const RunConfig& cfg, Scope scope, std::uint64_t seed,
                       std::optional<server::Strategy> strategy = std::nullopt);

/// Sets a dotted key ("karula.rounds", "t", "data.noise_std") from a JSON
/// literal and revalidates.
void apply_override(RunConfig& cfg, const std::string& key, const std::string& json_value);

}  // namespace karula::config

#endif  // KARULA_CORE_CONFIG_HPP_
