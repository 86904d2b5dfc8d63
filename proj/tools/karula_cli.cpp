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


// Command-line front end. Talks to the library only through the C interface.

#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "karula/karula.h"

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "runs";
  bool check = false;
  int threads = 1;
  std::vector<std::string> sets;
};

struct TrainFlags {
  std::string strategy;
  std::string t;
  std::optional<int> rounds;
  std::optional<int> participation;
};

int report(karula_status status) {
  if (status != KARULA_OK) std::fprintf(stderr, "karula: %s\n", karula_last_error());
  // Argument errors come from bad input, which is a configuration problem
  // from the caller's point of view.
  return status == KARULA_ERR_ARGUMENT ? KARULA_ERR_CONFIG : static_cast<int>(status);
}

class Config {
 public:
  Config() = default;
  Config(const Config&) = delete;
  Config& operator=(const Config&) = delete;
  ~Config() { karula_config_free(handle_); }

  karula_status open(const std::string& path) {
    return path.empty() ? karula_config_default("default", &handle_) : karula_config_load(path.c_str(), &handle_);
  }
  karula_status set(const std::string& key, const std::string& value) {
    return karula_config_set(handle_, key.c_str(), value.c_str());
  }
  karula_config_t* get() const { return handle_; }

 private:
  karula_config_t* handle_ = nullptr;
};

karula_status apply_sets(Config& cfg, const std::vector<std::string>& sets) {
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) {
      std::fprintf(stderr, "karula: --set expects key=value, got '%s'\n", s.c_str());
      return KARULA_ERR_CONFIG;
    }
    if (const karula_status st = cfg.set(s.substr(0, eq), s.substr(eq + 1)); st != KARULA_OK) return st;
  }
  return KARULA_OK;
}

karula_status apply_train_flags(Config& cfg, const TrainFlags& f) {
  karula_status st = KARULA_OK;
  if (!f.strategy.empty()) st = cfg.set("strategies", "[\"" + f.strategy + "\"]");
  if (st == KARULA_OK && !f.t.empty()) st = cfg.set("t", f.t);
  if (st == KARULA_OK && f.participation) st = cfg.set("participation", std::to_string(*f.participation));
  if (st == KARULA_OK && f.rounds) {
    const std::vector<std::string> targets =
        f.strategy.empty() ? std::vector<std::string>{"karula", "fedavg", "ifca", "local"}
                           : std::vector<std::string>{f.strategy};
    for (const auto& name : targets) {
      st = cfg.set(name + ".rounds", std::to_string(*f.rounds));
      if (st != KARULA_OK) break;
    }
  }
  return st;
}

int run_stage(const Globals& g, const std::string& stage, const TrainFlags* train) {
  Config cfg;
  karula_status st = cfg.open(g.config_path);
  if (st == KARULA_OK) st = apply_sets(cfg, g.sets);
  if (st == KARULA_OK && train) st = apply_train_flags(cfg, *train);
  if (st == KARULA_OK) st = karula_config_validate(cfg.get());
  if (st != KARULA_OK) return report(st);

  karula_run_options opts;
  karula_run_options_init(&opts);
  opts.out_root = g.out.c_str();
  opts.check = g.check ? 1 : 0;
  opts.threads = g.threads;
  if (g.seed) {
    opts.has_seed = 1;
    opts.seed = *g.seed;
  }
  return report(karula_run_stage(cfg.get(), stage.c_str(), &opts));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Karula: personalized federated learning with data-dependent constraints"};
  app.set_version_flag("--version", karula_version());
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--config", g.config_path, "JSON configuration file (defaults apply when omitted)")
      ->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "run only this repetition seed");
  app.add_option("--out", g.out, "output root; results go to <out>/<experiment>/<seed>/")
      ->capture_default_str();
  app.add_flag("--check", g.check, "exit with status 3 when a stage's checks fail");
  app.add_option("--threads", g.threads, "worker threads across repetitions")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app.add_option("--set", g.sets, "override a config key, e.g. --set karula.rounds=500")
      ->type_name("KEY=JSON");

  struct Simple {
    const char* name;
    const char* help;
  };
  const Simple simple[] = {
      {"gen-data", "generate per-client train/test data and the ground truth"},
      {"dissim", "compute client embeddings and the dissimilarity matrix"},
      {"cv", "choose the constraint threshold t by cross-validation"},
      {"check-bound", "evaluate the stationarity and model-distance bounds"},
      {"report", "compute metrics, heatmaps and the experiment summary"},
      {"run", "run every stage the configuration needs, in order"},
  };
  std::string chosen;
  for (const auto& s : simple) {
    app.add_subcommand(s.name, s.help)->callback([&chosen, name = s.name] { chosen = name; });
  }

  TrainFlags tf;
  CLI::App* train = app.add_subcommand("train", "train the configured strategies");
  train->add_option("--strategy", tf.strategy, "train only this strategy")
      ->check(CLI::IsMember({"karula", "fedavg", "ifca", "local"}));
  train->add_option("--t", tf.t, "constraint threshold, or 'cv' to use the cross-validated value");
  train->add_option("--rounds", tf.rounds, "communication rounds")->check(CLI::PositiveNumber);
  train->add_option("--participation", tf.participation, "clients sampled per round");
  train->callback([&chosen] { chosen = "train"; });

  std::string pt_input, pt_output;
  CLI::App* project = app.add_subcommand("project-test", "project a model stack read from JSON");
  project->add_option("input", pt_input, "request JSON {stack, dissimilarity, t, eta, tol, max_sweeps}")
      ->required()
      ->check(CLI::ExistingFile);
  project->add_option("-o,--output", pt_output, "write the result here instead of stdout");
  project->callback([&chosen] { chosen = "project-test"; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : KARULA_ERR_CONFIG;
  }

  if (chosen == "project-test")
    return report(karula_project_test(pt_input.c_str(), pt_output.empty() ? nullptr : pt_output.c_str()));
  return run_stage(g, chosen, chosen == "train" ? &tf : nullptr);
}
