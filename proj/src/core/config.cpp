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


#include "core/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <set>

#include "core/experiments.hpp"
#include "core/io.hpp"
#include "core/rng.hpp"

namespace karula::config {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr server::Strategy kAllStrategies[] = {server::Strategy::local, server::Strategy::fedavg,
                                               server::Strategy::ifca, server::Strategy::karula};

// Reads one JSON object, rejecting keys it was not asked about.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + "must be an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) && !j_.at(key).is_null();
  }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  double number(const std::string& key, double fallback) {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_number()) throw ConfigError(name(key) + " must be a number");
    return v.get<double>();
  }

  std::int64_t integer(const std::string& key, std::int64_t fallback) {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (v.is_number_integer()) return v.get<std::int64_t>();
    if (v.is_number_float() && std::floor(v.get<double>()) == v.get<double>())
      return static_cast<std::int64_t>(v.get<double>());
    throw ConfigError(name(key) + " must be an integer");
  }

  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_boolean()) throw ConfigError(name(key) + " must be true or false");
    return v.get<bool>();
  }

  std::string string(const std::string& key, const std::string& fallback) {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_string()) throw ConfigError(name(key) + " must be a string");
    return v.get<std::string>();
  }

  std::vector<double> numbers(const std::string& key, std::vector<double> fallback) {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_array()) throw ConfigError(name(key) + " must be an array of numbers");
    std::vector<double> out;
    for (const auto& e : v) {
      if (!e.is_number()) throw ConfigError(name(key) + " must be an array of numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }

  std::vector<std::string> strings(const std::string& key) {
    if (!has(key)) return {};
    const json& v = j_.at(key);
    if (!v.is_array()) throw ConfigError(name(key) + " must be an array of strings");
    std::vector<std::string> out;
    for (const auto& e : v) {
      if (!e.is_string()) throw ConfigError(name(key) + " must be an array of strings");
      out.push_back(e.get<std::string>());
    }
    return out;
  }

  Section child(const std::string& key) {
    seen_.insert(key);
    static const json empty = json::object();
    return Section(j_.contains(key) ? j_.at(key) : empty, path_.empty() ? key : path_ + "." + key);
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError("unknown key '" + name(it.key()) + "'");
  }

  std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  std::string where() const { return path_.empty() ? "config " : "'" + path_ + "' "; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string hash_json(const json& j) { return hex64(fnv1a64(j.dump())); }

json algo_json(server::Strategy s, const server::AlgoConfig& a) {
  json j;
  j["rounds"] = a.rounds;
  j["eta"] = a.eta;
  switch (s) {
    case server::Strategy::karula:
      j["proj_tol"] = a.proj_tol;
      j["max_sweeps"] = a.max_sweeps;
      j["nu_scaling"] = a.nu_scaling == server::NuScaling::lemma ? "lemma" : "verbatim";
      j["diag_every"] = a.diag_every;
      j["warm_start"] = a.warm_start;
      break;
    case server::Strategy::fedavg:
      j["local_steps"] = a.local_steps;
      break;
    case server::Strategy::ifca:
      j["clusters"] = a.clusters;
      break;
    case server::Strategy::local:
      j["exact"] = a.local_exact;
      break;
  }
  return j;
}

void read_algo(Section sec, server::Strategy s, server::AlgoConfig& a) {
  a.rounds = static_cast<int>(sec.integer("rounds", a.rounds));
  a.eta = sec.number("eta", a.eta);
  switch (s) {
    case server::Strategy::karula: {
      a.proj_tol = sec.number("proj_tol", a.proj_tol);
      a.max_sweeps = static_cast<int>(sec.integer("max_sweeps", a.max_sweeps));
      const std::string nu = sec.string("nu_scaling", "lemma");
      if (nu == "lemma") {
        a.nu_scaling = server::NuScaling::lemma;
      } else if (nu == "verbatim") {
        a.nu_scaling = server::NuScaling::verbatim;
      } else {
        throw ConfigError(sec.name("nu_scaling") + " must be \"lemma\" or \"verbatim\"");
      }
      a.diag_every = static_cast<int>(sec.integer("diag_every", a.diag_every));
      a.warm_start = sec.boolean("warm_start", a.warm_start);
      break;
    }
    case server::Strategy::fedavg:
      a.local_steps = static_cast<int>(sec.integer("local_steps", a.local_steps));
      break;
    case server::Strategy::ifca:
      a.clusters = static_cast<int>(sec.integer("clusters", a.clusters));
      break;
    case server::Strategy::local:
      a.local_exact = sec.boolean("exact", a.local_exact);
      break;
  }
  sec.finish();
}

std::string describe_parse_error(const std::string& text, const std::string& origin,
                                 const json::parse_error& e) {
  std::size_t line = 1, column = 1;
  const std::size_t end = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
  for (std::size_t i = 0; i < end; ++i) {
    if (text[i] == '\n') {
      ++line;
      column = 1;
    } else {
      ++column;
    }
  }
  std::string detail = e.what();
  const auto colon = detail.find(": ", detail.find("parse error"));
  if (colon != std::string::npos) detail = detail.substr(colon + 2);
  return origin + ":" + std::to_string(line) + ":" + std::to_string(column) +
         ": JSON parse error: " + detail;
}

bool valid_experiment_name(const std::string& name) {
  if (name.empty() || name == "." || name == "..") return false;
  return std::all_of(name.begin(), name.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
  });
}

}  // namespace

RunConfig default_config(const std::string& experiment) {
  RunConfig cfg;
  cfg.experiment = experiment;
  cfg.strategies.assign(std::begin(kAllStrategies), std::end(kAllStrategies));
  cfg.cv.grid = experiments::default_t_grid();
  for (server::Strategy s : kAllStrategies) cfg.algo[s] = server::AlgoConfig{};
  cfg.algo[server::Strategy::karula].rounds = 20000;
  cfg.algo[server::Strategy::fedavg].rounds = 1000;
  cfg.algo[server::Strategy::ifca].rounds = 1000;
  cfg.algo[server::Strategy::local].rounds = 1000;
  return cfg;
}

RunConfig from_json(const json& j, const fs::path& base_dir) {
  Section root(j, "");
  if (!root.has("experiment") || !root.raw("experiment").is_string())
    throw ConfigError("missing required string key 'experiment'");
  RunConfig cfg = default_config(root.string("experiment", ""));

  if (root.has("seed")) {
    const json& v = root.raw("seed");
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0))
      throw ConfigError("seed must be an unsigned 64-bit integer");
    cfg.seed = v.get<std::uint64_t>();
  }
  cfg.repetitions = static_cast<int>(root.integer("repetitions", cfg.repetitions));
  cfg.lambda = root.number("lambda", cfg.lambda);
  cfg.batch_size = root.integer("batch_size", cfg.batch_size);
  if (root.has("participation")) cfg.participation = root.integer("participation", 0);

  {
    Section data = root.child("data");
    const std::string source = data.string("source", "synthetic");
    auto& syn = cfg.data.synthetic;
    if (source == "synthetic") {
      cfg.data.source = DataSource::synthetic;
      syn.n_clients = data.integer("n_clients", syn.n_clients);
      syn.d = data.integer("d", syn.d);
      syn.group_means = data.numbers("group_means", syn.group_means);
      syn.n_min = data.integer("n_min", syn.n_min);
      syn.n_max = data.integer("n_max", syn.n_max);
      syn.noise_std = data.number("noise_std", syn.noise_std);
      syn.theta_spread = data.number("theta_spread", syn.theta_spread);
      syn.feature_mean_spread = data.number("feature_mean_spread", syn.feature_mean_spread);
    } else if (source == "files") {
      cfg.data.source = DataSource::files;
      for (const auto& f : data.strings("train")) cfg.data.train_files.push_back((base_dir / f).string());
      for (const auto& f : data.strings("test")) cfg.data.test_files.push_back((base_dir / f).string());
    } else {
      throw ConfigError("data.source must be \"synthetic\" or \"files\"");
    }
    data.finish();
  }
  {
    Section dis = root.child("dissim");
    cfg.dissim.n_ref = dis.integer("n_ref", cfg.dissim.n_ref);
    cfg.dissim.label_weight = dis.number("label_weight", cfg.dissim.label_weight);
    const std::string solver = dis.string("solver", "exact");
    if (solver == "exact") {
      cfg.dissim.embedding.solver = ot::Solver::exact;
    } else if (solver == "sinkhorn") {
      cfg.dissim.embedding.solver = ot::Solver::sinkhorn;
    } else {
      throw ConfigError("dissim.solver must be \"exact\" or \"sinkhorn\"");
    }
    cfg.dissim.embedding.sinkhorn_reg = dis.number("sinkhorn_reg", cfg.dissim.embedding.sinkhorn_reg);
    cfg.dissim.embedding.sinkhorn_max_iter =
        static_cast<int>(dis.integer("sinkhorn_max_iter", cfg.dissim.embedding.sinkhorn_max_iter));
    dis.finish();
  }
  if (root.has("strategies")) {
    cfg.strategies.clear();
    for (const auto& name : root.strings("strategies")) {
      try {
        cfg.strategies.push_back(server::parse_strategy(name));
      } catch (const InvalidArgument& e) {
        throw ConfigError(std::string("strategies: ") + e.what());
      }
    }
  }
  if (root.has("t")) {
    const json& v = root.raw("t");
    if (v.is_string() && v.get<std::string>() == "cv") {
      cfg.t.reset();
    } else if (v.is_number()) {
      cfg.t = v.get<double>();
    } else {
      throw ConfigError("t must be a number or \"cv\"");
    }
  }
  {
    Section cv = root.child("cv");
    cfg.cv.grid = cv.numbers("grid", cfg.cv.grid);
    cfg.cv.folds = static_cast<int>(cv.integer("folds", cfg.cv.folds));
    cfg.cv.rounds = static_cast<int>(cv.integer("rounds", cfg.cv.rounds));
    cv.finish();
  }
  for (server::Strategy s : kAllStrategies)
    read_algo(root.child(std::string(server::to_string(s))), s, cfg.algo[s]);
  {
    Section b = root.child("bounds");
    cfg.bounds.box = b.number("box", cfg.bounds.box);
    cfg.bounds.oracle_trials = static_cast<int>(b.integer("oracle_trials", cfg.bounds.oracle_trials));
    b.finish();
  }
  root.finish();
  validate(cfg);
  return cfg;
}

json to_json(const RunConfig& cfg) {
  json j;
  j["experiment"] = cfg.experiment;
  j["seed"] = cfg.seed;
  j["repetitions"] = cfg.repetitions;
  json data;
  if (cfg.data.source == DataSource::synthetic) {
    const auto& s = cfg.data.synthetic;
    data["source"] = "synthetic";
    data["n_clients"] = s.n_clients;
    data["d"] = s.d;
    data["group_means"] = s.group_means;
    data["n_min"] = s.n_min;
    data["n_max"] = s.n_max;
    data["noise_std"] = s.noise_std;
    data["theta_spread"] = s.theta_spread;
    data["feature_mean_spread"] = s.feature_mean_spread;
  } else {
    data["source"] = "files";
    data["train"] = cfg.data.train_files;
    data["test"] = cfg.data.test_files;
  }
  j["data"] = data;
  j["lambda"] = cfg.lambda;
  j["batch_size"] = cfg.batch_size;
  j["participation"] = cfg.participation ? json(*cfg.participation) : json(nullptr);
  j["dissim"] = {{"n_ref", cfg.dissim.n_ref},
                 {"label_weight", cfg.dissim.label_weight},
                 {"solver", cfg.dissim.embedding.solver == ot::Solver::exact ? "exact" : "sinkhorn"},
                 {"sinkhorn_reg", cfg.dissim.embedding.sinkhorn_reg},
                 {"sinkhorn_max_iter", cfg.dissim.embedding.sinkhorn_max_iter}};
  json strategies = json::array();
  for (server::Strategy s : cfg.strategies) strategies.push_back(std::string(server::to_string(s)));
  j["strategies"] = strategies;
  j["t"] = cfg.t ? json(*cfg.t) : json("cv");
  j["cv"] = {{"grid", cfg.cv.grid}, {"folds", cfg.cv.folds}, {"rounds", cfg.cv.rounds}};
  for (const auto& [s, a] : cfg.algo) j[std::string(server::to_string(s))] = algo_json(s, a);
  j["bounds"] = {{"box", cfg.bounds.box}, {"oracle_trials", cfg.bounds.oracle_trials}};
  return j;
}

RunConfig parse_config(const std::string& text, const std::string& origin, const fs::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(describe_parse_error(text, origin, e));
  }
  try {
    return from_json(j, base_dir);
  } catch (const ConfigError& e) {
    throw ConfigError(origin + ": " + e.what());
  }
}

RunConfig load_config(const fs::path& path) {
  std::string text;
  try {
    text = io::read_text(path);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return parse_config(text, path.string(), path.parent_path());
}

Index client_count(const RunConfig& cfg) {
  return cfg.data.source == DataSource::synthetic ? cfg.data.synthetic.n_clients
                                                  : static_cast<Index>(cfg.data.train_files.size());
}

void validate(const RunConfig& cfg) {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (!valid_experiment_name(cfg.experiment))
    fail("experiment must be a non-empty name of letters, digits, '_', '-' or '.'");
  if (cfg.repetitions < 1) fail("repetitions must be >= 1");
  if (cfg.data.source == DataSource::synthetic) {
    clients::validate(cfg.data.synthetic);
  } else {
    if (cfg.data.train_files.empty()) fail("data.train must list at least one file");
    if (cfg.data.train_files.size() != cfg.data.test_files.size())
      fail("data.train and data.test must list the same number of files");
    for (const auto* list : {&cfg.data.train_files, &cfg.data.test_files})
      for (const auto& f : *list)
        if (!fs::exists(f)) fail("data file does not exist: " + f);
  }
  const Index n = client_count(cfg);
  if (!(std::isfinite(cfg.lambda) && cfg.lambda >= 0.0)) fail("lambda must be finite and >= 0");
  if (cfg.batch_size < 0) fail("batch_size must be >= 0 (0 = full gradients)");
  if (cfg.participation && (*cfg.participation < 2 || *cfg.participation > n - 1))
    fail("participation must satisfy 2 <= s <= n-1 (n = " + std::to_string(n) + "), got " +
         std::to_string(*cfg.participation));
  if (cfg.dissim.n_ref < 1) fail("dissim.n_ref must be >= 1");
  if (!(cfg.dissim.label_weight > 0.0 && std::isfinite(cfg.dissim.label_weight)))
    fail("dissim.label_weight must be positive");
  if (!(cfg.dissim.embedding.sinkhorn_reg > 0.0)) fail("dissim.sinkhorn_reg must be positive");
  if (cfg.dissim.embedding.sinkhorn_max_iter < 1) fail("dissim.sinkhorn_max_iter must be >= 1");
  if (cfg.strategies.empty()) fail("strategies must not be empty");
  for (std::size_t i = 0; i < cfg.strategies.size(); ++i)
    for (std::size_t k = i + 1; k < cfg.strategies.size(); ++k)
      if (cfg.strategies[i] == cfg.strategies[k])
        fail("strategies lists '" + std::string(server::to_string(cfg.strategies[i])) + "' twice");
  if (cfg.t && !(std::isfinite(*cfg.t) && *cfg.t >= 0.0)) fail("t must be finite and >= 0");
  if (cfg.cv.grid.empty()) fail("cv.grid must not be empty");
  for (double t : cfg.cv.grid)
    if (!(std::isfinite(t) && t >= 0.0)) fail("cv.grid values must be finite and >= 0");
  if (cfg.cv.folds < 2) fail("cv.folds must be >= 2");
  if (cfg.cv.rounds < 1) fail("cv.rounds must be >= 1");
  for (const auto& [s, a] : cfg.algo) {
    const std::string name(server::to_string(s));
    if (a.rounds < 1) fail(name + ".rounds must be >= 1");
    if (!(std::isfinite(a.eta) && a.eta >= 0.0)) fail(name + ".eta must be >= 0 (0 = default)");
    if (!(a.proj_tol > 0.0)) fail(name + ".proj_tol must be positive");
    if (a.max_sweeps < 1) fail(name + ".max_sweeps must be >= 1");
    if (a.diag_every < 0) fail(name + ".diag_every must be >= 0");
    if (a.local_steps < 1) fail(name + ".local_steps must be >= 1");
    if (a.clusters < 1) fail(name + ".clusters must be >= 1");
  }
  if (!(cfg.bounds.box > 0.0)) fail("bounds.box must be positive");
  if (cfg.bounds.oracle_trials < 1) fail("bounds.oracle_trials must be >= 1");
}

std::uint64_t repetition_seed(const RunConfig& cfg, int r) {
  return cfg.seed + static_cast<std::uint64_t>(r);
}

std::string config_hash(const RunConfig& cfg) { return hash_json(to_json(cfg)); }

std::string scope_hash(const RunConfig& cfg, Scope scope, std::uint64_t seed,
                       std::optional<server::Strategy> strategy) {
  const json full = to_json(cfg);
  json part;
  part["seed"] = seed;
  part["data"] = full["data"];
  if (scope == Scope::data) return hash_json(part);
  part["dissim"] = full["dissim"];
  if (scope == Scope::dissim) return hash_json(part);
  part["lambda"] = full["lambda"];
  part["batch_size"] = full["batch_size"];
  part["participation"] = full["participation"];
  if (scope == Scope::cv) {
    part["cv"] = full["cv"];
    part["karula"] = full["karula"];
    part["karula"].erase("rounds");
    part["karula"].erase("diag_every");
    return hash_json(part);
  }
  if (scope == Scope::train) {
    require(strategy.has_value(), "scope_hash: train scope needs a strategy");
    const std::string name(server::to_string(*strategy));
    part["strategy"] = name;
    part["algo"] = full[name];
    if (*strategy == server::Strategy::karula) {
      part["t"] = full["t"];
      if (!cfg.t) part["cv"] = full["cv"];
    } else {
      part.erase("dissim");
    }
    return hash_json(part);
  }
  json all = full;
  all.erase("repetitions");
  all["seed"] = seed;
  return hash_json(all);
}

void apply_override(RunConfig& cfg, const std::string& key, const std::string& json_value) {
  json value;
  try {
    value = json::parse(json_value);
  } catch (const json::parse_error&) {
    // Bare words such as --strategy karula arrive unquoted.
    value = json_value;
  }
  json j = to_json(cfg);
  std::string pointer = "/" + key;
  std::replace(pointer.begin(), pointer.end(), '.', '/');
  const json::json_pointer ptr(pointer);
  if (!j.contains(ptr.parent_pointer()) || !j.at(ptr.parent_pointer()).is_object() ||
      !j.at(ptr.parent_pointer()).contains(ptr.back()))
    throw ConfigError("unknown key '" + key + "'");
  j[ptr] = value;
  // Paths in the echo are already resolved.
  cfg = from_json(j);
}

}  // namespace karula::config
