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


#include "core/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>
#include <vector>

#include "core/experiments.hpp"
#include "core/geometry.hpp"
#include "core/io.hpp"
#include "core/rng.hpp"

namespace karula::pipeline {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;
using config::RunConfig;
using config::Scope;
using server::Strategy;

// A dependent stage found an input written under a different configuration.
class StaleInput : public Error {
 public:
  using Error::Error;
};

// A --check assertion failed; the stage still wrote its outputs.
struct CheckFailures {
  std::vector<std::string> items;
};

class RunLog {
 public:
  explicit RunLog(fs::path path) : path_(std::move(path)) {}

  void write(Stage stage, const std::string& message) {
    const std::lock_guard<std::mutex> guard(mutex_);
    std::ofstream out(path_, std::ios::app | std::ios::binary);
    const std::time_t now = std::time(nullptr);
    std::tm utc{};
    gmtime_r(&now, &utc);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", &utc);
    out << stamp << " [" << to_string(stage) << "] " << message << "\n";
  }

 private:
  fs::path path_;
  std::mutex mutex_;
};

// Exclusive ownership of an experiment directory for the life of a stage.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) : path_(dir / ".lock") {
    fs::create_directories(dir);
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0)
      throw Error("output directory " + dir.string() + " is locked by another run (" +
                  path_.string() + "); remove the file if that run is gone");
    const std::string pid = std::to_string(::getpid()) + "\n";
    const ssize_t written = ::write(fd, pid.data(), pid.size());
    (void)written;
    ::close(fd);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;
  ~DirLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }

 private:
  fs::path path_;
};

struct Context {
  const RunConfig& cfg;
  const RunOptions& opt;
  std::string hash;
  fs::path exp_dir;
  std::vector<std::uint64_t> seeds;
  RunLog* log;
};

std::string scope_name(Scope s) {
  switch (s) {
    case Scope::data: return "data";
    case Scope::dissim: return "dissim";
    case Scope::cv: return "cv";
    case Scope::train: return "train";
    case Scope::report: return "report";
  }
  return "unknown";
}

std::string csv_header(const Context& ctx, Scope scope, const std::string& scoped) {
  return "karula config_hash=" + ctx.hash + " " + scope_name(scope) + "=" + scoped;
}

json json_header(const Context& ctx, Scope scope, const std::string& scoped) {
  json j;
  j["config_hash"] = ctx.hash;
  j["scope"] = {{scope_name(scope), scoped}};
  return j;
}

std::map<std::string, std::string> parse_header(const std::string& comment) {
  std::map<std::string, std::string> out;
  std::istringstream in(comment);
  std::string token;
  while (in >> token) {
    const auto eq = token.find('=');
    if (eq != std::string::npos) out[token.substr(0, eq)] = token.substr(eq + 1);
  }
  return out;
}

std::string producer_of(Scope s) {
  switch (s) {
    case Scope::data: return "gen-data";
    case Scope::dissim: return "dissim";
    case Scope::cv: return "cv";
    case Scope::train: return "train";
    case Scope::report: return "report";
  }
  return "";
}

void verify(const std::string& found, Scope scope, const std::string& expected, const fs::path& path) {
  if (found != expected)
    throw StaleInput(path.string() + " was written under a different configuration (" +
                     scope_name(scope) + " hash " + (found.empty() ? "missing" : found) +
                     ", expected " + expected + "); re-run " + producer_of(scope));
}

void verify_csv(const std::string& comment, Scope scope, const std::string& expected,
                const fs::path& path) {
  const auto fields = parse_header(comment);
  const auto it = fields.find(scope_name(scope));
  verify(it == fields.end() ? "" : it->second, scope, expected, path);
}

json read_json_verified(const fs::path& path, Scope scope, const std::string& expected) {
  if (!fs::exists(path)) throw Error("missing input " + path.string() + "; run " + producer_of(scope) + " first");
  json j;
  try {
    j = json::parse(io::read_text(path));
  } catch (const json::parse_error& e) {
    throw Error(path.string() + ": " + e.what());
  }
  const std::string name = scope_name(scope);
  const std::string found = j.contains("scope") && j["scope"].contains(name) ? j["scope"][name].get<std::string>() : "";
  verify(found, scope, expected, path);
  return j;
}

void write_json(const fs::path& path, const json& j) { io::write_text(path, j.dump(2) + "\n"); }

fs::path client_file(const fs::path& dir, const char* kind, Index i) {
  char name[32];
  std::snprintf(name, sizeof name, "%s_%03ld.csv", kind, static_cast<long>(i));
  return dir / "data" / name;
}

std::vector<clients::ClientData> load_clients(const Context& ctx, const fs::path& dir, const char* kind,
                                              std::uint64_t seed) {
  const Index n = config::client_count(ctx.cfg);
  const std::string expected = config::scope_hash(ctx.cfg, Scope::data, seed);
  std::vector<clients::ClientData> out;
  for (Index i = 0; i < n; ++i) {
    const fs::path path = client_file(dir, kind, i);
    if (!fs::exists(path)) throw Error("missing input " + path.string() + "; run gen-data first");
    std::string comment;
    out.push_back(io::read_client_csv(path, &comment));
    verify_csv(comment, Scope::data, expected, path);
  }
  return out;
}

ot::DissimilarityMatrix load_dissim(const Context& ctx, const fs::path& dir, std::uint64_t seed) {
  const fs::path path = dir / "dissim.csv";
  if (!fs::exists(path)) throw Error("missing input " + path.string() + "; run dissim first");
  std::string comment;
  Matrix d = io::read_matrix_csv(path, &comment);
  verify_csv(comment, Scope::dissim, config::scope_hash(ctx.cfg, Scope::dissim, seed), path);
  // The file is symmetric to 12 digits; enforce exact symmetry again.
  d = 0.5 * (d + d.transpose()).eval();
  d.diagonal().setZero();
  return {d};
}

server::AlgoConfig algo_for(const RunConfig& cfg, Strategy s, std::uint64_t seed) {
  server::AlgoConfig a = cfg.algo.at(s);
  a.seed = seed;
  a.participation = cfg.participation.value_or(0);
  return a;
}

bool has_strategy(const RunConfig& cfg, Strategy s) {
  return std::find(cfg.strategies.begin(), cfg.strategies.end(), s) != cfg.strategies.end();
}

server::ClientPool make_pool(const RunConfig& cfg, std::vector<clients::ClientData> train,
                             std::uint64_t seed) {
  auto objectives = clients::sample_size_objectives(train, cfg.lambda);
  return server::ClientPool(std::move(train), std::move(objectives), seed, cfg.batch_size);
}

// Runs fn for each seed, spreading seeds over worker threads. Exceptions are
// rethrown in seed order so the reported error does not depend on timing.
template <typename Fn>
void for_each_seed(const Context& ctx, Fn fn) {
  const std::size_t count = ctx.seeds.size();
  std::vector<std::exception_ptr> errors(count);
  const int workers = std::max(1, std::min<int>(ctx.opt.threads, static_cast<int>(count)));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) {
      try {
        fn(i, ctx.seeds[i]);
      } catch (...) {
        errors[i] = std::current_exception();
        break;
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < count; i = next++) {
          try {
            fn(i, ctx.seeds[i]);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// gen-data ------------------------------------------------------------------

void stage_gen_data(const Context& ctx) {
  const RunConfig& cfg = ctx.cfg;
  for_each_seed(ctx, [&](std::size_t, std::uint64_t seed) {
    const fs::path dir = seed_dir(cfg, ctx.opt, seed);
    const std::string scoped = config::scope_hash(cfg, Scope::data, seed);
    const std::string header = csv_header(ctx, Scope::data, scoped);
    json truth = json_header(ctx, Scope::data, scoped);
    truth["seed"] = seed;
    truth["config"] = config::to_json(cfg);
    if (cfg.data.source == config::DataSource::synthetic) {
      const clients::SyntheticInstance inst = clients::generate_synthetic(cfg.data.synthetic, seed);
      for (std::size_t i = 0; i < inst.train.size(); ++i) {
        io::write_client_csv(client_file(dir, "train", static_cast<Index>(i)), inst.train[i], header);
        io::write_client_csv(client_file(dir, "test", static_cast<Index>(i)), inst.test[i], header);
      }
      truth["n_clients"] = inst.train.size();
      truth["theta_star"] = io::matrix_to_json(inst.truth);
      truth["group"] = inst.group;
    } else {
      for (std::size_t i = 0; i < cfg.data.train_files.size(); ++i) {
        io::write_client_csv(client_file(dir, "train", static_cast<Index>(i)),
                             io::read_client_csv(cfg.data.train_files[i]), header);
        io::write_client_csv(client_file(dir, "test", static_cast<Index>(i)),
                             io::read_client_csv(cfg.data.test_files[i]), header);
      }
      truth["n_clients"] = cfg.data.train_files.size();
      truth["theta_star"] = nullptr;
      truth["group"] = nullptr;
    }
    write_json(dir / "ground_truth.json", truth);
    ctx.log->write(Stage::gen_data, "seed=" + std::to_string(seed) + " wrote " + dir.string());
  });
}

// dissim --------------------------------------------------------------------

void stage_dissim(const Context& ctx) {
  const RunConfig& cfg = ctx.cfg;
  for_each_seed(ctx, [&](std::size_t, std::uint64_t seed) {
    const fs::path dir = seed_dir(cfg, ctx.opt, seed);
    const auto train = load_clients(ctx, dir, "train", seed);
    std::vector<ot::Dataset> joint;
    for (const auto& c : train) joint.push_back(ot::joint_encode(c.x, c.y, cfg.dissim.label_weight));
    const ot::Dataset ref = ot::make_reference(joint, cfg.dissim.n_ref, derive_seed(seed, Stream::reference));
    std::vector<ot::Embedding> embeddings;
    for (const auto& d : joint) embeddings.push_back(ot::client_embedding(d, ref, cfg.dissim.embedding));
    const ot::DissimilarityMatrix dm = ot::dissimilarity_matrix(embeddings);

    const std::string scoped = config::scope_hash(cfg, Scope::dissim, seed);
    io::write_matrix_csv(dir / "dissim.csv", dm.d, csv_header(ctx, Scope::dissim, scoped));
    json emb = json_header(ctx, Scope::dissim, scoped);
    emb["seed"] = seed;
    emb["n_ref"] = cfg.dissim.n_ref;
    emb["label_weight"] = cfg.dissim.label_weight;
    emb["embeddings"] = json::array();
    for (const auto& e : embeddings) emb["embeddings"].push_back(io::matrix_to_json(e.phi));
    write_json(dir / "embeddings.json", emb);
    ctx.log->write(Stage::dissim, "seed=" + std::to_string(seed) + " mean D=" + io::format_number(dm.d.mean()));
  });
}

// cv ------------------------------------------------------------------------

void stage_cv(const Context& ctx) {
  const RunConfig& cfg = ctx.cfg;
  for_each_seed(ctx, [&](std::size_t, std::uint64_t seed) {
    const fs::path dir = seed_dir(cfg, ctx.opt, seed);
    const auto train = load_clients(ctx, dir, "train", seed);
    const ot::DissimilarityMatrix d = load_dissim(ctx, dir, seed);
    server::AlgoConfig a = algo_for(cfg, Strategy::karula, seed);
    a.rounds = cfg.cv.rounds;
    const experiments::CvResult cv =
        experiments::cross_validate_t(train, d, cfg.cv.grid, cfg.cv.folds, a, cfg.lambda, seed);
    json out = json_header(ctx, Scope::cv, config::scope_hash(cfg, Scope::cv, seed));
    out["seed"] = seed;
    out["chosen_t"] = cv.chosen_t;
    out["table"] = json::array();
    for (const auto& row : cv.table)
      out["table"].push_back({{"t", row.t}, {"score", row.score}, {"fold_scores", row.fold_scores}});
    write_json(dir / "cv.json", out);
    ctx.log->write(Stage::cv, "seed=" + std::to_string(seed) + " chosen t=" + io::format_number(cv.chosen_t));
  });
}

// train ---------------------------------------------------------------------

std::string trace_csv(const std::string& header, const std::vector<server::RoundLog>& logs) {
  std::string out = "# " + header + "\nround,objective,grad_mapping_sq,delta_hat,proj_sweeps\n";
  for (const auto& l : logs) {
    out += std::to_string(l.round) + "," + io::format_number(l.objective) + ",";
    if (l.grad_mapping_sq) out += io::format_number(*l.grad_mapping_sq);
    out += "," + io::format_number(l.delta_hat) + "," + std::to_string(l.proj_sweeps) + "\n";
  }
  return out;
}

std::vector<server::RoundLog> read_trace(const fs::path& path, std::string* comment) {
  std::istringstream in(io::read_text(path));
  std::string line;
  std::vector<server::RoundLog> logs;
  bool header = false;
  for (int line_no = 1; std::getline(in, line); ++line_no) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (comment && comment->empty()) *comment = line.substr(std::min<std::size_t>(2, line.size()));
      continue;
    }
    if (!header) {
      header = true;
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() == 4) cells.emplace_back();
    if (cells.size() != 5) throw Error(path.string() + ":" + std::to_string(line_no) + ": expected 5 columns");
    server::RoundLog l;
    try {
      l.round = std::stoi(cells[0]);
      l.objective = std::stod(cells[1]);
      if (!cells[2].empty()) l.grad_mapping_sq = std::stod(cells[2]);
      l.delta_hat = std::stod(cells[3]);
      l.proj_sweeps = std::stoi(cells[4]);
    } catch (const std::exception&) {
      throw Error(path.string() + ":" + std::to_string(line_no) + ": malformed trace row");
    }
    logs.push_back(std::move(l));
  }
  return logs;
}

double karula_t(const Context& ctx, const fs::path& dir, std::uint64_t seed) {
  if (ctx.cfg.t) return *ctx.cfg.t;
  const json cv = read_json_verified(dir / "cv.json", Scope::cv, config::scope_hash(ctx.cfg, Scope::cv, seed));
  return cv.at("chosen_t").get<double>();
}

void stage_train(const Context& ctx) {
  const RunConfig& cfg = ctx.cfg;
  for_each_seed(ctx, [&](std::size_t, std::uint64_t seed) {
    const fs::path dir = seed_dir(cfg, ctx.opt, seed);
    const server::ClientPool pool = make_pool(cfg, load_clients(ctx, dir, "train", seed), seed);
    for (Strategy s : cfg.strategies) {
      const std::string name(server::to_string(s));
      const server::AlgoConfig a = algo_for(cfg, s, seed);
      std::optional<geometry::FeasibleSet> k;
      std::optional<double> t;
      if (s == Strategy::karula) {
        t = karula_t(ctx, dir, seed);
        k.emplace(*t, load_dissim(ctx, dir, seed));
      }
      const server::StrategyResult r = server::run_strategy(s, pool, a, k ? &*k : nullptr);
      const std::string scoped = config::scope_hash(cfg, Scope::train, seed, s);
      io::write_text(dir / name / "trace.csv", trace_csv(csv_header(ctx, Scope::train, scoped), r.logs));
      json m = json_header(ctx, Scope::train, scoped);
      m["strategy"] = name;
      m["seed"] = seed;
      m["eta"] = r.eta;
      m["participation"] = r.participation;
      m["t"] = t ? json(*t) : json(nullptr);
      m["models"] = io::matrix_to_json(r.models);
      if (s == Strategy::ifca) m["clusters"] = r.clusters;
      write_json(dir / name / "models.json", m);
      ctx.log->write(Stage::train, "seed=" + std::to_string(seed) + " " + name + " final objective=" +
                                       io::format_number(r.logs.empty() ? 0.0 : r.logs.back().objective));
    }
  });
}

Matrix load_models(const Context& ctx, const fs::path& dir, Strategy s, std::uint64_t seed, json* meta = nullptr) {
  const json m = read_json_verified(dir / std::string(server::to_string(s)) / "models.json", Scope::train,
                                    config::scope_hash(ctx.cfg, Scope::train, seed, s));
  if (meta) *meta = m;
  return io::matrix_from_json(m.at("models"));
}

// check-bound ---------------------------------------------------------------

void stage_check_bound(const Context& ctx, bool require_diagnostics, CheckFailures& failures) {
  const RunConfig& cfg = ctx.cfg;
  if (!has_strategy(cfg, Strategy::karula)) throw Error("check-bound needs karula among the strategies");
  std::mutex mutex;
  for_each_seed(ctx, [&](std::size_t, std::uint64_t seed) {
    const fs::path dir = seed_dir(cfg, ctx.opt, seed);
    const auto train = load_clients(ctx, dir, "train", seed);
    const server::ClientPool pool = make_pool(cfg, train, seed);
    json meta;
    load_models(ctx, dir, Strategy::karula, seed, &meta);
    const fs::path trace_path = dir / "karula" / "trace.csv";
    std::string comment;
    const auto trace = read_trace(trace_path, &comment);
    verify_csv(comment, Scope::train, config::scope_hash(cfg, Scope::train, seed, Strategy::karula), trace_path);

    json out = json_header(ctx, Scope::report, config::scope_hash(cfg, Scope::report, seed));
    out["seed"] = seed;
    std::vector<std::string> local_failures;

    const bool has_diag = std::any_of(trace.begin(), trace.end(), [](const auto& l) { return l.grad_mapping_sq.has_value(); });
    if (has_diag) {
      double delta = 0.0;
      for (const auto& l : trace) delta = std::max(delta, l.delta_hat);
      const Index s = meta.at("participation").get<Index>();
      const auto constants = experiments::analysis_constants(pool, s, delta, cfg.bounds.box,
                                                             cfg.dissim.label_weight, cfg.bounds.oracle_trials);
      const auto rep = experiments::check_theorem1(trace, constants, pool.size(), s, meta.at("eta").get<double>());
      json rows = json::array();
      for (const auto& r : rep.rows)
        rows.push_back({{"K", r.k}, {"min_so_far", r.min_so_far}, {"rhs", r.rhs},
                        {"rhs_blockwise", r.rhs_blockwise}, {"holds", r.holds}});
      out["theorem"] = {{"holds", rep.holds}, {"holds_blockwise", rep.holds_blockwise},
                        {"preconditions_met", rep.preconditions_met}, {"L", constants.L},
                        {"sigma_sq_hat", constants.sigma_sq_hat}, {"f0", rep.f0},
                        {"delta_max", rep.delta_max}, {"epsilon", rep.epsilon},
                        {"decay_exponent", rep.decay_exponent}, {"rows", rows}};
      if (rep.preconditions_met && !rep.holds)
        local_failures.push_back("seed " + std::to_string(seed) + ": stationarity bound violated");
    } else if (require_diagnostics) {
      throw Error(trace_path.string() + " has no gradient-mapping diagnostics; set karula.diag_every > 0 and re-run train");
    } else {
      out["theorem"] = {{"skipped", "no gradient-mapping diagnostics in the trace"}};
    }

    if (cfg.lambda > 0.0) {
      int violations = 0, pairs = 0;
      double worst_ratio = 0.0;
      for (std::size_t i = 0; i < train.size(); ++i) {
        for (std::size_t j = i + 1; j < train.size(); ++j) {
          const auto r = experiments::check_prop1(train[i], train[j], cfg.lambda, cfg.bounds.box,
                                                  cfg.dissim.label_weight);
          ++pairs;
          if (!r.holds) ++violations;
          if (r.rhs > 0.0) worst_ratio = std::max(worst_ratio, r.lhs / r.rhs);
        }
      }
      out["prop1"] = {{"pairs", pairs}, {"violations", violations}, {"max_lhs_over_rhs", worst_ratio}};
      if (violations > 0)
        local_failures.push_back("seed " + std::to_string(seed) + ": " + std::to_string(violations) +
                                 " model-distance bound violations");
    } else {
      out["prop1"] = {{"skipped", "lambda = 0 gives no growth constant"}};
    }
    write_json(dir / "bounds.json", out);
    ctx.log->write(Stage::check_bound, "seed=" + std::to_string(seed) + (local_failures.empty() ? " all bounds hold" : " " + local_failures.front()));
    const std::lock_guard<std::mutex> guard(mutex);
    failures.items.insert(failures.items.end(), local_failures.begin(), local_failures.end());
  });
}

// report --------------------------------------------------------------------

struct SeedMetrics {
  std::map<Strategy, double> error, r2;
  std::map<std::string, double> spearman;
};

void stage_report(const Context& ctx, CheckFailures& failures) {
  const RunConfig& cfg = ctx.cfg;
  std::vector<SeedMetrics> metrics(ctx.seeds.size());
  for_each_seed(ctx, [&](std::size_t idx, std::uint64_t seed) {
    const fs::path dir = seed_dir(cfg, ctx.opt, seed);
    const auto test = load_clients(ctx, dir, "test", seed);
    const json truth_json = read_json_verified(dir / "ground_truth.json", Scope::data,
                                               config::scope_hash(cfg, Scope::data, seed));
    std::optional<Matrix> truth;
    if (!truth_json.at("theta_star").is_null()) truth = io::matrix_from_json(truth_json.at("theta_star"));

    json out = json_header(ctx, Scope::report, config::scope_hash(cfg, Scope::report, seed));
    out["seed"] = seed;
    out["strategies"] = json::object();
    SeedMetrics& sm = metrics[idx];
    std::optional<Matrix> local_models;
    for (Strategy s : cfg.strategies) {
      const Matrix models = load_models(ctx, dir, s, seed);
      json entry;
      const auto r2 = experiments::r2_score(models, test);
      entry["r2"] = r2.value;
      entry["r2_excluded_clients"] = r2.excluded;
      sm.r2[s] = r2.value;
      if (truth) {
        const auto err = experiments::estimation_error(models, *truth);
        entry["estimation_error"] = err.mean;
        entry["estimation_error_sum"] = err.sum;
        entry["estimation_error_se"] = err.se;
        sm.error[s] = err.mean;
      } else {
        entry["estimation_error"] = nullptr;
      }
      if (s == Strategy::local) local_models = models;
      out["strategies"][std::string(server::to_string(s))] = entry;
    }
    if (truth) {
      std::vector<std::pair<std::string, Matrix>> maps{{"truth", experiments::pairwise_sq_distances(*truth)}};
      if (has_strategy(cfg, Strategy::karula) && fs::exists(dir / "dissim.csv"))
        maps.emplace_back("dissimilarity", load_dissim(ctx, dir, seed).d);
      if (local_models) maps.emplace_back("local", experiments::pairwise_sq_distances(*local_models));
      if (maps.size() > 1 && truth->rows() >= 3) {
        const auto rho = experiments::heatmap_export(
            maps, "truth", dir, csv_header(ctx, Scope::report, config::scope_hash(cfg, Scope::report, seed)));
        json sp;
        for (const auto& [name, value] : rho)
          if (name != "truth") {
            sp[name] = value;
            sm.spearman[name] = value;
          }
        out["spearman_vs_truth"] = sp;
      }
    }
    write_json(dir / "metrics.json", out);
    ctx.log->write(Stage::report, "seed=" + std::to_string(seed) + " wrote metrics.json");
  });

  // Aggregate across seeds in seed order.
  json summary;
  summary["config_hash"] = ctx.hash;
  summary["experiment"] = cfg.experiment;
  summary["seeds"] = ctx.seeds;
  summary["rows"] = json::array();
  std::map<Strategy, std::pair<double, double>> err_stats, r2_stats;
  for (Strategy s : cfg.strategies) {
    std::vector<double> errs, r2s;
    for (const auto& m : metrics) {
      if (m.error.count(s)) errs.push_back(m.error.at(s));
      r2s.push_back(m.r2.at(s));
    }
    const auto e = experiments::mean_and_se(errs);
    const auto r = experiments::mean_and_se(r2s);
    err_stats[s] = e;
    r2_stats[s] = r;
    json row;
    row["strategy"] = std::string(server::to_string(s));
    row["estimation_error"] = errs.empty() ? json(nullptr) : json(e.first);
    row["est_err_2se"] = errs.empty() ? json(nullptr) : json(2.0 * e.second);
    row["r2"] = r.first;
    row["r2_2se"] = 2.0 * r.second;
    summary["rows"].push_back(row);
  }
  int wins = 0, compared = 0;
  for (const auto& m : metrics) {
    if (m.spearman.count("dissimilarity") && m.spearman.count("local")) {
      ++compared;
      if (m.spearman.at("dissimilarity") > m.spearman.at("local")) ++wins;
    }
  }
  if (compared > 0) {
    json sp;
    for (const char* name : {"dissimilarity", "local"}) {
      std::vector<double> values;
      for (const auto& m : metrics) values.push_back(m.spearman.at(name));
      sp[name] = {{"mean", experiments::mean_and_se(values).first}, {"per_seed", values}};
    }
    sp["dissimilarity_wins"] = wins;
    sp["seeds_compared"] = compared;
    summary["spearman_vs_truth"] = sp;
  }
  write_json(ctx.exp_dir / "summary.json", summary);
  ctx.log->write(Stage::report, "wrote " + (ctx.exp_dir / "summary.json").string());

  if (!ctx.opt.check) return;
  const bool have_errors = !err_stats.empty() && std::all_of(cfg.strategies.begin(), cfg.strategies.end(), [&](Strategy s) {
    return std::any_of(metrics.begin(), metrics.end(), [&](const SeedMetrics& m) { return m.error.count(s) > 0; });
  });
  if (has_strategy(cfg, Strategy::karula) && cfg.strategies.size() > 1) {
    for (Strategy s : cfg.strategies) {
      if (s == Strategy::karula) continue;
      const std::string name(server::to_string(s));
      if (have_errors && !(err_stats[Strategy::karula].first < err_stats[s].first))
        failures.items.push_back("karula estimation error is not below " + name);
      if (!(r2_stats[Strategy::karula].first > r2_stats[s].first))
        failures.items.push_back("karula R2 is not above " + name);
    }
  }
  if (have_errors && has_strategy(cfg, Strategy::local) && has_strategy(cfg, Strategy::fedavg) &&
      !(err_stats[Strategy::local].first >= 2.0 * err_stats[Strategy::fedavg].first))
    failures.items.push_back("local estimation error is below twice fedavg's");
  if (compared > 0 && wins * 10 < 8 * compared)
    failures.items.push_back("dissimilarity ranks closer to the truth than local models on only " +
                             std::to_string(wins) + " of " + std::to_string(compared) + " seeds");
}

// dispatch ------------------------------------------------------------------

void run_unlocked(const Context& ctx, Stage stage, bool explicit_stage, CheckFailures& failures) {
  switch (stage) {
    case Stage::gen_data: stage_gen_data(ctx); break;
    case Stage::dissim: stage_dissim(ctx); break;
    case Stage::cv: stage_cv(ctx); break;
    case Stage::train: stage_train(ctx); break;
    case Stage::check_bound: stage_check_bound(ctx, explicit_stage, failures); break;
    case Stage::report: stage_report(ctx, failures); break;
    case Stage::run: {
      const bool karula = has_strategy(ctx.cfg, Strategy::karula);
      std::vector<Stage> order{Stage::gen_data};
      if (karula) order.push_back(Stage::dissim);
      if (karula && !ctx.cfg.t) order.push_back(Stage::cv);
      order.push_back(Stage::train);
      if (karula) order.push_back(Stage::check_bound);
      order.push_back(Stage::report);
      for (Stage s : order) {
        ctx.log->write(s, "start");
        run_unlocked(ctx, s, false, failures);
      }
      break;
    }
  }
}

}  // namespace

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::gen_data: return "gen-data";
    case Stage::dissim: return "dissim";
    case Stage::cv: return "cv";
    case Stage::train: return "train";
    case Stage::check_bound: return "check-bound";
    case Stage::report: return "report";
    case Stage::run: return "run";
  }
  return "unknown";
}

Stage parse_stage(std::string_view name) {
  for (Stage s : {Stage::gen_data, Stage::dissim, Stage::cv, Stage::train, Stage::check_bound,
                  Stage::report, Stage::run})
    if (to_string(s) == name) return s;
  throw InvalidArgument("unknown stage '" + std::string(name) + "'");
}

fs::path experiment_dir(const RunConfig& cfg, const RunOptions& opt) { return opt.out_root / cfg.experiment; }

fs::path seed_dir(const RunConfig& cfg, const RunOptions& opt, std::uint64_t seed) {
  return experiment_dir(cfg, opt) / std::to_string(seed);
}

Outcome run_stage(const RunConfig& cfg, Stage stage, const RunOptions& opt) {
  Outcome outcome;
  std::optional<RunLog> log;
  try {
    config::validate(cfg);
    if (opt.threads < 1) throw ConfigError("threads must be >= 1");
    Context ctx{cfg, opt, config::config_hash(cfg), experiment_dir(cfg, opt), {}, nullptr};
    if (opt.only_seed) {
      ctx.seeds.push_back(*opt.only_seed);
    } else {
      for (int r = 0; r < cfg.repetitions; ++r) ctx.seeds.push_back(config::repetition_seed(cfg, r));
    }
    const DirLock lock(ctx.exp_dir);
    log.emplace(ctx.exp_dir / "run.log");
    ctx.log = &*log;
    json echo;
    echo["config_hash"] = ctx.hash;
    echo["config"] = config::to_json(cfg);
    write_json(ctx.exp_dir / "config.json", echo);
    log->write(stage, "start config_hash=" + ctx.hash);
    CheckFailures failures;
    run_unlocked(ctx, stage, true, failures);
    if (opt.check && !failures.items.empty()) {
      outcome.code = kCheckFailure;
      outcome.message = failures.items.front();
      for (const auto& f : failures.items) log->write(stage, "check failed: " + f);
    } else {
      log->write(stage, "done");
    }
  } catch (const ConfigError& e) {
    outcome = {kConfigError, e.what()};
  } catch (const std::exception& e) {
    outcome = {kRuntimeFailure, e.what()};
  }
  if (outcome.code != kOk && outcome.code != kCheckFailure && log) log->write(stage, "error: " + outcome.message);
  return outcome;
}

Outcome run_pipeline(const RunConfig& cfg, const RunOptions& opt) { return run_stage(cfg, Stage::run, opt); }

json project_test(const json& input) {
  if (!input.is_object()) throw ConfigError("project-test input must be a JSON object");
  static const char* const kKeys[] = {"stack", "dissimilarity", "t", "eta", "tol", "max_sweeps"};
  for (auto it = input.begin(); it != input.end(); ++it)
    if (std::find_if(std::begin(kKeys), std::end(kKeys), [&](const char* k) { return it.key() == k; }) == std::end(kKeys))
      throw ConfigError("unknown key '" + it.key() + "' in project-test input");
  for (const char* k : {"stack", "dissimilarity", "t"})
    if (!input.contains(k)) throw ConfigError(std::string("project-test input needs '") + k + "'");
  Matrix stack, d;
  try {
    stack = io::matrix_from_json(input.at("stack"));
    d = io::matrix_from_json(input.at("dissimilarity"));
  } catch (const std::exception& e) {
    throw ConfigError(std::string("project-test input: ") + e.what());
  }
  auto number = [&](const char* k, double fallback) {
    if (!input.contains(k)) return fallback;
    if (!input.at(k).is_number()) throw ConfigError(std::string("project-test input: '") + k + "' must be a number");
    return input.at(k).get<double>();
  };
  geometry::ProjectionOptions options;
  options.eta = number("eta", options.eta);
  options.tol = number("tol", options.tol);
  options.max_sweeps = static_cast<int>(number("max_sweeps", options.max_sweeps));
  const geometry::FeasibleSet k(number("t", 0.0), ot::DissimilarityMatrix{d});
  const geometry::ProjectionResult r = geometry::dykstra_project(stack, k, options);
  json out;
  out["point"] = io::matrix_to_json(r.point);
  out["sweeps"] = r.sweeps;
  out["delta_hat"] = r.delta_hat;
  out["converged"] = r.converged;
  out["max_violation_before_restore"] = r.max_violation_before_restore;
  out["max_violation"] = geometry::is_feasible(r.point, k, 0.0).max_violation;
  return out;
}

}  // namespace karula::pipeline
