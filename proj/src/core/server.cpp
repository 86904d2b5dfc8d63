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

#include "core/server.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

namespace karula::server {
namespace {

using clients::OracleReply;

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

Vector unweighted_gradient(const ClientPool& pool, Index client, const Vector& theta) {
  clients::RidgeObjective obj = pool.objectives()[client];
  obj.alpha = 1.0;
  return clients::ridge_gradient(theta, pool.data()[client], obj, client).gradient;
}

ModelStack replicate(const Vector& row, Index n) {
  ModelStack out(n, row.size());
  out.rowwise() = row.transpose();
  return out;
}

}  // namespace

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::local: return "local";
    case Strategy::fedavg: return "fedavg";
    case Strategy::ifca: return "ifca";
    case Strategy::karula: return "karula";
  }
  return "unknown";
}

Strategy parse_strategy(std::string_view name) {
  if (name == "local") return Strategy::local;
  if (name == "fedavg") return Strategy::fedavg;
  if (name == "ifca") return Strategy::ifca;
  if (name == "karula") return Strategy::karula;
  throw InvalidArgument("unknown strategy '" + std::string(name) +
                        "' (expected karula, fedavg, ifca or local)");
}

ClientPool::ClientPool(std::vector<clients::ClientData> data,
                       std::vector<clients::RidgeObjective> objectives, std::uint64_t seed,
                       Index batch_size)
    : data_(std::move(data)),
      objectives_(std::move(objectives)),
      seed_(seed),
      batch_size_(batch_size) {
  require(!data_.empty(), "ClientPool needs at least one client");
  require(data_.size() == objectives_.size(), "ClientPool: one objective per client");
  for (const auto& d : data_) {
    require(d.size() >= 1, "ClientPool: every client needs at least one sample");
    require(d.dim() == data_.front().dim(), "ClientPool: clients differ in dimension");
  }
  for (const auto& o : objectives_)
    require(o.alpha > 0.0 && o.lambda >= 0.0, "ClientPool: need alpha > 0 and lambda >= 0");
  require(batch_size_ >= 0, "ClientPool: batch size must be >= 0");
  smoothness_ = clients::smoothness_constant(data_, objectives_);
}

OracleReply ClientPool::query(Index client, const Vector& theta, std::uint64_t round) const {
  if (batch_size_ == 0) return full_gradient(client, theta);
  Rng rng = make_rng(seed_, Stream::batches, {static_cast<std::uint64_t>(client), round});
  return clients::ridge_stochastic_gradient(theta, data_[client], objectives_[client], client,
                                            batch_size_, rng);
}

OracleReply ClientPool::full_gradient(Index client, const Vector& theta) const {
  return clients::ridge_gradient(theta, data_[client], objectives_[client], client);
}

double ClientPool::objective(const ModelStack& theta) const {
  require(theta.rows() == size(), "objective: one model row per client expected");
  double total = 0.0;
  for (Index i = 0; i < size(); ++i)
    total += objectives_[i].alpha *
             clients::ridge_loss(theta.row(i).transpose(), data_[i], objectives_[i]);
  return total / static_cast<double>(size());
}

Matrix ClientPool::stacked_gradient(const ModelStack& theta) const {
  require(theta.rows() == size(), "stacked_gradient: one model row per client expected");
  Matrix g(size(), theta.cols());
  for (Index i = 0; i < size(); ++i)
    g.row(i) = full_gradient(i, theta.row(i).transpose()).gradient.transpose() /
               static_cast<double>(size());
  return g;
}

double default_eta(Strategy s, double smoothness) {
  switch (s) {
    case Strategy::karula: return 3.0 / (8.0 * smoothness);
    case Strategy::fedavg: return 1.0 / (10.0 * smoothness);
    case Strategy::ifca: return 1.0 / (2.0 * smoothness);
    case Strategy::local: return 0.0;
  }
  return 1.0 / smoothness;
}

Index default_participation(Index n) {
  return std::min(n, std::max<Index>(2, n / 3));
}

KarulaStart karula_init(const ClientPool& pool) {
  const Index n = pool.size(), p = pool.dim();
  KarulaStart start;
  start.theta = ModelStack::Zero(n, p);
  start.state.phi = start.theta;
  start.state.g.resize(n, p);
  for (Index i = 0; i < n; ++i) {
    const OracleReply reply = pool.query(i, start.theta.row(i).transpose(), 0);
    if (!reply.gradient.allFinite())
      throw NumericalError("client " + std::to_string(i) + " returned a non-finite gradient");
    start.state.g.row(i) = reply.gradient.transpose() / static_cast<double>(n);
  }
  start.state.nu = Matrix::Zero(n, p);
  return start;
}

std::vector<Index> sample_participants(Index n, Index s, Rng& rng) {
  require(s >= 1 && s <= n, "sample_participants: need 1 <= s <= n, got s=" +
                                std::to_string(s) + ", n=" + std::to_string(n));
  std::vector<Index> ids(static_cast<std::size_t>(n));
  std::iota(ids.begin(), ids.end(), Index{0});
  for (Index k = 0; k < s; ++k) {
    std::uniform_int_distribution<Index> pick(k, n - 1);
    std::swap(ids[k], ids[pick(rng)]);
  }
  ids.resize(static_cast<std::size_t>(s));
  std::sort(ids.begin(), ids.end());
  return ids;
}

Matrix vr_update(VRState& state, const ModelStack& theta, std::span<const Index> participants,
                 std::span<const OracleReply> replies, NuScaling scaling) {
  const Index n = state.g.rows();
  const Index s = static_cast<Index>(participants.size());
  require(s >= 1 && s <= n, "vr_update: participant count out of range");
  require(theta.rows() == n && theta.cols() == state.g.cols(), "vr_update: shape mismatch");
  std::vector<char> sampled(static_cast<std::size_t>(n), 0), answered(sampled);
  for (Index i : participants) {
    require(i >= 0 && i < n && !sampled[i], "vr_update: invalid participant set");
    sampled[i] = 1;
  }
  for (const OracleReply& r : replies) {
    require(r.client_id >= 0 && r.client_id < n && sampled[r.client_id],
            "vr_update: reply from non-sampled client " + std::to_string(r.client_id));
    require(!answered[r.client_id],
            "vr_update: duplicate reply from client " + std::to_string(r.client_id));
    answered[r.client_id] = 1;
  }
  require(static_cast<Index>(replies.size()) == s, "vr_update: missing replies");

  const double correction = scaling == NuScaling::lemma
                                ? static_cast<double>(n) / static_cast<double>(s)
                                : 1.0 / static_cast<double>(s);
  Matrix nu = state.g;
  for (const OracleReply& r : replies) {
    const Index i = r.client_id;
    const Vector fresh = r.gradient / static_cast<double>(n);
    nu.row(i) += correction * (fresh.transpose() - state.g.row(i));
    state.g.row(i) = fresh.transpose();
    state.phi.row(i) = theta.row(i);
  }
  state.nu = nu;
  return nu;
}

RoundResult karula_round(const ModelStack& theta, VRState& state,
                         const geometry::FeasibleSet& k, const AlgoConfig& cfg,
                         const ClientPool& pool, Rng& rng, int round,
                         geometry::ProjectionWorkspace* workspace) {
  const auto start = std::chrono::steady_clock::now();
  const Index n = pool.size();
  const Index s = cfg.participation > 0 ? cfg.participation : default_participation(n);
  const double eta = cfg.eta > 0.0 ? cfg.eta : default_eta(Strategy::karula, pool.smoothness());

  RoundResult out;
  out.log.round = round;
  out.log.objective = cfg.log_objective ? pool.objective(theta)
                                        : std::numeric_limits<double>::quiet_NaN();
  out.log.participants = sample_participants(n, s, rng);

  std::vector<OracleReply> replies;
  replies.reserve(out.log.participants.size());
  for (Index i : out.log.participants)
    replies.push_back(pool.query(i, theta.row(i).transpose(), static_cast<std::uint64_t>(round) + 1));
  const Matrix nu = vr_update(state, theta, out.log.participants, replies, cfg.nu_scaling);

  const geometry::ProjectionResult proj = geometry::dykstra_project(
      theta - eta * nu, k, {eta, cfg.proj_tol, cfg.max_sweeps}, workspace);
  out.theta = proj.point;
  out.log.proj_sweeps = proj.sweeps;
  out.log.delta_hat = proj.delta_hat;
  out.log.proj_converged = proj.converged;
  out.log.wall_time = seconds_since(start);
  return out;
}

Vector fedavg_round(const Vector& global, const ClientPool& pool, int local_steps, double eta,
                    std::span<const Index> participants) {
  require(local_steps >= 1, "fedavg_round: local_steps must be >= 1");
  require(!participants.empty(), "fedavg_round: empty participant set");
  // Local steps run on the weighted loss alpha_i f_i, so the plain average of
  // the local models weights clients by alpha_i to first order.
  Vector aggregate = Vector::Zero(global.size());
  for (Index i : participants) {
    Vector local = global;
    for (int step = 0; step < local_steps; ++step) local -= eta * pool.full_gradient(i, local).gradient;
    aggregate += local;
  }
  return aggregate / static_cast<double>(participants.size());
}

Index best_cluster(const std::vector<Vector>& cluster_models, const ClientPool& pool,
                   Index client) {
  Index best = 0;
  double best_loss = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < cluster_models.size(); ++c) {
    const double loss = clients::ridge_loss(cluster_models[c], pool.data()[client],
                                            pool.objectives()[client]);
    if (loss < best_loss) {
      best_loss = loss;
      best = static_cast<Index>(c);
    }
  }
  return best;
}

IfcaStep ifca_round(const std::vector<Vector>& cluster_models, const ClientPool& pool,
                    double eta, std::span<const Index> participants) {
  require(!cluster_models.empty(), "ifca_round: need at least one cluster");
  const std::size_t m = cluster_models.size();
  IfcaStep out;
  out.models = cluster_models;
  std::vector<Vector> grad_sum(m, Vector::Zero(cluster_models[0].size()));
  std::vector<Index> members(m, 0);
  for (Index i : participants) {
    const Index c = best_cluster(cluster_models, pool, i);
    out.assignments.push_back(c);
    grad_sum[c] += pool.full_gradient(i, cluster_models[c]).gradient;
    ++members[c];
  }
  for (std::size_t c = 0; c < m; ++c)
    if (members[c] > 0) out.models[c] -= eta * grad_sum[c] / static_cast<double>(members[c]);
  return out;
}

ModelStack local_train(const ClientPool& pool, double eta, int steps) {
  ModelStack models = ModelStack::Zero(pool.size(), pool.dim());
  for (Index i = 0; i < pool.size(); ++i) {
    const auto& obj = pool.objectives()[i];
    const double step_size =
        eta > 0.0 ? eta : 1.0 / (clients::top_eigenvalue(pool.data()[i].x) + obj.lambda);
    Vector theta = Vector::Zero(pool.dim());
    for (int step = 0; step < steps; ++step) theta -= step_size * unweighted_gradient(pool, i, theta);
    models.row(i) = theta.transpose();
  }
  return models;
}

ModelStack local_exact(const ClientPool& pool) {
  ModelStack models(pool.size(), pool.dim());
  for (Index i = 0; i < pool.size(); ++i)
    models.row(i) = clients::ridge_exact_solve(pool.data()[i], pool.objectives()[i]).transpose();
  return models;
}

StrategyResult run_strategy(Strategy strategy, const ClientPool& pool, const AlgoConfig& cfg,
                            const geometry::FeasibleSet* k) {
  require(cfg.rounds >= 0, "run_strategy: rounds must be >= 0");
  const Index n = pool.size(), p = pool.dim();
  StrategyResult result;
  result.eta = cfg.eta > 0.0 ? cfg.eta : default_eta(strategy, pool.smoothness());
  require(strategy == Strategy::local || result.eta > 0.0, "run_strategy: step size must be positive");
  result.participation = cfg.participation > 0 ? cfg.participation : default_participation(n);
  Rng rng = make_rng(cfg.seed, Stream::participation);

  switch (strategy) {
    case Strategy::karula: {
      require(k != nullptr, "run_strategy: karula needs a feasible set");
      require(k->size() == n, "run_strategy: feasible set size differs from client count");
      AlgoConfig round_cfg = cfg;
      round_cfg.eta = result.eta;
      round_cfg.participation = result.participation;
      KarulaStart start = karula_init(pool);
      ModelStack theta = std::move(start.theta);
      geometry::ProjectionWorkspace workspace;
      for (int round = 0; round < cfg.rounds; ++round) {
        RoundResult step = karula_round(theta, start.state, *k, round_cfg, pool, rng, round,
                                        cfg.warm_start ? &workspace : nullptr);
        if (cfg.diag_every > 0 && round % cfg.diag_every == 0) {
          step.log.grad_mapping_sq =
              geometry::gradient_mapping(theta, pool.stacked_gradient(theta), result.eta, *k,
                                         cfg.proj_tol)
                  .sq_norm;
        }
        result.logs.push_back(std::move(step.log));
        theta = std::move(step.theta);
      }
      result.models = std::move(theta);
      break;
    }
    case Strategy::fedavg: {
      Vector global = Vector::Zero(p);
      for (int round = 0; round < cfg.rounds; ++round) {
        const auto start = std::chrono::steady_clock::now();
        RoundLog log;
        log.round = round;
        log.objective = pool.objective(replicate(global, n));
        log.participants = sample_participants(n, result.participation, rng);
        global = fedavg_round(global, pool, cfg.local_steps, result.eta, log.participants);
        log.wall_time = seconds_since(start);
        result.logs.push_back(std::move(log));
      }
      result.models = replicate(global, n);
      break;
    }
    case Strategy::ifca: {
      require(cfg.clusters >= 1, "run_strategy: ifca needs at least one cluster");
      Rng init = make_rng(cfg.seed, Stream::ifca_init);
      std::normal_distribution<double> normal(0.0, 1.0);
      std::vector<Vector> models(static_cast<std::size_t>(cfg.clusters), Vector(p));
      for (auto& m : models)
        for (Index k2 = 0; k2 < p; ++k2) m(k2) = normal(init);
      auto assigned_stack = [&] {
        ModelStack out(n, p);
        for (Index i = 0; i < n; ++i) out.row(i) = models[best_cluster(models, pool, i)].transpose();
        return out;
      };
      for (int round = 0; round < cfg.rounds; ++round) {
        const auto start = std::chrono::steady_clock::now();
        RoundLog log;
        log.round = round;
        log.objective = pool.objective(assigned_stack());
        log.participants = sample_participants(n, result.participation, rng);
        models = ifca_round(models, pool, result.eta, log.participants).models;
        log.wall_time = seconds_since(start);
        result.logs.push_back(std::move(log));
      }
      result.clusters.resize(static_cast<std::size_t>(n));
      for (Index i = 0; i < n; ++i) result.clusters[i] = best_cluster(models, pool, i);
      result.models = assigned_stack();
      break;
    }
    case Strategy::local: {
      if (cfg.local_exact) {
        result.models = local_exact(pool);
      } else {
        result.models = local_train(pool, result.eta, cfg.rounds);
      }
      RoundLog log;
      log.round = 0;
      log.objective = pool.objective(result.models);
      log.participants.resize(static_cast<std::size_t>(n));
      std::iota(log.participants.begin(), log.participants.end(), Index{0});
      result.logs.push_back(std::move(log));
      break;
    }
  }
  return result;
}

}  // namespace karula::server
