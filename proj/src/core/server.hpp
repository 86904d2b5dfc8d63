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

#ifndef KARULA_CORE_SERVER_HPP_
#define KARULA_CORE_SERVER_HPP_

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "core/clients.hpp"
#include "core/common.hpp"
#include "core/geometry.hpp"
#include "core/rng.hpp"

namespace karula::server {

enum class Strategy { local, fedavg, ifca, karula };

std::string_view to_string(Strategy s);
Strategy parse_strategy(std::string_view name);

// Scaling of the table correction in the estimator:
//   lemma:    nu = g + (n/s)(g' - g)   (unbiased)
//   verbatim: nu = g + (g' - g)/s
enum class NuScaling { lemma, verbatim };

/// Simulated clients. Each one answers gradient queries through its own
/// seeded stream keyed by (seed, client, round), so answers do not depend on
/// the order in which the server asks.
class ClientPool {
 public:
  ClientPool(std::vector<clients::ClientData> data,
             std::vector<clients::RidgeObjective> objectives, std::uint64_t seed = 0,
             Index batch_size = 0);

  Index size() const { return static_cast<Index>(data_.size()); }
  Index dim() const { return data_.front().dim(); }
  Index batch_size() const { return batch_size_; }
  const std::vector<clients::ClientData>& data() const { return data_; }
  const std::vector<clients::RidgeObjective>& objectives() const { return objectives_; }

  /// Oracle G_i at theta_i: alpha_i-weighted, stochastic when batch_size > 0.
  clients::OracleReply query(Index client, const Vector& theta, std::uint64_t round) const;

  /// alpha_i * grad f_i(theta_i), deterministic.
  clients::OracleReply full_gradient(Index client, const Vector& theta) const;

  /// f(theta) = (1/n) sum_i alpha_i f_i(theta_i).
  double objective(const ModelStack& theta) const;

  /// Row i holds alpha_i grad f_i(theta_i) / n, the gradient of f.
  Matrix stacked_gradient(const ModelStack& theta) const;

  /// max_i alpha_i (sigma_max(X_i'X_i)/N_i + lambda_i), cached.
  double smoothness() const { return smoothness_; }

 private:
  std::vector<clients::ClientData> data_;
  std::vector<clients::RidgeObjective> objectives_;
  std::uint64_t seed_;
  Index batch_size_;
  double smoothness_;
};

struct AlgoConfig {
  double eta = 0.0;          // 0 selects the strategy's default from L
  Index participation = 0;   // 0 selects max(2, n/3), capped at n
  int rounds = 1000;
  double t = 1.0;
  double proj_tol = 1e-6;
  int max_sweeps = 500;
  std::uint64_t seed = 0;
  NuScaling nu_scaling = NuScaling::lemma;
  int diag_every = 0;        // 0 disables gradient-mapping diagnostics
  int local_steps = 5;
  int clusters = 3;
  bool local_exact = true;
  bool warm_start = true;
  bool log_objective = true;  // false leaves RoundLog::objective as NaN
};

/// Karula 3/(8L), FedAvg 1/(10L), IFCA 1/(2L); 0 for local (per-client 1/L_i).
double default_eta(Strategy s, double smoothness);
Index default_participation(Index n);

struct VRState {
  ModelStack phi;
  Matrix g;
  Matrix nu;
};

struct RoundLog {
  int round = 0;
  std::vector<Index> participants;
  double objective = 0.0;
  std::optional<double> grad_mapping_sq;
  int proj_sweeps = 0;
  double delta_hat = 0.0;
  bool proj_converged = true;
  double wall_time = 0.0;
};

struct KarulaStart {
  ModelStack theta;
  VRState state;
};

/// Zero models for every client, gradient table filled from one query each.
KarulaStart karula_init(const ClientPool& pool);

std::vector<Index> sample_participants(Index n, Index s, Rng& rng);

/// Updates phi and g for the participants and returns nu. Every sampled
/// client must reply exactly once and nobody else may.
Matrix vr_update(VRState& state, const ModelStack& theta,
                 std::span<const Index> participants,
                 std::span<const clients::OracleReply> replies,
                 NuScaling scaling = NuScaling::lemma);

struct RoundResult {
  ModelStack theta;
  RoundLog log;
};

RoundResult karula_round(const ModelStack& theta, VRState& state,
                         const geometry::FeasibleSet& k, const AlgoConfig& cfg,
                         const ClientPool& pool, Rng& rng, int round,
                         geometry::ProjectionWorkspace* workspace = nullptr);

Vector fedavg_round(const Vector& global, const ClientPool& pool, int local_steps,
                    double eta, std::span<const Index> participants);

struct IfcaStep {
  std::vector<Vector> models;
  std::vector<Index> assignments;  // cluster chosen by each participant
};

IfcaStep ifca_round(const std::vector<Vector>& cluster_models, const ClientPool& pool,
                    double eta, std::span<const Index> participants);

/// Index of the cluster model with the lowest training loss, ties to the
/// lowest index.
Index best_cluster(const std::vector<Vector>& cluster_models, const ClientPool& pool,
                   Index client);

/// Per-client gradient descent on the unweighted local loss. eta <= 0 uses
/// 1/L_i for each client.
ModelStack local_train(const ClientPool& pool, double eta, int steps);
ModelStack local_exact(const ClientPool& pool);

struct StrategyResult {
  ModelStack models;
  std::vector<RoundLog> logs;
  std::vector<Index> clusters;  // IFCA only
  double eta = 0.0;
  Index participation = 0;
};

/// Runs K = cfg.rounds rounds. `k` is required for Karula and ignored by
/// the other strategies.
StrategyResult run_strategy(Strategy strategy, const ClientPool& pool,
                            const AlgoConfig& cfg,
                            const geometry::FeasibleSet* k = nullptr);

}  // namespace karula::server

#endif  // KARULA_CORE_SERVER_HPP_
