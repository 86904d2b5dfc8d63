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

#ifndef KARULA_CORE_CLIENTS_HPP_
#define KARULA_CORE_CLIENTS_HPP_

#include <cstdint>
#include <span>
#include <vector>

#include "core/common.hpp"
#include "core/rng.hpp"

namespace karula::clients {

struct ClientData {
  Matrix x;
  Vector y;

  Index size() const { return x.rows(); }
  Index dim() const { return x.cols(); }
};

// Per-sample loss (1/2)(y - x'theta)^2 + (lambda/2)|theta|^2, and the weight
// alpha_i the client's loss carries in the federated objective.
struct RidgeObjective {
  double lambda = 1e-6;
  double alpha = 1.0;
};

struct OracleReply {
  Index client_id = 0;
  Vector gradient;  // alpha_i * grad of the (mini-batch) empirical loss
  bool is_stochastic = false;
  Index batch_size = 0;  // 0 means the full local dataset
};

struct SyntheticConfig {
  Index n_clients = 30;
  Index d = 50;
  std::vector<double> group_means{1.0, 1.5, 2.0};
  Index n_min = 10;
  Index n_max = 100;
  double noise_std = 2.0;
  double theta_spread = 0.3;
  double feature_mean_spread = 0.3;
};

struct SyntheticInstance {
  std::vector<ClientData> train;
  std::vector<ClientData> test;
  ModelStack truth;
  std::vector<int> group;
};

struct Fold {
  std::vector<Index> train;
  std::vector<Index> validation;
};

void validate(const SyntheticConfig& cfg);

double ridge_loss(const Vector& theta, const ClientData& data, const RidgeObjective& obj);

/// Gradient over the rows in `batch`, or the whole dataset when it is empty.
OracleReply ridge_gradient(const Vector& theta, const ClientData& data,
                           const RidgeObjective& obj, Index client_id,
                           std::span<const Index> batch = {});

/// Samples a batch of `batch_size` distinct rows uniformly and returns the
/// mini-batch gradient. batch_size 0 or >= N gives the full gradient.
OracleReply ridge_stochastic_gradient(const Vector& theta, const ClientData& data,
                                      const RidgeObjective& obj, Index client_id,
                                      Index batch_size, Rng& rng);

/// Solves (X'X/N + lambda I) theta = X'y/N.
Vector ridge_exact_solve(const ClientData& data, const RidgeObjective& obj);

/// Largest eigenvalue of X'X/N by power iteration.
double top_eigenvalue(const Matrix& x);

/// L = max_i alpha_i (sigma_max(X_i'X_i)/N_i + lambda_i).
double smoothness_constant(std::span<const ClientData> datasets,
                           std::span<const RidgeObjective> objectives);

/// alpha_i = N_i / mean(N), every client with the same ridge penalty.
std::vector<RidgeObjective> sample_size_objectives(std::span<const ClientData> datasets,
                                                   double lambda);

SyntheticInstance generate_synthetic(const SyntheticConfig& cfg, std::uint64_t seed);

std::vector<Fold> kfold_split(Index n_samples, int k, Rng& rng);

ClientData subset(const ClientData& data, std::span<const Index> rows);

}  // namespace karula::clients

#endif  // KARULA_CORE_CLIENTS_HPP_
