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

#ifndef KARULA_CORE_OTCORE_HPP_
#define KARULA_CORE_OTCORE_HPP_

#include <cstdint>
#include <span>
#include <vector>

#include "core/common.hpp"

namespace karula::ot {

/// Samples in the joint feature-label space, one row per sample. Every
/// sample carries weight 1/N; row order carries no meaning.
struct Dataset {
  Matrix rows;

  Index size() const { return rows.rows(); }
  Index dim() const { return rows.cols(); }
};

/// Ground-metric values between the rows of two datasets.
struct CostMatrix {
  Matrix entries;
};

struct TransportPlan {
  Matrix entries;
  double objective = 0.0;
};

struct SinkhornResult {
  TransportPlan plan;  // rounded onto the transport polytope
  int iterations = 0;
  bool converged = false;
};

/// Linear OT embedding of one client, N_0 x d_joint.
struct Embedding {
  Matrix phi;
};

/// Symmetric, zero-diagonal matrix of pairwise client dissimilarities.
struct DissimilarityMatrix {
  Matrix d;

  Index size() const { return d.rows(); }
};

enum class Solver { exact, sinkhorn };

struct EmbeddingOptions {
  Solver solver = Solver::exact;
  double sinkhorn_reg = 0.05;  // relative to the mean ground cost
  int sinkhorn_max_iter = 5000;
};

Dataset joint_encode(const Matrix& features, const Vector& labels,
                     double label_weight);

CostMatrix ground_cost(const Dataset& a, const Dataset& b);

/// Exact discrete OT between uniform marginals 1/rows and 1/cols, solved by
/// the transportation simplex. Returns an optimal basic feasible plan.
TransportPlan solve_ot_exact(const CostMatrix& cost);

/// Log-domain Sinkhorn followed by rounding onto the feasible polytope.
/// Non-convergence is reported through the result, never thrown.
SinkhornResult solve_ot_sinkhorn(const CostMatrix& cost, double reg,
                                 int max_iter);

double wasserstein1(const Dataset& a, const Dataset& b);

/// M = N_0 * plan * client.rows; row j is the barycenter of the client mass
/// that reference point j is transported to.
Matrix barycentric_map(const TransportPlan& plan, const Dataset& client);

Embedding embed(const Matrix& m, const Dataset& reference);

/// D_ij = sum of absolute entries of phi_i - phi_j.
DissimilarityMatrix dissimilarity_matrix(std::span<const Embedding> embeddings);

/// Sorted-matching W1 for two equal-size one-dimensional samples.
double wasserstein1_1d_oracle(std::span<const double> a,
                              std::span<const double> b);

/// Reference dataset of n_ref samples: standard normal draws mapped through
/// the per-coordinate pooled mean and standard deviation of the clients.
Dataset make_reference(std::span<const Dataset> clients, Index n_ref,
                       std::uint64_t seed);

Embedding client_embedding(const Dataset& client, const Dataset& reference,
                           const EmbeddingOptions& options = {});

}  // namespace karula::ot

#endif  // KARULA_CORE_OTCORE_HPP_
