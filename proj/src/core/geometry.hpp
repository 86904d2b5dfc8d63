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

#ifndef KARULA_CORE_GEOMETRY_HPP_
#define KARULA_CORE_GEOMETRY_HPP_

#include <utility>
#include <vector>

#include "core/common.hpp"
#include "core/otcore.hpp"

namespace karula::geometry {

// K = { theta : |theta_i - theta_j|^2 <= t * D_ij for all pairs }.
//
// Clients joined by zero-dissimilarity edges are forced to share one model;
// the projection works on one row per such group, with the group size as
// the row's weight, and only keeps the tightest radius between two groups.
class FeasibleSet {
 public:
  struct GroupConstraint {
    Index first;
    Index second;
    double radius;
  };

  FeasibleSet(double t, ot::DissimilarityMatrix d);

  double t() const { return t_; }
  const ot::DissimilarityMatrix& dissimilarity() const { return d_; }
  const Matrix& radii() const { return radii_; }
  Index size() const { return d_.size(); }

  const std::vector<std::vector<Index>>& zero_groups() const { return groups_; }
  Index group_of(Index client) const { return group_of_[client]; }
  const Vector& group_weights() const { return weights_; }
  const std::vector<GroupConstraint>& constraints() const { return constraints_; }

 private:
  double t_;
  ot::DissimilarityMatrix d_;
  Matrix radii_;
  std::vector<std::vector<Index>> groups_;
  std::vector<Index> group_of_;
  Vector weights_;
  std::vector<GroupConstraint> constraints_;
};

struct FeasibilityReport {
  bool feasible = true;
  double max_violation = 0.0;  // max over pairs of |theta_i - theta_j|^2 - t D_ij
};

struct ProjectionOptions {
  double eta = 1.0;  // scales delta_hat, the projection objective is (1/2 eta)|.|^2
  double tol = 1e-6;
  int max_sweeps = 500;
};

struct ProjectionResult {
  ModelStack point;
  int sweeps = 0;
  double max_violation_before_restore = 0.0;
  double delta_hat = 0.0;
  bool converged = true;
};

/// Dykstra correction vectors kept between calls. Passing the same workspace
/// to consecutive projections onto one FeasibleSet starts each run from the
/// previous dual state, which is block coordinate ascent on the same dual
/// problem from a different starting point.
struct ProjectionWorkspace {
  Matrix corrections;  // one row per group constraint
};

struct GradientMappingValue {
  Matrix g_map;
  double sq_norm = 0.0;
};

std::pair<Vector, Vector> pair_project(const Vector& a, const Vector& b,
                                       double r);

FeasibilityReport is_feasible(const ModelStack& theta, const FeasibleSet& k,
                              double tol);

/// Connected components of the graph with an edge wherever D_ij <= 1e-12,
/// each sorted, ordered by smallest member.
std::vector<std::vector<Index>> merge_zero_groups(const ot::DissimilarityMatrix& d);

/// Contracts every row toward the mean row until all pairwise constraints
/// hold. Expects rows of a zero group to be identical already.
ModelStack feasibility_restore(const ModelStack& theta, const FeasibleSet& k);

ProjectionResult dykstra_project(const ModelStack& v, const FeasibleSet& k,
                                 const ProjectionOptions& options = {},
                                 ProjectionWorkspace* warm = nullptr);

/// (theta - P(theta - eta * grad)) / eta, where P runs Dykstra at tol / 100.
GradientMappingValue gradient_mapping(const ModelStack& theta, const Matrix& grad,
                                      double eta, const FeasibleSet& k,
                                      double tol, int max_sweeps = 20000);

}  // namespace karula::geometry

#endif  // KARULA_CORE_GEOMETRY_HPP_
