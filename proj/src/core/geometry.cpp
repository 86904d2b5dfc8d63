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

#include "core/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace karula::geometry {
namespace {

constexpr double kZeroDissimilarity = 1e-12;

void validate_dissimilarity(const ot::DissimilarityMatrix& d) {
  const Index n = d.size();
  require(n >= 1 && d.d.cols() == n, "dissimilarity matrix must be square and non-empty");
  require(d.d.allFinite(), "dissimilarity matrix has non-finite entries");
  for (Index i = 0; i < n; ++i) {
    require(d.d(i, i) == 0.0, "dissimilarity matrix must have a zero diagonal");
    for (Index j = 0; j < n; ++j) {
      require(d.d(i, j) >= 0.0, "dissimilarity matrix has negative entries");
      require(d.d(i, j) == d.d(j, i), "dissimilarity matrix must be symmetric");
    }
  }
}

// Weighted projection of one pair onto |a - b| <= r in the norm
// wa |.|^2 + wb |.|^2. Returns true if the pair moved.
bool weighted_pair_project(Eigen::Ref<Vector> a, Eigen::Ref<Vector> b, double wa,
                           double wb, double r) {
  const Vector diff = a - b;
  const double dist = diff.norm();
  if (dist <= r) return false;
  const double excess = dist - r;
  const double total = wa + wb;
  const Vector step = (excess / dist) * diff;
  a -= (wb / total) * step;
  b += (wa / total) * step;
  return true;
}

double max_pair_violation(const ModelStack& theta, const FeasibleSet& k) {
  const Index n = theta.rows();
  double worst = n > 1 ? -std::numeric_limits<double>::infinity() : 0.0;
  const double t = k.t();
  const Matrix& d = k.dissimilarity().d;
  const Matrix cols = theta.transpose();
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j)
      worst = std::max(worst, (cols.col(i) - cols.col(j)).squaredNorm() - t * d(i, j));
  return worst;
}

Matrix group_means(const ModelStack& v, const FeasibleSet& k) {
  const auto& groups = k.zero_groups();
  Matrix z(static_cast<Index>(groups.size()), v.cols());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    Vector sum = Vector::Zero(v.cols());
    for (Index i : groups[g]) sum += v.row(i).transpose();
    z.row(static_cast<Index>(g)) = sum.transpose() / static_cast<double>(groups[g].size());
  }
  return z;
}

ModelStack expand_groups(const Matrix& z, const FeasibleSet& k) {
  ModelStack out(k.size(), z.cols());
  for (Index i = 0; i < k.size(); ++i) out.row(i) = z.row(k.group_of(i));
  return out;
}

}  // namespace

FeasibleSet::FeasibleSet(double t, ot::DissimilarityMatrix d) : t_(t), d_(std::move(d)) {
  require(std::isfinite(t_) && t_ >= 0.0, "coupling parameter t must be finite and >= 0");
  validate_dissimilarity(d_);
  const Index n = d_.size();
  radii_ = (t_ * d_.d).cwiseSqrt();
  groups_ = merge_zero_groups(d_);
  group_of_.assign(n, 0);
  weights_.resize(static_cast<Index>(groups_.size()));
  for (std::size_t g = 0; g < groups_.size(); ++g) {
    weights_(static_cast<Index>(g)) = static_cast<double>(groups_[g].size());
    for (Index i : groups_[g]) group_of_[i] = static_cast<Index>(g);
  }
  const Index m = static_cast<Index>(groups_.size());
  Matrix group_radius = Matrix::Constant(m, m, std::numeric_limits<double>::infinity());
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      const Index gi = group_of_[i], gj = group_of_[j];
      if (gi != gj) group_radius(gi, gj) = std::min(group_radius(gi, gj), radii_(i, j));
    }
  }
  for (Index g = 0; g < m; ++g)
    for (Index h = g + 1; h < m; ++h) constraints_.push_back({g, h, group_radius(g, h)});
}

std::pair<Vector, Vector> pair_project(const Vector& a, const Vector& b, double r) {
  require(a.size() == b.size(), "pair_project: vectors differ in length");
  require(r >= 0.0, "pair_project: radius must be nonnegative");
  Vector a2 = a, b2 = b;
  weighted_pair_project(a2, b2, 1.0, 1.0, r);
  return {std::move(a2), std::move(b2)};
}

FeasibilityReport is_feasible(const ModelStack& theta, const FeasibleSet& k, double tol) {
  require(theta.rows() == k.size(), "is_feasible: model stack has " +
                                        std::to_string(theta.rows()) + " rows, set has " +
                                        std::to_string(k.size()) + " clients");
  FeasibilityReport report;
  report.max_violation = max_pair_violation(theta, k);
  report.feasible = report.max_violation <= tol;
  return report;
}

std::vector<std::vector<Index>> merge_zero_groups(const ot::DissimilarityMatrix& d) {
  const Index n = d.size();
  std::vector<Index> parent(n);
  std::iota(parent.begin(), parent.end(), Index{0});
  auto find = [&](Index x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j)
      if (d.d(i, j) <= kZeroDissimilarity) {
        const Index a = find(i), b = find(j);
        if (a != b) parent[std::max(a, b)] = std::min(a, b);
      }
  std::vector<std::vector<Index>> groups;
  std::vector<Index> slot(n, -1);
  for (Index i = 0; i < n; ++i) {
    const Index root = find(i);
    if (slot[root] < 0) {
      slot[root] = static_cast<Index>(groups.size());
      groups.emplace_back();
    }
    groups[slot[root]].push_back(i);
  }
  return groups;
}

ModelStack feasibility_restore(const ModelStack& theta, const FeasibleSet& k) {
  require(theta.rows() == k.size(), "feasibility_restore: shape mismatch");
  const Index n = theta.rows();
  const Vector centroid = theta.colwise().mean().transpose();
  double lambda = 1.0;
  const Matrix& r = k.radii();
  const Matrix cols = theta.transpose();
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) {
      if (k.group_of(i) == k.group_of(j)) continue;
      const double dist = (cols.col(i) - cols.col(j)).norm();
      if (dist <= r(i, j)) continue;
      lambda = r(i, j) > 0.0 ? std::min(lambda, r(i, j) / dist) : 0.0;
    }
  }
  if (lambda == 1.0) return theta;
  ModelStack out = theta;
  for (;;) {
    for (Index i = 0; i < n; ++i)
      out.row(i) = centroid.transpose() + lambda * (theta.row(i) - centroid.transpose());
    if (lambda == 0.0 || max_pair_violation(out, k) <= 0.0) break;
    lambda *= 1.0 - 4.0 * std::numeric_limits<double>::epsilon();
  }
  return out;
}

ProjectionResult dykstra_project(const ModelStack& v, const FeasibleSet& k,
                                 const ProjectionOptions& options,
                                 ProjectionWorkspace* warm) {
  require(v.rows() == k.size(), "dykstra_project: model stack has " +
                                    std::to_string(v.rows()) + " rows, set has " +
                                    std::to_string(k.size()) + " clients");
  require(v.allFinite(), "dykstra_project: input has non-finite entries");
  require(options.eta > 0.0 && options.tol > 0.0 && options.max_sweeps >= 1,
          "dykstra_project: eta, tol and max_sweeps must be positive");

  const Index p = v.cols();
  const auto& constraints = k.constraints();
  const Index nc = static_cast<Index>(constraints.size());
  const Vector& w = k.group_weights();

  ProjectionResult result;
  result.sweeps = 1;

  Matrix z = group_means(v, k);
  ModelStack merged = expand_groups(z, k);

  const bool all_zero = std::all_of(constraints.begin(), constraints.end(),
                                    [](const auto& c) { return c.radius == 0.0; });
  if (max_pair_violation(merged, k) <= 0.0 || (nc > 0 && all_zero)) {
    // Already feasible, or K is the consensus subspace whose projection is
    // the weighted mean row.
    if (nc > 0 && all_zero && max_pair_violation(merged, k) > 0.0) {
      const Vector mean = (w.transpose() * z).transpose() / w.sum();
      z.rowwise() = mean.transpose();
      merged = expand_groups(z, k);
    }
    if (warm) warm->corrections.setZero(nc, p);
    result.point = std::move(merged);
    result.max_violation_before_restore = std::max(0.0, max_pair_violation(result.point, k));
    result.point = feasibility_restore(result.point, k);
    return result;
  }

  // Columns hold group iterates and per-constraint corrections so the inner
  // loop touches contiguous memory.
  Matrix zt = z.transpose();
  Matrix yt = Matrix::Zero(p, nc);
  std::vector<char> live(static_cast<std::size_t>(nc), 0);
  if (warm && warm->corrections.rows() == nc && warm->corrections.cols() == p) {
    yt = warm->corrections.transpose();
    for (Index c = 0; c < nc; ++c) {
      const auto& con = constraints[c];
      zt.col(con.first) -= yt.col(c);
      zt.col(con.second) += (w(con.first) / w(con.second)) * yt.col(c);
      live[c] = !yt.col(c).isZero(0.0);
    }
  }

  result.converged = false;
  for (int sweep = 1; sweep <= options.max_sweeps; ++sweep) {
    result.sweeps = sweep;
    double moved = 0.0;
    for (Index c = 0; c < nc; ++c) {
      const auto& con = constraints[c];
      const double wg = w(con.first), wh = w(con.second);
      const double ratio = wg / wh;
      double* zg = zt.col(con.first).data();
      double* zh = zt.col(con.second).data();
      double* yc = yt.col(c).data();
      // a = zg + yc, b = zh - ratio * yc; project (a, b) and record a_in - a.
      double dist_sq = 0.0;
      for (Index q = 0; q < p; ++q) {
        const double diff = (zg[q] + yc[q]) - (zh[q] - ratio * yc[q]);
        dist_sq += diff * diff;
      }
      const double dist = std::sqrt(dist_sq);
      if (dist <= con.radius) {
        if (!live[c]) continue;
        // The pair is inside its ball once the correction is released.
        double released = 0.0;
        for (Index q = 0; q < p; ++q) {
          released += yc[q] * yc[q];
          zg[q] += yc[q];
          zh[q] -= ratio * yc[q];
          yc[q] = 0.0;
        }
        live[c] = 0;
        moved += (wg + wh * ratio * ratio) * released;
        continue;
      }
      const double scale = (dist - con.radius) / dist / (wg + wh);
      double da = 0.0, db = 0.0;
      for (Index q = 0; q < p; ++q) {
        const double a_in = zg[q] + yc[q];
        const double b_in = zh[q] - ratio * yc[q];
        const double step = scale * (a_in - b_in);
        const double a = a_in - wh * step;
        const double b = b_in + wg * step;
        da += (a - zg[q]) * (a - zg[q]);
        db += (b - zh[q]) * (b - zh[q]);
        yc[q] = a_in - a;
        zg[q] = a;
        zh[q] = b;
      }
      live[c] = 1;
      moved += wg * da + wh * db;
    }
    if (std::sqrt(moved) <= options.tol) {
      result.converged = true;
      break;
    }
  }
  if (warm) warm->corrections = yt.transpose();
  z = zt.transpose();

  const ModelStack dykstra_point = expand_groups(z, k);
  result.max_violation_before_restore = std::max(0.0, max_pair_violation(dykstra_point, k));
  result.point = feasibility_restore(dykstra_point, k);
  const double restored = (result.point - v).squaredNorm();
  const double raw = (dykstra_point - v).squaredNorm();
  result.delta_hat = std::max(0.0, (restored - raw) / (2.0 * options.eta));
  return result;
}

GradientMappingValue gradient_mapping(const ModelStack& theta, const Matrix& grad,
                                      double eta, const FeasibleSet& k, double tol,
                                      int max_sweeps) {
  require(theta.rows() == grad.rows() && theta.cols() == grad.cols(),
          "gradient_mapping: gradient shape differs from parameters");
  require(eta > 0.0, "gradient_mapping: eta must be positive");
  const ProjectionResult proj =
      dykstra_project(theta - eta * grad, k, {eta, tol / 100.0, max_sweeps});
  GradientMappingValue out;
  out.g_map = (theta - proj.point) / eta;
  out.sq_norm = out.g_map.squaredNorm();
  return out;
}

}  // namespace karula::geometry
