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

#include "core/otcore.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>

#include "core/rng.hpp"

namespace karula::ot {
namespace {

// Transportation simplex with integer masses. The uniform marginals 1/m and
// 1/n are scaled by m*n to integer supplies n and demands m, then perturbed
// (supply_i * M + 1, last demand + m, M = m + 1) so that every basis of the
// perturbed problem carries strictly positive flow. Pivots therefore strictly
// decrease the objective and the method cannot cycle. The optimal perturbed
// basis is also optimal for the unperturbed problem; its flows are recovered
// by solving the basis tree with the original masses.
class TransportationSimplex {
 public:
  explicit TransportationSimplex(const Matrix& cost)
      : cost_(cost), m_(cost.rows()), n_(cost.cols()) {}

  Matrix solve() {
    initial_basis();
    const double scale = 1.0 + cost_.cwiseAbs().maxCoeff();
    const double tolerance = 1e-12 * scale;
    const std::int64_t max_pivots = 50 * (m_ * n_ + m_ + n_) + 1000;

    std::vector<double> u(m_), v(n_);
    for (std::int64_t pivot = 0;; ++pivot) {
      if (pivot > max_pivots)
        throw NumericalError("transportation simplex exceeded pivot limit");
      build_tree();
      compute_potentials(u, v);

      Index enter_row = -1, enter_col = -1;
      double best = -tolerance;
      for (Index j = 0; j < n_; ++j) {
        for (Index i = 0; i < m_; ++i) {
          if (slot_[cell(i, j)] >= 0) continue;
          const double reduced = cost_(i, j) - u[i] - v[j];
          if (reduced < best) {
            best = reduced;
            enter_row = i;
            enter_col = j;
          }
        }
      }
      if (enter_row < 0) break;
      pivot_on(enter_row, enter_col);
    }
    return original_flows();
  }

 private:
  struct BasicCell {
    Index row;
    Index col;
    std::int64_t flow;
  };

  Index cell(Index i, Index j) const { return j * m_ + i; }
  Index col_node(Index j) const { return m_ + j; }

  void initial_basis() {
    const std::int64_t big = m_ + 1;
    std::vector<std::int64_t> supply(m_, n_ * big + 1);
    std::vector<std::int64_t> demand(n_, m_ * big);
    demand.back() += m_;

    basis_.clear();
    slot_.assign(m_ * n_, -1);
    Index i = 0, j = 0;
    std::int64_t left_s = supply[0], left_d = demand[0];
    for (;;) {
      const std::int64_t f = std::min(left_s, left_d);
      slot_[cell(i, j)] = static_cast<Index>(basis_.size());
      basis_.push_back({i, j, f});
      left_s -= f;
      left_d -= f;
      if (i == m_ - 1 && j == n_ - 1) break;
      if ((left_s == 0 && i < m_ - 1) || j == n_ - 1) {
        left_s = supply[++i];
      } else {
        left_d = demand[++j];
      }
    }
  }

  void build_tree() {
    const Index nodes = m_ + n_;
    adjacency_.assign(nodes, {});
    for (Index e = 0; e < static_cast<Index>(basis_.size()); ++e) {
      adjacency_[basis_[e].row].push_back(e);
      adjacency_[col_node(basis_[e].col)].push_back(e);
    }
    parent_edge_.assign(nodes, -1);
    depth_.assign(nodes, -1);
    order_.clear();
    order_.push_back(0);
    depth_[0] = 0;
    for (std::size_t head = 0; head < order_.size(); ++head) {
      const Index x = order_[head];
      for (Index e : adjacency_[x]) {
        const Index y = other_end(e, x);
        if (depth_[y] >= 0) continue;
        depth_[y] = depth_[x] + 1;
        parent_edge_[y] = e;
        order_.push_back(y);
      }
    }
    if (static_cast<Index>(order_.size()) != nodes)
      throw NumericalError("transportation basis is not a spanning tree");
  }

  Index other_end(Index e, Index x) const {
    const Index r = basis_[e].row;
    const Index c = col_node(basis_[e].col);
    return x == r ? c : r;
  }

  void compute_potentials(std::vector<double>& u, std::vector<double>& v) const {
    u[0] = 0.0;
    for (std::size_t k = 1; k < order_.size(); ++k) {
      const Index y = order_[k];
      const BasicCell& c = basis_[parent_edge_[y]];
      if (y < m_) {
        u[y] = cost_(c.row, c.col) - v[c.col];
      } else {
        v[y - m_] = cost_(c.row, c.col) - u[c.row];
      }
    }
  }

  void pivot_on(Index row, Index col) {
    // Tree path from the entering column node to the entering row node.
    std::vector<Index> from_col, from_row;
    Index a = col_node(col), b = row;
    while (depth_[a] > depth_[b]) {
      from_col.push_back(parent_edge_[a]);
      a = other_end(parent_edge_[a], a);
    }
    while (depth_[b] > depth_[a]) {
      from_row.push_back(parent_edge_[b]);
      b = other_end(parent_edge_[b], b);
    }
    while (a != b) {
      from_col.push_back(parent_edge_[a]);
      a = other_end(parent_edge_[a], a);
      from_row.push_back(parent_edge_[b]);
      b = other_end(parent_edge_[b], b);
    }
    std::vector<Index> path = std::move(from_col);
    path.insert(path.end(), from_row.rbegin(), from_row.rend());

    // Along the cycle the signs alternate starting with '-' next to the
    // entering cell.
    std::int64_t theta = std::numeric_limits<std::int64_t>::max();
    Index leaving = -1;
    for (std::size_t k = 0; k < path.size(); k += 2) {
      if (basis_[path[k]].flow < theta) {
        theta = basis_[path[k]].flow;
        leaving = path[k];
      }
    }
    for (std::size_t k = 0; k < path.size(); ++k)
      basis_[path[k]].flow += (k % 2 == 0) ? -theta : theta;

    slot_[cell(basis_[leaving].row, basis_[leaving].col)] = -1;
    basis_[leaving] = {row, col, theta};
    slot_[cell(row, col)] = leaving;
  }

  Matrix original_flows() const {
    const Index nodes = m_ + n_;
    std::vector<std::int64_t> remaining(nodes);
    for (Index i = 0; i < m_; ++i) remaining[i] = n_;
    for (Index j = 0; j < n_; ++j) remaining[col_node(j)] = m_;

    std::vector<std::vector<Index>> adj(nodes);
    for (Index e = 0; e < static_cast<Index>(basis_.size()); ++e) {
      adj[basis_[e].row].push_back(e);
      adj[col_node(basis_[e].col)].push_back(e);
    }
    std::vector<Index> degree(nodes);
    std::vector<Index> leaves;
    for (Index x = 0; x < nodes; ++x) {
      degree[x] = static_cast<Index>(adj[x].size());
      if (degree[x] == 1) leaves.push_back(x);
    }
    std::vector<char> used(basis_.size(), 0);
    std::vector<std::int64_t> flow(basis_.size(), 0);
    while (!leaves.empty()) {
      const Index x = leaves.back();
      leaves.pop_back();
      if (degree[x] != 1) continue;
      Index e = -1;
      for (Index candidate : adj[x])
        if (!used[candidate]) e = candidate;
      const Index y = other_end(e, x);
      const std::int64_t f = remaining[x];
      flow[e] = f;
      used[e] = 1;
      remaining[x] = 0;
      remaining[y] -= f;
      --degree[x];
      if (--degree[y] == 1) leaves.push_back(y);
    }

    Matrix plan = Matrix::Zero(m_, n_);
    const double total = static_cast<double>(m_) * static_cast<double>(n_);
    for (std::size_t e = 0; e < basis_.size(); ++e) {
      if (flow[e] < 0)
        throw NumericalError("transportation simplex produced negative flow");
      plan(basis_[e].row, basis_[e].col) = static_cast<double>(flow[e]) / total;
    }
    return plan;
  }

  const Matrix& cost_;
  Index m_;
  Index n_;
  std::vector<BasicCell> basis_;
  std::vector<Index> slot_;
  std::vector<std::vector<Index>> adjacency_;
  std::vector<Index> parent_edge_;
  std::vector<Index> depth_;
  std::vector<Index> order_;
};

void check_cost(const CostMatrix& cost) {
  require(cost.entries.rows() >= 1 && cost.entries.cols() >= 1,
          "cost matrix must be non-empty");
  require(cost.entries.allFinite(), "cost matrix has non-finite entries");
  require(cost.entries.minCoeff() >= 0.0, "cost matrix has negative entries");
}

double log_sum_exp(const Eigen::Ref<const Vector>& x) {
  const double top = x.maxCoeff();
  if (!std::isfinite(top)) return top;
  return top + std::log((x.array() - top).exp().sum());
}

// Rounds a nonnegative matrix onto the polytope with the given marginals
// (Altschuler, Weed and Rigollet's rounding step).
Matrix round_to_marginals(Matrix p, const Vector& r, const Vector& c) {
  for (Index i = 0; i < p.rows(); ++i) {
    const double s = p.row(i).sum();
    if (s > r(i)) p.row(i) *= r(i) / s;
  }
  for (Index j = 0; j < p.cols(); ++j) {
    const double s = p.col(j).sum();
    if (s > c(j)) p.col(j) *= c(j) / s;
  }
  // Scaling leaves sums within an ulp of the target; a negative residual
  // from that rounding would put negative mass into the plan.
  const Vector err_r = (r - p.rowwise().sum()).cwiseMax(0.0);
  const Vector err_c = (c - p.colwise().sum().transpose()).cwiseMax(0.0);
  const double mass = err_r.sum();
  if (mass > 0.0) p += err_r * err_c.transpose() / mass;
  return p;
}

}  // namespace

Dataset joint_encode(const Matrix& features, const Vector& labels,
                     double label_weight) {
  require(features.rows() >= 1, "joint_encode needs at least one sample");
  require(features.rows() == labels.size(),
          "joint_encode: " + std::to_string(features.rows()) +
              " feature rows but " + std::to_string(labels.size()) + " labels");
  require(label_weight > 0.0, "joint_encode: label_weight must be positive");
  Dataset out;
  out.rows.resize(features.rows(), features.cols() + 1);
  out.rows.leftCols(features.cols()) = features;
  out.rows.col(features.cols()) = label_weight * labels;
  return out;
}

CostMatrix ground_cost(const Dataset& a, const Dataset& b) {
  require(a.dim() == b.dim(), "ground_cost: dimension mismatch (" +
                                  std::to_string(a.dim()) + " vs " +
                                  std::to_string(b.dim()) + ")");
  CostMatrix cost;
  cost.entries.resize(a.size(), b.size());
  for (Index k = 0; k < b.size(); ++k)
    for (Index j = 0; j < a.size(); ++j)
      cost.entries(j, k) = (a.rows.row(j) - b.rows.row(k)).norm();
  return cost;
}

TransportPlan solve_ot_exact(const CostMatrix& cost) {
  check_cost(cost);
  TransportPlan plan;
  plan.entries = TransportationSimplex(cost.entries).solve();
  plan.objective = plan.entries.cwiseProduct(cost.entries).sum();
  return plan;
}

SinkhornResult solve_ot_sinkhorn(const CostMatrix& cost, double reg,
                                 int max_iter) {
  check_cost(cost);
  require(reg > 0.0, "solve_ot_sinkhorn: reg must be positive");
  const Matrix& c = cost.entries;
  const Index m = c.rows(), n = c.cols();
  const Vector a = Vector::Constant(m, 1.0 / static_cast<double>(m));
  const Vector b = Vector::Constant(n, 1.0 / static_cast<double>(n));
  const double log_a = std::log(a(0)), log_b = std::log(b(0));

  Vector f = Vector::Zero(m), g = Vector::Zero(n);
  SinkhornResult result;
  Vector scratch_m(m), scratch_n(n);
  for (int it = 1; it <= max_iter; ++it) {
    for (Index i = 0; i < m; ++i) {
      scratch_n = (g - c.row(i).transpose()) / reg;
      f(i) = reg * (log_a - log_sum_exp(scratch_n));
    }
    for (Index j = 0; j < n; ++j) {
      scratch_m = (f - c.col(j)) / reg;
      g(j) = reg * (log_b - log_sum_exp(scratch_m));
    }
    result.iterations = it;
    double violation = 0.0;
    for (Index i = 0; i < m; ++i) {
      scratch_n = (f(i) + g.array() - c.row(i).transpose().array()) / reg;
      violation += std::abs(scratch_n.array().exp().sum() - a(i));
    }
    if (violation <= 1e-10) {
      result.converged = true;
      break;
    }
  }
  Matrix p(m, n);
  for (Index j = 0; j < n; ++j)
    p.col(j) = ((f.array() + g(j) - c.col(j).array()) / reg).exp();
  result.plan.entries = round_to_marginals(std::move(p), a, b);
  result.plan.objective = result.plan.entries.cwiseProduct(c).sum();
  return result;
}

double wasserstein1(const Dataset& a, const Dataset& b) {
  return solve_ot_exact(ground_cost(a, b)).objective;
}

Matrix barycentric_map(const TransportPlan& plan, const Dataset& client) {
  require(plan.entries.cols() == client.size(),
          "barycentric_map: plan has " + std::to_string(plan.entries.cols()) +
              " columns but client has " + std::to_string(client.size()) +
              " rows");
  return static_cast<double>(plan.entries.rows()) * (plan.entries * client.rows);
}

Embedding embed(const Matrix& m, const Dataset& reference) {
  require(m.rows() == reference.size() && m.cols() == reference.dim(),
          "embed: map and reference shapes differ");
  return {(m - reference.rows) / std::sqrt(static_cast<double>(m.rows()))};
}

DissimilarityMatrix dissimilarity_matrix(std::span<const Embedding> embeddings) {
  const Index n = static_cast<Index>(embeddings.size());
  DissimilarityMatrix out{Matrix::Zero(n, n)};
  for (Index i = 0; i < n; ++i) {
    require(embeddings[i].phi.rows() == embeddings[0].phi.rows() &&
                embeddings[i].phi.cols() == embeddings[0].phi.cols(),
            "dissimilarity_matrix: embedding " + std::to_string(i) +
                " has a different shape");
  }
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) {
      const double dij = (embeddings[i].phi - embeddings[j].phi).cwiseAbs().sum();
      out.d(i, j) = dij;
      out.d(j, i) = dij;
    }
  }
  return out;
}

double wasserstein1_1d_oracle(std::span<const double> a,
                              std::span<const double> b) {
  require(a.size() == b.size() && !a.empty(),
          "wasserstein1_1d_oracle needs two non-empty samples of equal size");
  std::vector<double> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  double total = 0.0;
  for (std::size_t k = 0; k < sa.size(); ++k) total += std::abs(sa[k] - sb[k]);
  return total / static_cast<double>(sa.size());
}

Dataset make_reference(std::span<const Dataset> clients, Index n_ref,
                       std::uint64_t seed) {
  require(!clients.empty(), "make_reference needs at least one client");
  require(n_ref >= 1, "make_reference: n_ref must be positive");
  const Index dim = clients[0].dim();
  Index total = 0;
  Vector sum = Vector::Zero(dim), sum_sq = Vector::Zero(dim);
  for (const Dataset& c : clients) {
    require(c.dim() == dim, "make_reference: clients differ in dimension");
    total += c.size();
    sum += c.rows.colwise().sum().transpose();
  }
  const Vector mean = sum / static_cast<double>(total);
  for (const Dataset& c : clients)
    sum_sq += (c.rows.rowwise() - mean.transpose()).array().square().matrix()
                  .colwise().sum().transpose();
  Vector sd = (sum_sq / static_cast<double>(std::max<Index>(total - 1, 1)))
                  .cwiseSqrt();
  for (Index k = 0; k < dim; ++k)
    if (!(sd(k) > 0.0)) sd(k) = 1.0;

  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Dataset ref{Matrix(n_ref, dim)};
  for (Index j = 0; j < n_ref; ++j)
    for (Index k = 0; k < dim; ++k) ref.rows(j, k) = mean(k) + sd(k) * normal(rng);
  return ref;
}

Embedding client_embedding(const Dataset& client, const Dataset& reference,
                           const EmbeddingOptions& options) {
  const CostMatrix cost = ground_cost(reference, client);
  TransportPlan plan;
  if (options.solver == Solver::exact) {
    plan = solve_ot_exact(cost);
  } else {
    const double scale = std::max(cost.entries.mean(), 1e-300);
    plan = solve_ot_sinkhorn(cost, options.sinkhorn_reg * scale,
                             options.sinkhorn_max_iter)
               .plan;
  }
  return embed(barycentric_map(plan, client), reference);
}

}  // namespace karula::ot
