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


// Reference implementations the tests compare the library against. None of
// them call into the code under test.

#ifndef KARULA_TESTS_ORACLES_HPP_
#define KARULA_TESTS_ORACLES_HPP_

#include <algorithm>
#include <cmath>
#include <random>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace karula::testing {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// W1 between uniform measures on the line: integral over u in (0,1) of
// |F_a^-1(u) - F_b^-1(u)|, evaluated on the merged breakpoints.
inline double w1_sorted(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double u = 0.0, total = 0.0;
  while (i < a.size() && j < b.size()) {
    const double next_a = static_cast<double>(i + 1) / na, next_b = static_cast<double>(j + 1) / nb;
    const double next = std::min(next_a, next_b);
    total += (next - u) * std::abs(a[i] - b[j]);
    u = next;
    if (next_a <= next) ++i;
    if (next_b <= next) ++j;
  }
  return total;
}

// Moves a and b symmetrically toward their midpoint until |a - b| <= r.
inline void pair_ball(Vec& a, Vec& b, double r) {
  const Vec diff = a - b;
  const double dist = diff.norm();
  if (dist <= r) return;
  const Vec mid = 0.5 * (a + b);
  a = mid + (0.5 * r / dist) * diff;
  b = mid - (0.5 * r / dist) * diff;
}

// Euclidean projection of the rows of v onto {|x_i - x_j| <= radius(i,j)}
// by consensus ADMM with one copy of each row per edge.
inline Mat admm_project(const Mat& v, const Mat& radius, int iterations = 200000, double rho = 1.0) {
  const Eigen::Index n = v.rows(), p = v.cols();
  std::vector<std::pair<Eigen::Index, Eigen::Index>> edges;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) edges.emplace_back(i, j);
  const std::size_t m = edges.size();
  std::vector<Vec> zi(m, Vec::Zero(p)), zj(m, Vec::Zero(p)), ui(m, Vec::Zero(p)), uj(m, Vec::Zero(p));
  for (std::size_t e = 0; e < m; ++e) {
    zi[e] = v.row(edges[e].first).transpose();
    zj[e] = v.row(edges[e].second).transpose();
  }
  Mat x = v;
  for (int it = 0; it < iterations; ++it) {
    Mat acc = v;
    Vec deg = Vec::Ones(n);
    for (std::size_t e = 0; e < m; ++e) {
      acc.row(edges[e].first) += rho * (zi[e] - ui[e]).transpose();
      acc.row(edges[e].second) += rho * (zj[e] - uj[e]).transpose();
      deg(edges[e].first) += rho;
      deg(edges[e].second) += rho;
    }
    const Mat next = acc.array().colwise() / deg.array();
    double primal = 0.0, dual = 0.0;
    for (std::size_t e = 0; e < m; ++e) {
      const auto [i, j] = edges[e];
      Vec a = next.row(i).transpose() + ui[e], b = next.row(j).transpose() + uj[e];
      pair_ball(a, b, radius(i, j));
      dual += (a - zi[e]).squaredNorm() + (b - zj[e]).squaredNorm();
      zi[e] = a;
      zj[e] = b;
      ui[e] += next.row(i).transpose() - zi[e];
      uj[e] += next.row(j).transpose() - zj[e];
      primal += (next.row(i).transpose() - zi[e]).squaredNorm() + (next.row(j).transpose() - zj[e]).squaredNorm();
    }
    x = next;
    if (it > 100 && primal < 1e-26 && dual < 1e-26) break;
  }
  return x;
}

// Gradient descent on F(theta) = (1/n) sum_i w_i * ridge_i(theta), with
// ridge_i = (1/2N_i)|y_i - X_i theta|^2 + (lambda/2)|theta|^2.
struct RidgeClient {
  Mat x;
  Vec y;
  double weight = 1.0;
};

inline Vec ridge_grad(const RidgeClient& c, const Vec& theta, double lambda) {
  const double n = static_cast<double>(c.x.rows());
  return c.weight * (c.x.transpose() * (c.x * theta - c.y) / n + lambda * theta);
}

inline Vec centralized_gd(const std::vector<RidgeClient>& cs, double lambda, double step, int rounds) {
  Vec theta = Vec::Zero(cs.front().x.cols());
  for (int k = 0; k < rounds; ++k) {
    Vec g = Vec::Zero(theta.size());
    for (const auto& c : cs) g += ridge_grad(c, theta, lambda);
    theta -= step * g / static_cast<double>(cs.size());
  }
  return theta;
}

inline Mat independent_gd(const std::vector<RidgeClient>& cs, double lambda, double step, int rounds) {
  Mat out(static_cast<Eigen::Index>(cs.size()), cs.front().x.cols());
  for (std::size_t i = 0; i < cs.size(); ++i) {
    Vec theta = Vec::Zero(cs[i].x.cols());
    for (int k = 0; k < rounds; ++k) theta -= step * ridge_grad(cs[i], theta, lambda);
    out.row(static_cast<Eigen::Index>(i)) = theta.transpose();
  }
  return out;
}

inline Mat pairwise_cost(const Mat& a, const Mat& b) {
  Mat c(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j) c(i, j) = (a.row(i) - b.row(j)).norm();
  return c;
}

inline Mat random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = g(rng);
  return m;
}

}  // namespace karula::testing

#endif  // KARULA_TESTS_ORACLES_HPP_
