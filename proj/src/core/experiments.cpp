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

#include "core/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <tuple>

#include "core/geometry.hpp"
#include "core/io.hpp"
#include "core/rng.hpp"

namespace karula::experiments {
namespace {

std::vector<double> average_ranks(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

std::vector<double> upper_triangle(const Matrix& m) {
  std::vector<double> out;
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = i + 1; j < m.cols(); ++j) out.push_back(m(i, j));
  return out;
}

double validation_loss(const Vector& theta, const clients::ClientData& val) {
  return 0.5 * (val.y - val.x * theta).squaredNorm() / static_cast<double>(val.size());
}

}  // namespace

EstimationError estimation_error(const ModelStack& models, const ModelStack& truth) {
  require(models.rows() == truth.rows() && models.cols() == truth.cols(),
          "estimation_error: models and truth differ in shape");
  require(models.rows() >= 1, "estimation_error: no clients");
  EstimationError out;
  out.per_client = (models - truth).rowwise().squaredNorm();
  const std::vector<double> values(out.per_client.data(), out.per_client.data() + out.per_client.size());
  std::tie(out.mean, out.se) = mean_and_se(values);
  out.sum = out.per_client.sum();
  return out;
}

R2Score r2_score(const ModelStack& models, std::span<const clients::ClientData> tests) {
  require(!tests.empty() && models.rows() == static_cast<Index>(tests.size()),
          "r2_score: need one non-empty test set per model");
  R2Score out;
  out.per_client = Vector::Constant(models.rows(), std::numeric_limits<double>::quiet_NaN());
  double weighted = 0.0, weight = 0.0;
  for (Index i = 0; i < models.rows(); ++i) {
    const auto& test = tests[static_cast<std::size_t>(i)];
    require(test.size() >= 1, "r2_score: empty test set");
    const double mean = test.y.mean();
    const double ss_tot = (test.y.array() - mean).square().sum();
    if (!(ss_tot > 0.0)) {
      out.excluded.push_back(i);
      continue;
    }
    const double ss_res = (test.y - test.x * models.row(i).transpose()).squaredNorm();
    out.per_client(i) = 1.0 - ss_res / ss_tot;
    weighted += static_cast<double>(test.size()) * out.per_client(i);
    weight += static_cast<double>(test.size());
  }
  out.value = weight > 0.0 ? weighted / weight : std::numeric_limits<double>::quiet_NaN();
  return out;
}

std::pair<double, double> mean_and_se(std::span<const double> values) {
  if (values.empty()) return {std::numeric_limits<double>::quiet_NaN(), 0.0};
  const double n = static_cast<double>(values.size());
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= n;
  if (values.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / (n - 1.0) / n)};
}

std::vector<double> default_t_grid() {
  std::vector<double> grid{0.0};
  for (int a = -3; a <= 3; ++a) grid.push_back(std::pow(10.0, a));
  return grid;
}

CvResult cross_validate_t(std::span<const clients::ClientData> train,
                          const ot::DissimilarityMatrix& d, std::span<const double> t_grid,
                          int folds, const server::AlgoConfig& cfg, double lambda,
                          std::uint64_t seed) {
  require(!t_grid.empty(), "cross_validate_t: empty t grid");
  require(folds >= 2, "cross_validate_t: need at least two folds");
  const Index n = static_cast<Index>(train.size());
  require(d.size() == n, "cross_validate_t: dissimilarity size differs from client count");

  std::vector<double> grid(t_grid.begin(), t_grid.end());
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

  // Weights follow the full local sample sizes in every fold.
  const std::vector<clients::RidgeObjective> objectives = clients::sample_size_objectives(train, lambda);
  std::vector<std::vector<clients::Fold>> client_folds(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    if (train[i].size() < folds) continue;
    Rng rng = make_rng(seed, Stream::cv, {static_cast<std::uint64_t>(i)});
    client_folds[i] = clients::kfold_split(train[i].size(), folds, rng);
  }

  CvResult result;
  for (double t : grid) result.table.push_back({t, 0.0, {}});
  for (int f = 0; f < folds; ++f) {
    std::vector<clients::ClientData> fold_train;
    std::vector<clients::ClientData> fold_val(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
      if (client_folds[i].empty()) {
        fold_train.push_back(train[i]);
        continue;
      }
      const auto& fold = client_folds[i][static_cast<std::size_t>(f)];
      fold_train.push_back(clients::subset(train[i], fold.train));
      fold_val[i] = clients::subset(train[i], fold.validation);
    }
    const server::ClientPool pool(std::move(fold_train), objectives, cfg.seed, 0);
    for (auto& row : result.table) {
      const geometry::FeasibleSet k(row.t, d);
      server::AlgoConfig run_cfg = cfg;
      run_cfg.t = row.t;
      run_cfg.diag_every = 0;
      run_cfg.log_objective = false;
      const server::StrategyResult run = server::run_strategy(server::Strategy::karula, pool, run_cfg, &k);
      double total = 0.0;
      Index counted = 0;
      for (Index i = 0; i < n; ++i) {
        if (client_folds[i].empty()) continue;
        total += validation_loss(run.models.row(i).transpose(), fold_val[i]);
        ++counted;
      }
      row.fold_scores.push_back(counted > 0 ? total / static_cast<double>(counted) : 0.0);
    }
  }
  double best = std::numeric_limits<double>::infinity();
  for (auto& row : result.table) {
    row.score = std::accumulate(row.fold_scores.begin(), row.fold_scores.end(), 0.0) /
                static_cast<double>(row.fold_scores.size());
    if (row.score < best) {
      best = row.score;
      result.chosen_t = row.t;
    }
  }
  return result;
}

double ridge_growth_constant(const clients::ClientData& data, double lambda) {
  const Matrix h = data.x.transpose() * data.x / static_cast<double>(data.size());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(h, Eigen::EigenvaluesOnly);
  return lambda + std::max(0.0, eig.eigenvalues().minCoeff());
}

double data_lipschitz_constant(std::span<const clients::ClientData> datasets, double box,
                               double label_weight) {
  require(box >= 0.0 && label_weight > 0.0, "data_lipschitz_constant: bad box or label weight");
  double worst_residual = 0.0;
  Index p = 0;
  for (const auto& data : datasets) {
    p = data.dim();
    for (Index k = 0; k < data.size(); ++k)
      worst_residual = std::max(worst_residual, std::abs(data.y(k)) + box * data.x.row(k).lpNorm<1>());
  }
  // The gradient of (1/2)(y - x'theta)^2 in (x, w*y) is
  // r * (-theta, 1/w); its norm is largest at a vertex of the box.
  const double direction = std::sqrt(static_cast<double>(p) * box * box + 1.0 / (label_weight * label_weight));
  return worst_residual * direction;
}

Prop1Report check_prop1(const clients::ClientData& a, const clients::ClientData& b, double lambda,
                        double box, double label_weight) {
  require(lambda > 0.0, "check_prop1: lambda must be positive");
  const clients::RidgeObjective obj{lambda, 1.0};
  const Vector ta = clients::ridge_exact_solve(a, obj);
  const Vector tb = clients::ridge_exact_solve(b, obj);
  Prop1Report r;
  r.box = std::max({box, ta.lpNorm<Eigen::Infinity>(), tb.lpNorm<Eigen::Infinity>()});
  r.gamma = std::min(ridge_growth_constant(a, lambda), ridge_growth_constant(b, lambda));
  const clients::ClientData both[] = {a, b};
  r.l_x = data_lipschitz_constant(both, r.box, label_weight);
  r.w1 = ot::wasserstein1(ot::joint_encode(a.x, a.y, label_weight), ot::joint_encode(b.x, b.y, label_weight));
  r.lhs = (ta - tb).squaredNorm();
  r.rhs = 2.0 * r.l_x * r.w1 / r.gamma;
  r.holds = r.lhs <= r.rhs * (1.0 + 1e-12) + 1e-12;
  return r;
}

double estimate_oracle_mse(const server::ClientPool& pool, const ModelStack& theta, int trials,
                           std::uint64_t seed) {
  if (pool.batch_size() == 0) return 0.0;
  double worst = 0.0;
  for (Index i = 0; i < pool.size(); ++i) {
    const Vector th = theta.row(i).transpose();
    const Vector full = pool.full_gradient(i, th).gradient;
    double total = 0.0;
    for (int k = 0; k < trials; ++k) {
      Rng rng = make_rng(seed, Stream::batches, {static_cast<std::uint64_t>(i), 0xfeedULL, static_cast<std::uint64_t>(k)});
      const Vector g = clients::ridge_stochastic_gradient(th, pool.data()[i], pool.objectives()[i], i,
                                                          pool.batch_size(), rng).gradient;
      total += (g - full).squaredNorm();
    }
    worst = std::max(worst, total / trials);
  }
  return worst;
}

AnalysisConstants analysis_constants(const server::ClientPool& pool, Index participation, double delta,
                                     double box, double label_weight, int oracle_trials) {
  AnalysisConstants c;
  c.L = pool.smoothness();
  c.gamma = std::numeric_limits<double>::infinity();
  for (Index i = 0; i < pool.size(); ++i)
    c.gamma = std::min(c.gamma, ridge_growth_constant(pool.data()[i], pool.objectives()[i].lambda));
  c.l_x = data_lipschitz_constant(pool.data(), box, label_weight);
  c.sigma_sq_hat = estimate_oracle_mse(pool, ModelStack::Zero(pool.size(), pool.dim()), oracle_trials, 0);
  c.delta = delta;
  const double s = static_cast<double>(participation);
  c.epsilon = 4.0 * c.sigma_sq_hat * (s + 1.0) / s + 2.0 * delta;
  return c;
}

Theorem1Report check_theorem1(std::span<const server::RoundLog> trace, const AnalysisConstants& constants,
                              Index n, Index s, double eta) {
  Theorem1Report rep;
  bool any_diag = false;
  for (const auto& log : trace) {
    rep.delta_max = std::max(rep.delta_max, log.delta_hat);
    any_diag = any_diag || log.grad_mapping_sq.has_value();
  }
  if (trace.empty() || !any_diag) throw Error("check_theorem1: trace has no gradient-mapping diagnostics");
  rep.f0 = trace.front().objective;
  rep.preconditions_met = s >= 2 && s <= n - 1 && std::abs(eta * 8.0 * constants.L / 3.0 - 1.0) < 1e-9;
  const double sig = static_cast<double>(s);
  rep.epsilon = 4.0 * constants.sigma_sq_hat * (sig + 1.0) / sig + 2.0 * rep.delta_max;
  const double l_block = constants.L / static_cast<double>(n);

  double best = std::numeric_limits<double>::infinity();
  rep.holds = rep.holds_blockwise = true;
  std::vector<double> log_k, log_g;
  for (const auto& log : trace) {
    if (!log.grad_mapping_sq) continue;
    best = std::min(best, *log.grad_mapping_sq);
    BoundRow row;
    row.k = log.round + 1;
    row.min_so_far = best;
    const double kk = static_cast<double>(row.k);
    row.rhs = (8.0 * constants.L / 3.0) * (rep.f0 / kk + rep.epsilon);
    row.rhs_blockwise = (8.0 * l_block / 3.0) * (rep.f0 / kk + rep.epsilon);
    row.holds = row.min_so_far <= row.rhs;
    rep.holds = rep.holds && row.holds;
    rep.holds_blockwise = rep.holds_blockwise && row.min_so_far <= row.rhs_blockwise;
    if (row.k >= 10 && best > 0.0) {
      log_k.push_back(std::log(kk));
      log_g.push_back(std::log(best));
    }
    rep.rows.push_back(row);
  }
  if (log_k.size() >= 2) {
    const double mk = std::accumulate(log_k.begin(), log_k.end(), 0.0) / static_cast<double>(log_k.size());
    const double mg = std::accumulate(log_g.begin(), log_g.end(), 0.0) / static_cast<double>(log_g.size());
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < log_k.size(); ++i) {
      sxy += (log_k[i] - mk) * (log_g[i] - mg);
      sxx += (log_k[i] - mk) * (log_k[i] - mk);
    }
    rep.decay_exponent = sxx > 0.0 ? sxy / sxx : 0.0;
  }
  return rep;
}

double spearman_upper(const Matrix& a, const Matrix& b) {
  require(a.rows() == a.cols() && b.rows() == b.cols() && a.rows() == b.rows(),
          "spearman_upper: need square matrices of equal size");
  const std::vector<double> ra = average_ranks(upper_triangle(a));
  const std::vector<double> rb = average_ranks(upper_triangle(b));
  require(ra.size() >= 2, "spearman_upper: need at least three clients");
  const double n = static_cast<double>(ra.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

Matrix pairwise_sq_distances(const ModelStack& models) {
  const Index n = models.rows();
  Matrix out = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j) out(i, j) = out(j, i) = (models.row(i) - models.row(j)).squaredNorm();
  return out;
}

std::map<std::string, double> heatmap_export(const std::vector<std::pair<std::string, Matrix>>& matrices,
                                             const std::string& truth_name, const std::filesystem::path& dir,
                                             const std::string& header) {
  const Matrix* truth = nullptr;
  for (const auto& [name, m] : matrices) {
    require(m.rows() == m.cols(), "heatmap_export: matrix '" + name + "' is not square");
    require(m.rows() == matrices.front().second.rows(), "heatmap_export: matrices differ in size");
    if (name == truth_name) truth = &m;
  }
  require(truth != nullptr, "heatmap_export: no matrix named '" + truth_name + "'");
  std::map<std::string, double> correlations;
  for (const auto& [name, m] : matrices) {
    io::write_matrix_csv(dir / ("heatmap_" + name + ".csv"), m, header);
    correlations[name] = spearman_upper(*truth, m);
  }
  return correlations;
}

}  // namespace karula::experiments
