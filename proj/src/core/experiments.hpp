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

#ifndef KARULA_CORE_EXPERIMENTS_HPP_
#define KARULA_CORE_EXPERIMENTS_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "core/clients.hpp"
#include "core/common.hpp"
#include "core/otcore.hpp"
#include "core/server.hpp"

namespace karula::experiments {

struct EstimationError {
  double mean = 0.0;  // (1/n) sum_i |theta_hat_i - theta*_i|^2
  double sum = 0.0;
  double se = 0.0;    // across clients
  Vector per_client;
};

EstimationError estimation_error(const ModelStack& models, const ModelStack& truth);

struct R2Score {
  double value = 0.0;  // sample-size weighted over the included clients
  Vector per_client;   // NaN where excluded
  std::vector<Index> excluded;
};

/// Clients whose test responses have zero variance are excluded.
R2Score r2_score(const ModelStack& models, std::span<const clients::ClientData> tests);

/// Mean and standard error of the mean.
std::pair<double, double> mean_and_se(std::span<const double> values);

struct CvRow {
  double t = 0.0;
  double score = 0.0;
  std::vector<double> fold_scores;
};

struct CvResult {
  double chosen_t = 0.0;
  std::vector<CvRow> table;  // in ascending t
};

/// {0} u {10^a : a = -3..3}.
std::vector<double> default_t_grid();

/// k-fold selection of t for Karula. The dissimilarity matrix comes from the
/// full training data and is shared by every fold. Scores are the validation
/// loss (1/2N_val)|y - X theta|^2 averaged over clients, then folds; the
/// smallest t wins ties.
CvResult cross_validate_t(std::span<const clients::ClientData> train,
                          const ot::DissimilarityMatrix& d, std::span<const double> t_grid,
                          int folds, const server::AlgoConfig& cfg, double lambda,
                          std::uint64_t seed);

struct Prop1Report {
  double lhs = 0.0;    // |theta*_a - theta*_b|^2
  double rhs = 0.0;    // (2 L_X / gamma) W1
  double gamma = 0.0;
  double l_x = 0.0;
  double w1 = 0.0;
  double box = 0.0;    // half-width of the parameter box used for L_X
  bool holds = false;
};

/// Quadratic functional growth constant of a ridge client:
/// lambda + sigma_min(X'X)/N.
double ridge_growth_constant(const clients::ClientData& data, double lambda);

/// Data-Lipschitz constant of the ridge loss in the joint (x, w*y) metric,
/// exact over the parameter box |theta|_inf <= box for the convex hull of
/// the given samples.
double data_lipschitz_constant(std::span<const clients::ClientData> datasets, double box,
                               double label_weight = 1.0);

Prop1Report check_prop1(const clients::ClientData& a, const clients::ClientData& b,
                        double lambda, double box = 10.0, double label_weight = 1.0);

struct AnalysisConstants {
  double L = 0.0;
  double sigma_sq_hat = 0.0;
  double gamma = 0.0;
  double l_x = 0.0;
  double delta = 0.0;
  double epsilon = 0.0;
};

/// max_i E|G_i(theta_i) - alpha_i grad f_i(theta_i)|^2 estimated over
/// `trials` oracle calls each; 0 when the pool returns full gradients.
double estimate_oracle_mse(const server::ClientPool& pool, const ModelStack& theta,
                           int trials, std::uint64_t seed);

AnalysisConstants analysis_constants(const server::ClientPool& pool, Index participation,
                                     double delta, double box = 10.0,
                                     double label_weight = 1.0, int oracle_trials = 200);

struct BoundRow {
  int k = 0;                 // K, the number of iterates the minimum ranges over
  double min_so_far = 0.0;   // min over logged k < K of |G_eta(theta^k)|^2
  double rhs = 0.0;          // (8L/3)((f0 - 0)/K + eps)
  double rhs_blockwise = 0.0;  // same with L/n
  bool holds = false;
};

struct Theorem1Report {
  std::vector<BoundRow> rows;
  bool holds = false;
  bool holds_blockwise = false;
  double f0 = 0.0;
  double delta_max = 0.0;
  double epsilon = 0.0;
  double decay_exponent = 0.0;  // slope of log min_so_far against log K
  bool preconditions_met = false;
};

/// Evaluates the stationarity bound along a trace with diagnostics. The
/// optimal value is lower-bounded by 0 (ridge losses are nonnegative).
Theorem1Report check_theorem1(std::span<const server::RoundLog> trace,
                              const AnalysisConstants& constants, Index n, Index s,
                              double eta);

/// Spearman correlation of the strict upper triangles (average ranks on ties).
double spearman_upper(const Matrix& a, const Matrix& b);

Matrix pairwise_sq_distances(const ModelStack& models);

/// Writes heatmap_<name>.csv for each matrix and returns each matrix's
/// Spearman correlation with `truth_name`.
std::map<std::string, double> heatmap_export(
    const std::vector<std::pair<std::string, Matrix>>& matrices, const std::string& truth_name,
    const std::filesystem::path& dir, const std::string& header = "");

}  // namespace karula::experiments

#endif  // KARULA_CORE_EXPERIMENTS_HPP_
