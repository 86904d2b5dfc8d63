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


#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <vector>

#include "core/experiments.hpp"
#include "core/io.hpp"
#include "oracles.hpp"

using namespace karula;
using karula::testing::random_matrix;

namespace {

clients::ClientData linear_client(Index n, const Vector& theta, double noise, std::mt19937_64& rng) {
  clients::ClientData c{random_matrix(n, theta.size(), rng), Vector()};
  c.y = c.x * theta + noise * random_matrix(n, 1, rng).col(0);
  return c;
}

}  // namespace

TEST_CASE("estimation error averages squared distances over clients") {
  Matrix a(2, 2), b(2, 2);
  a << 0, 0, 1, 1;
  b << 3, 4, 1, 1;
  const auto e = experiments::estimation_error(a, b);
  CHECK(e.mean == doctest::Approx(12.5));
  CHECK(e.sum == doctest::Approx(25.0));
  CHECK(e.per_client(0) == doctest::Approx(25.0));
  CHECK(e.se == doctest::Approx(12.5));
}

TEST_CASE("R2 is one for perfect models and skips constant responses") {
  std::mt19937_64 rng(51);
  const Vector theta = Vector::Constant(3, 2.0);
  std::vector<clients::ClientData> tests{linear_client(10, theta, 0.0, rng)};
  tests.push_back({random_matrix(4, 3, rng), Vector::Constant(4, 1.0)});
  Matrix models(2, 3);
  models.row(0) = theta.transpose();
  models.row(1).setZero();
  const auto r2 = experiments::r2_score(models, tests);
  CHECK(r2.value == doctest::Approx(1.0));
  CHECK(r2.excluded == std::vector<Index>{1});
  CHECK(std::isnan(r2.per_client(1)));
  models.row(0).setZero();
  CHECK(experiments::r2_score(models, tests).value < 1.0);
}

TEST_CASE("mean and standard error") {
  const std::vector<double> v{1, 2, 3, 4};
  const auto [mean, se] = experiments::mean_and_se(v);
  CHECK(mean == doctest::Approx(2.5));
  CHECK(se == doctest::Approx(std::sqrt(1.25 * 4.0 / 3.0 / 4.0)));
  CHECK(experiments::mean_and_se(std::vector<double>{7.0}).second == 0.0);
}

TEST_CASE("default grid is zero plus decades") {
  const auto g = experiments::default_t_grid();
  REQUIRE(g.size() == 8);
  CHECK(g.front() == 0.0);
  CHECK(g[1] == doctest::Approx(1e-3));
  CHECK(g.back() == doctest::Approx(1e3));
}

TEST_CASE("Spearman uses average ranks and the strict upper triangle") {
  Matrix a(3, 3), b(3, 3);
  a << 0, 1, 2, 1, 0, 3, 2, 3, 0;
  b << 9, 10, 20, 10, 9, 30, 20, 30, 9;
  CHECK(experiments::spearman_upper(a, b) == doctest::Approx(1.0));
  b << 0, 30, 20, 30, 0, 10, 20, 10, 0;
  CHECK(experiments::spearman_upper(a, b) == doctest::Approx(-1.0));
  b << 0, 1, 1, 1, 0, 1, 1, 1, 0;
  CHECK(experiments::spearman_upper(a, b) == 0.0);
  Matrix ties(3, 3);
  ties << 0, 1, 1, 1, 0, 2, 1, 2, 0;
  // Ranks (1.5, 1.5, 3) against (1, 2, 3).
  CHECK(experiments::spearman_upper(ties, a) == doctest::Approx(std::sqrt(3.0) / 2.0));
}

TEST_CASE("pairwise squared distances") {
  Matrix m(3, 2);
  m << 0, 0, 3, 4, 0, 1;
  const Matrix d = experiments::pairwise_sq_distances(m);
  CHECK(d(0, 1) == doctest::Approx(25.0));
  CHECK(d(1, 2) == doctest::Approx(18.0));
  CHECK(d(2, 2) == 0.0);
}

TEST_CASE("model-distance bound holds on random two-client problems") {
  std::mt19937_64 rng(52);
  std::uniform_real_distribution<double> lam(0.01, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const Vector ta = random_matrix(2, 1, rng).col(0), tb = random_matrix(2, 1, rng).col(0);
    const auto a = linear_client(12, ta, 0.5, rng), b = linear_client(15, tb, 0.5, rng);
    const auto r = experiments::check_prop1(a, b, lam(rng));
    CHECK(r.holds);
    CHECK(r.gamma > 0.0);
    CHECK(r.w1 > 0.0);
  }
}

TEST_CASE("growth constant is lambda plus the smallest eigenvalue") {
  Matrix x(2, 2);
  x << 2, 0, 0, 1;
  const clients::ClientData c{x, Vector::Zero(2)};
  CHECK(experiments::ridge_growth_constant(c, 0.1) == doctest::Approx(0.1 + 0.5));
}

TEST_CASE("cross-validation picks the grid value with the lowest score") {
  // Two clients drawn from one model favour t = 0; two unrelated models
  // favour a loose constraint.
  std::mt19937_64 rng(53);
  const Vector shared = Vector::Constant(2, 1.0);
  std::vector<clients::ClientData> same{linear_client(10, shared, 1.0, rng), linear_client(10, shared, 1.0, rng),
                                        linear_client(10, shared, 1.0, rng)};
  const ot::DissimilarityMatrix d{Matrix::Ones(3, 3) - Matrix::Identity(3, 3)};
  server::AlgoConfig cfg;
  cfg.rounds = 300;
  cfg.participation = 2;
  const std::vector<double> grid{100.0, 0.0, 100.0};
  const auto cv = experiments::cross_validate_t(same, d, grid, 3, cfg, 1e-3, 1);
  REQUIRE(cv.table.size() == 2);
  CHECK(cv.table[0].t == 0.0);
  CHECK(cv.table[0].fold_scores.size() == 3);

  std::vector<clients::ClientData> apart{linear_client(40, Vector::Constant(2, -5.0), 0.1, rng),
                                         linear_client(40, Vector::Constant(2, 5.0), 0.1, rng),
                                         linear_client(40, Vector::Constant(2, 0.0), 0.1, rng)};
  const auto cv2 = experiments::cross_validate_t(apart, d, grid, 3, cfg, 1e-3, 1);
  CHECK(cv2.chosen_t == 100.0);
  // Same inputs, same choice and scores.
  CHECK(experiments::cross_validate_t(apart, d, grid, 3, cfg, 1e-3, 1).table[1].score == cv2.table[1].score);
}

TEST_CASE("stationarity check on a short full-gradient run") {
  std::mt19937_64 rng(54);
  std::vector<clients::ClientData> data;
  for (int i = 0; i < 6; ++i) data.push_back(linear_client(12, Vector::Constant(2, 0.5 * i), 0.3, rng));
  auto objs = clients::sample_size_objectives(data, 0.01);
  const server::ClientPool pool(data, objs);
  const geometry::FeasibleSet k(0.05, {Matrix::Ones(6, 6) - Matrix::Identity(6, 6)});
  server::AlgoConfig cfg;
  cfg.rounds = 200;
  cfg.participation = 2;
  cfg.diag_every = 5;
  cfg.proj_tol = 1e-8;
  const auto run = server::run_strategy(server::Strategy::karula, pool, cfg, &k);
  const auto constants = experiments::analysis_constants(pool, 2, 0.0);
  CHECK(constants.sigma_sq_hat == 0.0);
  const auto rep = experiments::check_theorem1(run.logs, constants, 6, 2, run.eta);
  CHECK(rep.preconditions_met);
  CHECK(rep.holds);
  CHECK(rep.rows.size() == 40);
  for (std::size_t i = 1; i < rep.rows.size(); ++i) CHECK(rep.rows[i].min_so_far <= rep.rows[i - 1].min_so_far);
  // A different step size voids the precondition but still reports rows.
  CHECK_FALSE(experiments::check_theorem1(run.logs, constants, 6, 2, 2.0 * run.eta).preconditions_met);
  std::vector<server::RoundLog> bare(run.logs.begin(), run.logs.end());
  for (auto& l : bare) l.grad_mapping_sq.reset();
  CHECK_THROWS_AS(experiments::check_theorem1(bare, constants, 6, 2, run.eta), Error);
}

TEST_CASE("oracle noise estimate is zero for full gradients and positive for batches") {
  std::mt19937_64 rng(55);
  std::vector<clients::ClientData> data{linear_client(20, Vector::Ones(2), 1.0, rng),
                                        linear_client(20, Vector::Ones(2), 1.0, rng)};
  const auto objs = clients::sample_size_objectives(data, 0.01);
  const Matrix theta = Matrix::Zero(2, 2);
  CHECK(experiments::estimate_oracle_mse(server::ClientPool(data, objs, 0, 0), theta, 50, 1) == 0.0);
  CHECK(experiments::estimate_oracle_mse(server::ClientPool(data, objs, 0, 4), theta, 50, 1) > 0.0);
}

TEST_CASE("heatmaps are written with Spearman against the truth") {
  const auto dir = std::filesystem::temp_directory_path() / "karula_heatmap_test";
  std::filesystem::remove_all(dir);
  Matrix truth(3, 3), other(3, 3);
  truth << 0, 1, 2, 1, 0, 3, 2, 3, 0;
  other = 2.0 * truth;
  const auto rho = experiments::heatmap_export({{"truth", truth}, {"other", other}}, "truth", dir, "karula test");
  CHECK(rho.at("other") == doctest::Approx(1.0));
  std::string comment;
  const Matrix back = io::read_matrix_csv(dir / "heatmap_other.csv", &comment);
  CHECK(comment == "karula test");
  CHECK((back - other).cwiseAbs().maxCoeff() < 1e-9);
  std::filesystem::remove_all(dir);
}

TEST_CASE("estimation error is permutation-equivariant in client order") {
  std::mt19937_64 rng(56);
  const Matrix models = random_matrix(5, 3, rng), truth = random_matrix(5, 3, rng);
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(5);
  perm.indices() << 3, 0, 4, 1, 2;
  const auto a = experiments::estimation_error(models, truth);
  const auto b = experiments::estimation_error(perm * models, perm * truth);
  CHECK(a.mean == doctest::Approx(b.mean));
  CHECK((perm * a.per_client - b.per_client).norm() < 1e-12);
}

TEST_CASE("heatmap Spearman is one for identical matrices and below one for a row shuffle") {
  std::mt19937_64 rng(57);
  const Matrix m = random_matrix(6, 2, rng);
  const Matrix d = experiments::pairwise_sq_distances(m);
  CHECK(experiments::spearman_upper(d, d) == doctest::Approx(1.0));
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(6);
  perm.indices() << 1, 2, 3, 4, 5, 0;
  const Matrix shuffled = perm * d;
  CHECK(experiments::spearman_upper(d, shuffled) < 1.0);
  const auto dir = std::filesystem::temp_directory_path() / "karula_heatmap_square";
  CHECK_THROWS_AS(experiments::heatmap_export({{"truth", d}, {"wide", Matrix::Zero(6, 5)}}, "truth", dir),
                  InvalidArgument);
  std::filesystem::remove_all(dir);
}
