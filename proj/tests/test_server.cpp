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

#include <algorithm>
#include <random>
#include <set>
#include <vector>

#include "core/server.hpp"
#include "oracles.hpp"

using namespace karula;
using karula::testing::random_matrix;

namespace {

struct Fixture {
  std::vector<clients::ClientData> data;
  std::vector<testing::RidgeClient> plain;
  server::ClientPool pool;
};

Fixture make_fixture(Index n, Index d, double lambda, std::uint64_t seed, Index batch = 0) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> size(5, 15);
  std::vector<clients::ClientData> data;
  for (Index i = 0; i < n; ++i) {
    const Index m = size(rng);
    clients::ClientData c{random_matrix(m, d, rng), Vector()};
    c.y = c.x * Vector::Constant(d, 1.0 + 0.2 * static_cast<double>(i)) + random_matrix(m, 1, rng).col(0);
    data.push_back(std::move(c));
  }
  auto objs = clients::sample_size_objectives(data, lambda);
  std::vector<testing::RidgeClient> plain;
  for (Index i = 0; i < n; ++i) plain.push_back({data[i].x, data[i].y, objs[i].alpha});
  server::ClientPool pool(data, objs, seed, batch);
  return {std::move(data), std::move(plain), std::move(pool)};
}

ot::DissimilarityMatrix uniform_dissimilarity(Index n) {
  return {Matrix::Ones(n, n) - Matrix::Identity(n, n)};
}

}  // namespace

TEST_CASE("t = 0 with full participation is centralized gradient descent") {
  const Fixture f = make_fixture(5, 3, 0.1, 41);
  const geometry::FeasibleSet k(0.0, uniform_dissimilarity(5));
  server::AlgoConfig cfg;
  cfg.participation = 5;
  cfg.rounds = 100;
  cfg.proj_tol = 1e-12;
  const auto r = server::run_strategy(server::Strategy::karula, f.pool, cfg, &k);
  // The projected step on the stacked objective moves the shared model by
  // eta/n times the gradient of the average weighted loss.
  const Vector central = testing::centralized_gd(f.plain, 0.1, r.eta / 5.0, 100);
  for (Index i = 0; i < 5; ++i) CHECK((r.models.row(i).transpose() - central).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("huge t with full participation is independent gradient descent") {
  const Fixture f = make_fixture(4, 3, 0.1, 42);
  const geometry::FeasibleSet k(1e12, uniform_dissimilarity(4));
  server::AlgoConfig cfg;
  cfg.participation = 4;
  cfg.rounds = 100;
  const auto r = server::run_strategy(server::Strategy::karula, f.pool, cfg, &k);
  const Matrix local = testing::independent_gd(f.plain, 0.1, r.eta / 4.0, 100);
  CHECK((r.models - local).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("variance-reduced estimator is unbiased and obeys the variance bound") {
  const Index n = 6, s = 2;
  const Fixture f = make_fixture(n, 3, 0.1, 43);
  std::mt19937_64 rng(7);
  const Matrix theta = random_matrix(n, 3, rng), phi = random_matrix(n, 3, rng);
  const Matrix truth = f.pool.stacked_gradient(theta);
  const Matrix table = f.pool.stacked_gradient(phi);
  const Matrix direction = random_matrix(n, 3, rng);
  Rng sampler(9);
  const int trials = 10000;
  double sum = 0.0, sum_sq = 0.0, err = 0.0, err_sq = 0.0;
  for (int t = 0; t < trials; ++t) {
    server::VRState state{phi, table, Matrix()};
    const auto sampled = server::sample_participants(n, s, sampler);
    std::vector<clients::OracleReply> replies;
    for (Index i : sampled) replies.push_back(f.pool.full_gradient(i, theta.row(i).transpose()));
    const Matrix nu = server::vr_update(state, theta, sampled, replies);
    const double proj = (nu - truth).cwiseProduct(direction).sum();
    sum += proj;
    sum_sq += proj * proj;
    const double e = (nu - truth).squaredNorm();
    err += e;
    err_sq += e * e;
  }
  const double mean = sum / trials, se = std::sqrt((sum_sq / trials - mean * mean) / trials);
  CHECK(std::abs(mean) <= 3.0 * se);
  const double mse = err / trials, mse_se = std::sqrt((err_sq / trials - mse * mse) / trials);
  const double l = f.pool.smoothness();
  CHECK(mse <= 2.0 * l * l / static_cast<double>(n * s) * (theta - phi).squaredNorm() + 3.0 * mse_se);
}

TEST_CASE("estimator updates the table for participants only") {
  const Index n = 4;
  const Fixture f = make_fixture(n, 2, 0.1, 44);
  const Matrix theta = Matrix::Ones(n, 2);
  server::KarulaStart start = server::karula_init(f.pool);
  const Matrix before = start.state.g;
  const std::vector<Index> sampled{1, 3};
  std::vector<clients::OracleReply> replies{f.pool.full_gradient(3, theta.row(3).transpose()),
                                            f.pool.full_gradient(1, theta.row(1).transpose())};
  server::vr_update(start.state, theta, sampled, replies);
  CHECK(start.state.g.row(0) == before.row(0));
  CHECK(start.state.g.row(2) == before.row(2));
  CHECK(start.state.phi.row(1) == theta.row(1));
  CHECK(start.state.phi.row(0) == Matrix::Zero(1, 2));

  server::VRState copy = start.state;
  std::vector<clients::OracleReply> wrong{replies[0], replies[0]};
  CHECK_THROWS_AS(server::vr_update(copy, theta, sampled, wrong), InvalidArgument);
  std::vector<clients::OracleReply> stranger{replies[0], f.pool.full_gradient(0, theta.row(0).transpose())};
  CHECK_THROWS_AS(server::vr_update(copy, theta, sampled, stranger), InvalidArgument);
  CHECK_THROWS_AS(server::vr_update(copy, theta, std::vector<Index>{1, 3}, std::vector<clients::OracleReply>{replies[0]}),
                  InvalidArgument);
}

TEST_CASE("participant sampling draws distinct clients uniformly") {
  Rng rng(1);
  std::vector<int> counts(9, 0);
  for (int t = 0; t < 9000; ++t) {
    const auto s = server::sample_participants(9, 3, rng);
    REQUIRE(std::set<Index>(s.begin(), s.end()).size() == 3);
    for (Index i : s) ++counts[i];
  }
  for (int c : counts) CHECK(std::abs(c - 3000) < 200);
  CHECK_THROWS_AS(server::sample_participants(3, 4, rng), InvalidArgument);
  CHECK(server::default_participation(30) == 10);
  CHECK(server::default_participation(4) == 2);
}

TEST_CASE("client answers do not depend on query order") {
  const Fixture f = make_fixture(3, 2, 0.1, 45, 2);
  const Vector theta = Vector::Ones(2);
  const auto a = f.pool.query(2, theta, 5);
  f.pool.query(0, theta, 5);
  const auto b = f.pool.query(2, theta, 5);
  CHECK(a.gradient == b.gradient);
  CHECK(a.is_stochastic);
  CHECK(f.pool.query(2, theta, 6).gradient != a.gradient);
}

TEST_CASE("one-step FedAvg with everyone is a gradient step on the weighted sum") {
  const Fixture f = make_fixture(3, 2, 0.1, 46);
  const Vector global = Vector::Constant(2, 0.5);
  const std::vector<Index> all{0, 1, 2};
  const Vector next = server::fedavg_round(global, f.pool, 1, 0.01, all);
  Vector g = Vector::Zero(2);
  for (const auto& c : f.plain) g += testing::ridge_grad(c, global, 0.1);
  CHECK((next - (global - 0.01 * g / 3.0)).norm() < 1e-14);
}

TEST_CASE("IFCA assigns clients to the cluster with the lower loss") {
  const Fixture f = make_fixture(2, 2, 0.0, 47);
  const Vector good = clients::ridge_exact_solve(f.data[0], {1e-12, 1.0});
  const std::vector<Vector> models{Vector::Constant(2, 50.0), good};
  CHECK(server::best_cluster(models, f.pool, 0) == 1);
  const std::vector<Vector> tie{good, good};
  CHECK(server::best_cluster(tie, f.pool, 0) == 0);
}

TEST_CASE("exact local training solves each client's ridge problem") {
  const Fixture f = make_fixture(3, 2, 0.05, 48);
  const Matrix m = server::local_exact(f.pool);
  for (Index i = 0; i < 3; ++i)
    CHECK((m.row(i).transpose() - clients::ridge_exact_solve(f.data[i], {0.05, 1.0})).norm() < 1e-10);
  const Matrix gd = server::local_train(f.pool, 0.0, 5000);
  CHECK((gd - m).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("strategies are deterministic under a fixed seed") {
  const Fixture f = make_fixture(6, 2, 0.1, 49);
  const geometry::FeasibleSet k(0.1, uniform_dissimilarity(6));
  server::AlgoConfig cfg;
  cfg.rounds = 30;
  cfg.seed = 3;
  for (auto s : {server::Strategy::karula, server::Strategy::fedavg, server::Strategy::ifca, server::Strategy::local}) {
    const auto a = server::run_strategy(s, f.pool, cfg, &k);
    const auto b = server::run_strategy(s, f.pool, cfg, &k);
    CHECK(a.models == b.models);
  }
  const auto with_diag = [&] {
    server::AlgoConfig c = cfg;
    c.diag_every = 5;
    return server::run_strategy(server::Strategy::karula, f.pool, c, &k);
  }();
  int logged = 0;
  for (const auto& l : with_diag.logs) logged += l.grad_mapping_sq.has_value();
  CHECK(logged == 6);
  CHECK_THROWS_AS(server::run_strategy(server::Strategy::karula, f.pool, cfg, nullptr), InvalidArgument);
}

TEST_CASE("strategy names round-trip") {
  for (auto s : {server::Strategy::karula, server::Strategy::fedavg, server::Strategy::ifca, server::Strategy::local})
    CHECK(server::parse_strategy(server::to_string(s)) == s);
  CHECK_THROWS(server::parse_strategy("fedprox"));
}
