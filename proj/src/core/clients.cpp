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

#include "core/clients.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace karula::clients {
namespace {

void check_dims(const Vector& theta, const ClientData& data, const char* what) {
  if (theta.size() != data.dim())
    throw InvalidArgument(std::string(what) + ": parameter length " +
                          std::to_string(theta.size()) + " does not match feature dimension " +
                          std::to_string(data.dim()));
  if (data.y.size() != data.size())
    throw InvalidArgument(std::string(what) + ": label count mismatch");
}

}  // namespace

void validate(const SyntheticConfig& cfg) {
  if (cfg.group_means.empty()) throw ConfigError("synthetic: group_means must be non-empty");
  const auto groups = static_cast<Index>(cfg.group_means.size());
  if (cfg.n_clients < 1 || cfg.n_clients % groups != 0)
    throw ConfigError("synthetic: n_clients must be a positive multiple of the group count");
  if (cfg.d < 1) throw ConfigError("synthetic: d must be >= 1");
  if (cfg.n_min < 1 || cfg.n_max < cfg.n_min)
    throw ConfigError("synthetic: need 1 <= n_min <= n_max");
  if (!(cfg.noise_std >= 0.0) || !(cfg.theta_spread >= 0.0) ||
      !(cfg.feature_mean_spread >= 0.0))
    throw ConfigError("synthetic: spreads and noise_std must be nonnegative");
}

double ridge_loss(const Vector& theta, const ClientData& data, const RidgeObjective& obj) {
  check_dims(theta, data, "ridge_loss");
  const Vector residual = data.y - data.x * theta;
  return 0.5 * residual.squaredNorm() / static_cast<double>(data.size()) +
         0.5 * obj.lambda * theta.squaredNorm();
}

OracleReply ridge_gradient(const Vector& theta, const ClientData& data,
                           const RidgeObjective& obj, Index client_id,
                           std::span<const Index> batch) {
  check_dims(theta, data, "ridge_gradient");
  OracleReply reply;
  reply.client_id = client_id;
  if (batch.empty()) {
    const Vector residual = data.x * theta - data.y;
    reply.gradient = data.x.transpose() * residual / static_cast<double>(data.size());
  } else {
    reply.gradient = Vector::Zero(theta.size());
    for (Index b : batch) {
      require(b >= 0 && b < data.size(), "ridge_gradient: batch index out of range");
      reply.gradient += data.x.row(b).transpose() * (data.x.row(b).dot(theta) - data.y(b));
    }
    reply.gradient /= static_cast<double>(batch.size());
    reply.is_stochastic = static_cast<Index>(batch.size()) < data.size();
    reply.batch_size = static_cast<Index>(batch.size());
  }
  reply.gradient = obj.alpha * (reply.gradient + obj.lambda * theta);
  return reply;
}

OracleReply ridge_stochastic_gradient(const Vector& theta, const ClientData& data,
                                      const RidgeObjective& obj, Index client_id,
                                      Index batch_size, Rng& rng) {
  if (batch_size <= 0 || batch_size >= data.size())
    return ridge_gradient(theta, data, obj, client_id);
  std::vector<Index> rows(static_cast<std::size_t>(data.size()));
  std::iota(rows.begin(), rows.end(), Index{0});
  // Partial Fisher-Yates: the first batch_size entries are a uniform subset.
  for (Index k = 0; k < batch_size; ++k) {
    std::uniform_int_distribution<Index> pick(k, data.size() - 1);
    std::swap(rows[k], rows[pick(rng)]);
  }
  rows.resize(static_cast<std::size_t>(batch_size));
  std::sort(rows.begin(), rows.end());
  return ridge_gradient(theta, data, obj, client_id, rows);
}

Vector ridge_exact_solve(const ClientData& data, const RidgeObjective& obj) {
  require(data.size() >= 1, "ridge_exact_solve: empty dataset");
  require(data.y.size() == data.size(), "ridge_exact_solve: label count mismatch");
  const double n = static_cast<double>(data.size());
  Matrix h = data.x.transpose() * data.x / n;
  h.diagonal().array() += obj.lambda;
  const Vector rhs = data.x.transpose() * data.y / n;
  Eigen::LDLT<Matrix> ldlt(h);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
      ldlt.vectorD().minCoeff() <= 1e-14 * std::max(1.0, ldlt.vectorD().maxCoeff()))
    throw NumericalError("ridge_exact_solve: normal equations are singular");
  return ldlt.solve(rhs);
}

double top_eigenvalue(const Matrix& x) {
  const Index d = x.cols();
  const double n = static_cast<double>(x.rows());
  Rng rng(0x6b61726c75ULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector v(d);
  for (Index k = 0; k < d; ++k) v(k) = normal(rng);
  v.normalize();
  double value = 0.0;
  for (int it = 0; it < 10000; ++it) {
    Vector w = x.transpose() * (x * v) / n;
    const double next = w.norm();
    if (next == 0.0) return 0.0;
    v = w / next;
    const bool done = std::abs(next - value) <= 1e-10 * next;
    value = next;
    if (done) break;
  }
  return value;
}

double smoothness_constant(std::span<const ClientData> datasets,
                           std::span<const RidgeObjective> objectives) {
  require(!datasets.empty() && datasets.size() == objectives.size(),
          "smoothness_constant: need one objective per non-empty dataset");
  double l = 0.0;
  for (std::size_t i = 0; i < datasets.size(); ++i)
    l = std::max(l, objectives[i].alpha * (top_eigenvalue(datasets[i].x) + objectives[i].lambda));
  return l;
}

std::vector<RidgeObjective> sample_size_objectives(std::span<const ClientData> datasets,
                                                   double lambda) {
  double mean = 0.0;
  for (const auto& d : datasets) mean += static_cast<double>(d.size());
  mean /= static_cast<double>(datasets.size());
  std::vector<RidgeObjective> out;
  out.reserve(datasets.size());
  for (const auto& d : datasets) out.push_back({lambda, static_cast<double>(d.size()) / mean});
  return out;
}

SyntheticInstance generate_synthetic(const SyntheticConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  const Index n = cfg.n_clients, d = cfg.d;
  const Index per_group = n / static_cast<Index>(cfg.group_means.size());
  SyntheticInstance inst;
  inst.truth.resize(n, d);
  inst.group.resize(static_cast<std::size_t>(n));
  std::normal_distribution<double> normal(0.0, 1.0);

  for (Index i = 0; i < n; ++i) {
    Rng rng = make_rng(seed, Stream::data, {static_cast<std::uint64_t>(i)});
    const int g = static_cast<int>(i / per_group);
    inst.group[static_cast<std::size_t>(i)] = g;
    for (Index k = 0; k < d; ++k)
      inst.truth(i, k) = cfg.group_means[static_cast<std::size_t>(g)] + cfg.theta_spread * normal(rng);
    Vector feature_mean(d);
    for (Index k = 0; k < d; ++k) feature_mean(k) = cfg.feature_mean_spread * normal(rng);
    const Index samples = std::uniform_int_distribution<Index>(cfg.n_min, cfg.n_max)(rng);

    auto draw = [&](Rng& r) {
      ClientData c{Matrix(samples, d), Vector(samples)};
      for (Index s = 0; s < samples; ++s)
        for (Index k = 0; k < d; ++k) c.x(s, k) = feature_mean(k) + normal(r);
      c.y = c.x * inst.truth.row(i).transpose();
      for (Index s = 0; s < samples; ++s) c.y(s) += cfg.noise_std * normal(r);
      return c;
    };
    inst.train.push_back(draw(rng));
    Rng test_rng = make_rng(seed, Stream::test, {static_cast<std::uint64_t>(i)});
    inst.test.push_back(draw(test_rng));
  }
  return inst;
}

std::vector<Fold> kfold_split(Index n_samples, int k, Rng& rng) {
  require(k >= 1, "kfold_split: k must be >= 1");
  require(n_samples >= k, "kfold_split: " + std::to_string(n_samples) +
                              " samples cannot fill " + std::to_string(k) + " folds");
  std::vector<Index> perm(static_cast<std::size_t>(n_samples));
  std::iota(perm.begin(), perm.end(), Index{0});
  for (Index j = n_samples - 1; j > 0; --j) {
    std::uniform_int_distribution<Index> pick(0, j);
    std::swap(perm[j], perm[pick(rng)]);
  }
  std::vector<Fold> folds(static_cast<std::size_t>(k));
  for (Index j = 0; j < n_samples; ++j)
    folds[static_cast<std::size_t>(j % k)].validation.push_back(perm[j]);
  for (auto& f : folds) {
    std::sort(f.validation.begin(), f.validation.end());
    std::vector<char> in_val(static_cast<std::size_t>(n_samples), 0);
    for (Index v : f.validation) in_val[v] = 1;
    for (Index j = 0; j < n_samples; ++j)
      if (!in_val[j]) f.train.push_back(j);
  }
  return folds;
}

ClientData subset(const ClientData& data, std::span<const Index> rows) {
  ClientData out{Matrix(static_cast<Index>(rows.size()), data.dim()),
                 Vector(static_cast<Index>(rows.size()))};
  for (std::size_t k = 0; k < rows.size(); ++k) {
    out.x.row(static_cast<Index>(k)) = data.x.row(rows[k]);
    out.y(static_cast<Index>(k)) = data.y(rows[k]);
  }
  return out;
}

}  // namespace karula::clients
