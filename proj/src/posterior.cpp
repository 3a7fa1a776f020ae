// Copyright 2026 The mfsbi Authors
// SPDX-License-Identifier: Apache-2.0

#include "mfsbi/posterior.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mfsbi/errors.hpp"
#include "mfsbi/rng.hpp"

namespace mfsbi {

double log_mean_exp(std::span<const double> values) {
  if (values.empty()) throw ShapeError("log_mean_exp of an empty range");
  const double top = *std::max_element(values.begin(), values.end());
  if (!std::isfinite(top)) return top;
  double s = 0.0;
  for (double v : values) s += std::exp(v - top);
  return top + std::log(s / static_cast<double>(values.size()));
}

Posterior::Posterior(std::vector<flow::ConditionalDensityEstimator> members, Prior prior,
                     std::optional<Matrix> observation)
    : members_(std::move(members)), prior_(std::move(prior)), observation_(std::move(observation)) {
  if (members_.empty()) throw ConfigError("posterior needs at least one estimator");
  for (const auto& m : members_) {
    if (m.architecture().theta_dim != prior_.dim()) throw ShapeError("posterior: estimator and prior dimensions differ");
    if (!(m.architecture() == members_.front().architecture())) {
      throw ArchitectureMismatch("ensemble members must share one architecture");
    }
  }
  if (observation_ && observation_->rows != 1) throw ShapeError("posterior observation must be a single row");
}

void Posterior::check_observation(const Matrix& x) const {
  if (!observation_) return;
  for (std::size_t i = 0; i < x.rows; ++i) {
    if (!std::equal(x.row(i).begin(), x.row(i).end(), observation_->data.begin(), observation_->data.end())) {
      throw ConfigError("this posterior was trained sequentially for one observation and cannot be evaluated at another");
    }
  }
}

Posterior Posterior::unlocked() const { return Posterior(members_, prior_); }

std::vector<std::vector<double>> Posterior::member_log_probs(const Matrix& theta, const Matrix& x) const {
  std::vector<std::vector<double>> out;
  out.reserve(members_.size());
  for (const auto& m : members_) out.push_back(m.log_prob(theta, x));
  return out;
}

std::vector<double> Posterior::log_prob(const Matrix& theta, const Matrix& x) const {
  check_observation(x);
  if (members_.size() == 1) return members_.front().log_prob(theta, x);
  const auto per_member = member_log_probs(theta, x);
  std::vector<double> out(theta.rows), column(members_.size());
  for (std::size_t i = 0; i < theta.rows; ++i) {
    for (std::size_t e = 0; e < members_.size(); ++e) column[e] = per_member[e][i];
    out[i] = log_mean_exp(column);
  }
  return out;
}

Matrix Posterior::sample(std::size_t n, const Matrix& x, std::uint64_t seed) const {
  check_observation(x);
  if (members_.size() == 1) return members_.front().sample(n, x, seed);
  RandomStream rng(seed, stream_id("mixture"));
  std::vector<std::size_t> counts(members_.size(), 0);
  std::vector<std::size_t> owner(n);
  for (std::size_t i = 0; i < n; ++i) owner[i] = rng.index(members_.size());
  for (std::size_t o : owner) ++counts[o];
  std::vector<Matrix> draws(members_.size());
  for (std::size_t e = 0; e < members_.size(); ++e) {
    if (counts[e] > 0) draws[e] = members_[e].sample(counts[e], x, derive_seed(seed, stream_id("member"), e));
  }
  Matrix out(n, theta_dim());
  std::vector<std::size_t> next(members_.size(), 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto e = owner[i];
    const auto row = draws[e].row(next[e]++);
    std::copy(row.begin(), row.end(), out.row(i).begin());
  }
  return out;
}

}  // namespace mfsbi
