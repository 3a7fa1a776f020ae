// Copyright 2026 The mfsbi Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "mfsbi/flow.hpp"
#include "mfsbi/matrix.hpp"
#include "mfsbi/prior.hpp"

namespace mfsbi {

/// Anything that can evaluate and sample a conditional density over theta.
class DensityModel {
 public:
  virtual ~DensityModel() = default;
  virtual std::size_t theta_dim() const = 0;
  /// Log density per theta row; x has one row or as many rows as theta.
  virtual std::vector<double> log_prob(const Matrix& theta, const Matrix& x) const = 0;
  /// n draws given a single observation row.
  virtual Matrix sample(std::size_t n, const Matrix& x, std::uint64_t seed) const = 0;
  /// False for models tied to one observation.
  virtual bool amortized() const { return true; }
};

/// A trained estimator, or a uniform mixture of several, plus the prior.
/// Sequentially trained posteriors remember their observation and refuse
/// any other.
class Posterior final : public DensityModel {
 public:
  Posterior(std::vector<flow::ConditionalDensityEstimator> members, Prior prior,
            std::optional<Matrix> observation = std::nullopt);

  std::size_t theta_dim() const override { return prior_.dim(); }
  std::vector<double> log_prob(const Matrix& theta, const Matrix& x) const override;
  Matrix sample(std::size_t n, const Matrix& x, std::uint64_t seed) const override;
  bool amortized() const override { return !observation_.has_value(); }

  /// Per-member log densities, members x rows (no observation check).
  std::vector<std::vector<double>> member_log_probs(const Matrix& theta, const Matrix& x) const;

  std::size_t size() const { return members_.size(); }
  const flow::ConditionalDensityEstimator& member(std::size_t i) const { return members_.at(i); }
  const Prior& prior() const { return prior_; }
  const std::optional<Matrix>& observation() const { return observation_; }
  /// The same estimator(s) without the observation lock, for diagnostics.
  Posterior unlocked() const;

 private:
  void check_observation(const Matrix& x) const;

  std::vector<flow::ConditionalDensityEstimator> members_;
  Prior prior_;
  std::optional<Matrix> observation_;
};

/// log(mean(exp(values))) computed stably.
double log_mean_exp(std::span<const double> values);

}  // namespace mfsbi
