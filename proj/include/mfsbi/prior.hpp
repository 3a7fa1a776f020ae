// Copyright 2026 The mfsbi Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mfsbi/flow.hpp"
#include "mfsbi/matrix.hpp"
#include "mfsbi/rng.hpp"

namespace mfsbi {

/// One independent prior factor. Normal and log-normal factors are
/// truncated to [lower, upper]; every factor has finite bounds so the
/// prior support doubles as the estimator's logit box.
struct PriorDim {
  enum class Kind { kUniform, kNormal, kLogNormal };
  Kind kind = Kind::kUniform;
  double location = 0.0;  // normal mean / log-normal log-mean
  double scale = 1.0;     // normal std / log-normal log-std
  double lower = 0.0;
  double upper = 1.0;

  static PriorDim uniform(double lower, double upper);
  static PriorDim normal(double mean, double std, double lower, double upper);
  static PriorDim log_normal(double log_mean, double log_std, double lower, double upper);
};

class Prior {
 public:
  Prior() = default;
  explicit Prior(std::vector<PriorDim> dims);
  static Prior uniform(const std::vector<double>& lower, const std::vector<double>& upper);

  std::size_t dim() const { return dims_.size(); }
  const std::vector<PriorDim>& dims() const { return dims_; }
  std::vector<double> lower() const;
  std::vector<double> upper() const;
  std::vector<double> range() const;
  flow::LogitBox box() const { return flow::LogitBox(lower(), upper()); }

  /// Normalised log density; -inf outside the open support.
  double log_density(std::span<const double> theta) const;
  std::vector<double> log_density(const Matrix& theta) const;
  bool contains(std::span<const double> theta) const;

  void sample(RandomStream& rng, std::span<double> out) const;
  Matrix sample(std::size_t n, std::uint64_t seed) const;

  /// Per-dimension marginal CDF (used for calibration tests).
  double cdf(std::size_t d, double value) const;

  std::string describe() const;

 private:
  std::vector<PriorDim> dims_;
  std::vector<double> log_norm_;  // log of the truncated mass per dimension
  std::vector<double> cdf_lo_, cdf_hi_;
};

}  // namespace mfsbi
