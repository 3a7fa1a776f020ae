// Copyright 2026 The mfsbi Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "mfsbi/tensor.hpp"

namespace mfsbi::flow {

/// Monotone rational-quadratic spline on [-tail_bound, tail_bound] with
/// identity tails. Each transformed scalar is driven by 3K-1 unconstrained
/// values: K bin widths, K bin heights, K-1 interior knot derivatives.
struct SplineConfig {
  std::size_t bins = 8;
  double tail_bound = 5.0;
  double min_bin_width = 1e-3;
  double min_bin_height = 1e-3;
  double min_derivative = 1e-3;

  std::size_t params_per_dim() const { return 3 * bins - 1; }
};

/// Knot positions, values and derivatives after normalisation.
struct SplineKnots {
  std::vector<double> x;      // K + 1 input knots, x[0] = -B, x[K] = B
  std::vector<double> y;      // K + 1 output knots
  std::vector<double> deriv;  // K + 1 derivatives, deriv[0] = deriv[K] = 1
};

SplineKnots make_knots(const SplineConfig& config, std::span<const double> raw);

struct SplineOutput {
  std::vector<double> values;
  std::vector<double> log_det;  // per element, log |d out / d in|
};

/// Elementwise forward map; raw holds params_per_dim() values per element.
SplineOutput spline_forward(const SplineConfig& config, std::span<const double> inputs,
                            std::span<const double> raw);
/// Analytic inverse (quadratic root per bin). log_det is log |du/dy|.
SplineOutput spline_inverse(const SplineConfig& config, std::span<const double> inputs,
                            std::span<const double> raw);

/// Differentiable forward spline: u (B x T), raw (B x T*(3K-1)).
/// Returns y (B x T) and the per-row log-determinant summed over T.
std::pair<ad::Tensor, ad::Tensor> rq_spline(const ad::Tensor& u, const ad::Tensor& raw,
                                            const SplineConfig& config);

}  // namespace mfsbi::flow
