// Copyright 2026 The mfsbi Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Ground-truth posterior samples from closed-form likelihoods: rejection
// sampling against the prior, or sampling-importance-resampling.

#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "mfsbi/matrix.hpp"
#include "mfsbi/prior.hpp"
#include "mfsbi/simulators.hpp"

namespace mfsbi {

struct Task;

/// Log density of observed OU points spaced `spacing` apart: a unit-variance
/// Gaussian on the first point around mean + offset, then exact transitions.
double ou_exact_loglik(const OuParams& params, std::span<const double> x, double spacing);

/// log p(x_o | theta) for a fixed observation.
using LogLikelihood = std::function<double(std::span<const double> theta)>;

/// Closed-form likelihood of the task's high fidelity simulator at x_o.
/// For OU tasks `full_trace` expects all grid points instead of the summary.
/// Throws ConfigError for tasks without one.
LogLikelihood task_log_likelihood(const Task& task, std::span<const double> x_o, bool full_trace = false);

struct ReferenceSampleSet {
  std::string method;  // "rejection" or "sir"
  Matrix samples;
  std::size_t proposals = 0;
  double acceptance_rate = 0.0;  // rejection only
  double bound = 0.0;            // rejection only
  double observed_max = 0.0;     // largest log-likelihood seen
  std::size_t bound_raises = 0;  // rejection restarts after a violated bound
  double ess = 0.0;              // sir only
};

struct RejectionConfig {
  std::size_t bound_draws = 100'000;
  double margin = 2.0;  // nats added to the empirical maximum
  double min_acceptance = 1e-7;
  std::size_t max_proposals = 200'000'000;
  std::size_t block = 20'000;
  /// Added to the bound on top of the margin; lets tests compare bounds.
  double extra_margin = 0.0;
};

ReferenceSampleSet rejection_sample(const LogLikelihood& loglik, const Prior& prior, std::size_t n,
                                    std::uint64_t seed, const RejectionConfig& config = {},
                                    const std::function<void(const std::string&)>& log = {});

inline constexpr double kMinEss = 10.0;

ReferenceSampleSet sir_resample(const LogLikelihood& loglik, const Prior& prior, std::size_t n_prop,
                                std::size_t n_out, std::uint64_t seed);

/// Rejection sampling for OU and the Gaussian toy task, SIR for SLCP and SIR.
ReferenceSampleSet reference_posterior(const Task& task, std::span<const double> x_o, std::size_t n,
                                       std::uint64_t seed, std::size_t sir_proposals = 10'000);

}  // namespace mfsbi
