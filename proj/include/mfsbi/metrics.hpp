// Copyright 2026 The mfsbi Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Sample-based posterior quality measures and calibration diagnostics.

#include <cstdint>
#include <span>
#include <vector>

#include "mfsbi/matrix.hpp"
#include "mfsbi/posterior.hpp"
#include "mfsbi/prior.hpp"
#include "mfsbi/simulators.hpp"

namespace mfsbi {

struct C2stConfig {
  std::size_t folds = 5;
  std::size_t hidden = 100;
  std::size_t batch_size = 200;
  std::size_t max_epochs = 200;
  std::size_t patience = 10;
  double learning_rate = 1e-3;
  double val_fraction = 0.1;
};

struct C2stResult {
  double accuracy = 0.0;  // mean held-out accuracy over folds
  std::vector<double> fold_accuracy;
  double fold_std = 0.0;
};

/// Classifier two-sample test: z-scores the pooled sets, trains a two hidden
/// layer ReLU network with k-fold cross-validation and early stopping.
C2stResult c2st_detailed(const Matrix& a, const Matrix& b, std::uint64_t seed, const C2stConfig& config = {});
double c2st(const Matrix& a, const Matrix& b, std::uint64_t seed, const C2stConfig& config = {});

/// Median pairwise distance of the pooled sets (a strided subsample of at
/// most `max_points` rows is used).
double median_bandwidth(const Matrix& a, const Matrix& b, std::size_t max_points = 2000);

/// Squared maximum mean discrepancy, biased V-statistic with a Gaussian
/// kernel exp(-d^2 / (2 h^2)). bandwidth <= 0 selects the median heuristic.
double mmd(const Matrix& a, const Matrix& b, double bandwidth = 0.0);
namespace serial {
double mmd(const Matrix& a, const Matrix& b, double bandwidth);
}

struct NltpResult {
  double value = 0.0;
  std::size_t used = 0;
  std::size_t excluded = 0;  // pairs outside the prior support
};

/// Mean of -log q(theta_o | x_o) over paired rows.
NltpResult nltp(const DensityModel& model, const Prior& prior, const Matrix& theta_o, const Matrix& x_o);

/// Root-mean-square deviation of samples from theta_o per dimension,
/// divided by that dimension's prior range, averaged over dimensions.
double nrmse(const Matrix& samples, std::span<const double> theta_o, std::span<const double> range);

struct SbcReport {
  std::size_t draws = 0;  // posterior draws per pair; ranks lie in 0..draws
  std::size_t bins = 0;
  std::vector<std::vector<std::size_t>> ranks;      // [dim][pair]
  std::vector<std::vector<std::size_t>> histogram;  // [dim][bin]
  std::vector<double> chi2;
  std::vector<double> p_value;
  double min_p_value = 1.0;
};

/// Rank histogram of prior draws among posterior draws, chi-square tested.
/// Needs an amortized model. bins = 0 picks min(draws + 1, 20).
SbcReport sbc_ranks(const DensityModel& model, const Prior& prior, const Simulator& simulator, std::size_t pairs,
                    std::size_t draws, std::uint64_t seed, std::size_t bins = 0);

/// Chi-square uniformity test of ranks in 0..draws grouped into `bins`.
void sbc_histogram(SbcReport& report);

struct CoverageReport {
  std::vector<double> levels;
  std::vector<double> coverage;  // fraction of pairs inside the HPD region of each level
  std::size_t pairs = 0;
};

/// HPD coverage of (theta, x) pairs under the model: for each pair the
/// credibility level at which theta enters the highest-density region,
/// estimated from `draws` model samples.
CoverageReport expected_coverage(const DensityModel& model, const Matrix& theta, const Matrix& x, std::size_t draws,
                                 std::uint64_t seed);

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};
KsResult ks_two_sample(std::vector<double> a, std::vector<double> b);

}  // namespace mfsbi
