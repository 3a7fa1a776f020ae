// Copyright 2026 The mfsbi Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Benchmark simulators. Every simulator is a pure function of
// (theta, seed) returning a summary vector; a summary with any non-finite
// entry marks the run invalid and is replaced by simulate_batch.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mfsbi/matrix.hpp"
#include "mfsbi/rng.hpp"

namespace mfsbi {

class Simulator {
 public:
  virtual ~Simulator() = default;
  virtual std::string name() const = 0;
  /// Length of theta the simulator is called with (the full task theta).
  virtual std::size_t theta_dim() const = 0;
  virtual std::size_t x_dim() const = 0;
  virtual std::vector<double> simulate(std::span<const double> theta, std::uint64_t seed) const = 0;
};

using SimulatorPtr = std::shared_ptr<const Simulator>;

// ---- Ornstein-Uhlenbeck ------------------------------------------------------

struct OuParams {
  double mean = 1.0;
  double sigma = 0.3;
  double rate = 0.5;    // convergence rate gamma
  double offset = 3.0;  // X(0) ~ N(mean + offset, 1)
};

/// Which OU parameters are free; the rest take the fixed values 0.5 / 3.0.
enum class OuVariant { kTwo, kThree, kFour };

std::size_t ou_free_dims(OuVariant v);
OuParams ou_params(OuVariant v, std::span<const double> theta);

struct OuGrid {
  double dt = 0.1;
  std::size_t steps = 100;  // trace has steps + 1 points
  std::vector<std::size_t> summary_index{0, 11, 22, 33, 44, 55, 66, 77, 88, 99};
  /// Spacing between consecutive summary points (they must be evenly spaced).
  double summary_spacing() const;
};

/// Full Euler-Maruyama trace with steps + 1 points.
std::vector<double> ou_trace(const OuParams& p, const OuGrid& grid, RandomStream& rng);

class OuHighFidelity final : public Simulator {
 public:
  explicit OuHighFidelity(OuVariant variant, OuGrid grid = {}) : variant_(variant), grid_(std::move(grid)) {}
  std::string name() const override { return "ou-high"; }
  std::size_t theta_dim() const override { return ou_free_dims(variant_); }
  std::size_t x_dim() const override { return grid_.summary_index.size(); }
  std::vector<double> simulate(std::span<const double> theta, std::uint64_t seed) const override;
  const OuGrid& grid() const { return grid_; }

 private:
  OuVariant variant_;
  OuGrid grid_;
};

/// i.i.d. Gaussian draws N(mean, sigma); every other parameter is a dummy.
class OuLowFidelity final : public Simulator {
 public:
  explicit OuLowFidelity(OuVariant variant, std::size_t points = 10) : variant_(variant), points_(points) {}
  std::string name() const override { return "ou-low"; }
  std::size_t theta_dim() const override { return ou_free_dims(variant_); }
  std::size_t x_dim() const override { return points_; }
  std::vector<double> simulate(std::span<const double> theta, std::uint64_t seed) const override;

 private:
  OuVariant variant_;
  std::size_t points_;
};

/// Euler-Maruyama taken directly on the summary grid (one coarse step
/// between consecutive observed points). Middle level of the fidelity chain.
class OuCoarse final : public Simulator {
 public:
  explicit OuCoarse(OuVariant variant, OuGrid grid = {}) : variant_(variant), grid_(std::move(grid)) {}
  std::string name() const override { return "ou-coarse"; }
  std::size_t theta_dim() const override { return ou_free_dims(variant_); }
  std::size_t x_dim() const override { return grid_.summary_index.size(); }
  std::vector<double> simulate(std::span<const double> theta, std::uint64_t seed) const override;

 private:
  OuVariant variant_;
  OuGrid grid_;
};

struct PerturbationSpec {
  double delta = 0.0;  // std of the noise added to sigma
  bool invert = false;  // reverse the summary coordinates
  static constexpr double kSigmaFloor = 0.01;
};

/// The OU process with sigma + eps, eps ~ N(0, delta^2), optionally reversed.
class OuPerturbed final : public Simulator {
 public:
  OuPerturbed(OuVariant variant, PerturbationSpec spec, OuGrid grid = {})
      : variant_(variant), spec_(spec), grid_(std::move(grid)) {}
  std::string name() const override { return "ou-perturbed"; }
  std::size_t theta_dim() const override { return ou_free_dims(variant_); }
  std::size_t x_dim() const override { return grid_.summary_index.size(); }
  std::vector<double> simulate(std::span<const double> theta, std::uint64_t seed) const override;

 private:
  OuVariant variant_;
  PerturbationSpec spec_;
  OuGrid grid_;
};

// ---- SLCP ---------------------------------------------------------------------

struct SlcpMoments {
  double m1, m2;
  double s11, s12, s22;
};

SlcpMoments slcp_moments(std::span<const double> theta, bool zero_mean);

/// Four draws of a 2-D Gaussian with theta-dependent mean and covariance.
class Slcp final : public Simulator {
 public:
  explicit Slcp(bool low_fidelity) : low_(low_fidelity) {}
  std::string name() const override { return low_ ? "slcp-low" : "slcp-high"; }
  std::size_t theta_dim() const override { return 5; }
  std::size_t x_dim() const override { return 8; }
  std::vector<double> simulate(std::span<const double> theta, std::uint64_t seed) const override;

 private:
  bool low_;
};

// ---- SIR ------------------------------------------------------------------------

struct SirConfig {
  double population = 1e6;
  double days = 160.0;
  double step = 0.1;
  std::size_t points = 10;  // evenly spaced output times days/points, ..., days
  /// Binomial observation noise on I/N with this many trials; 0 = noiseless.
  int observation_trials = 1000;
};

struct SirTrajectory {
  std::vector<double> time, susceptible, infected, recovered;
};

/// RK4 solution sampled at the configured output times. Without the
/// recovered compartment `recovered` stays empty.
SirTrajectory sir_solve(double infection_rate, double recovery_rate, const SirConfig& config, bool with_recovered);

class Sir final : public Simulator {
 public:
  Sir(bool low_fidelity, SirConfig config = {}) : low_(low_fidelity), config_(config) {}
  std::string name() const override { return low_ ? "sir-low" : "sir-high"; }
  std::size_t theta_dim() const override { return 2; }
  std::size_t x_dim() const override { return config_.points; }
  std::vector<double> simulate(std::span<const double> theta, std::uint64_t seed) const override;
  const SirConfig& config() const { return config_; }

 private:
  bool low_;
  SirConfig config_;
};

// ---- Gaussian blob ----------------------------------------------------------------

struct BlobConfig {
  std::size_t side = 256;
  double width = 12.0;
  std::size_t low_side = 32;
  double low_width = 2.0;
  int trials = 255;
};

/// Pixel success probability at (col, row) for a blob centred at (x_off, y_off).
double blob_probability(double col, double row, double x_off, double y_off, double width, double contrast);

/// Renders a side x side image of Binomial(trials, p) counts.
std::vector<double> blob_render(std::size_t side, double width, double x_off, double y_off, double contrast,
                                int trials, RandomStream& rng);

/// High fidelity renders at full resolution; low fidelity renders at
/// low_side with offsets divided by side / low_side and upsamples bilinearly.
class Blob final : public Simulator {
 public:
  Blob(bool low_fidelity, BlobConfig config = {}) : low_(low_fidelity), config_(config) {}
  std::string name() const override { return low_ ? "blob-low" : "blob-high"; }
  std::size_t theta_dim() const override { return 3; }
  std::size_t x_dim() const override { return config_.side * config_.side; }
  std::vector<double> simulate(std::span<const double> theta, std::uint64_t seed) const override;

 private:
  bool low_;
  BlobConfig config_;
};

// ---- batches ----------------------------------------------------------------------

/// Draws one parameter vector from a prior or proposal.
using ThetaSource = std::function<void(RandomStream&, std::span<double>)>;

struct BatchResult {
  Matrix theta;
  Matrix x;
  std::size_t simulations = 0;  // simulator calls, replacements included
  std::size_t replacements = 0;
};

/// Exactly n valid (theta, x) rows. Parameters are drawn serially from
/// `source`; simulations run in parallel with per-call derived seeds, so the
/// result does not depend on the worker count. Invalid rows are redrawn
/// from the same source. Throws ConfigError when more than
/// kMaxInvalidFraction of the latest kInvalidWindow draws were invalid.
BatchResult simulate_batch(const Simulator& sim, const ThetaSource& source, std::size_t n, std::uint64_t seed);

/// Simulates given parameter rows (no replacement); invalid rows are reported.
BatchResult simulate_rows(const Simulator& sim, const Matrix& theta, std::uint64_t seed,
                          std::vector<bool>* valid = nullptr);

inline constexpr std::size_t kInvalidWindow = 1000;
inline constexpr double kMaxInvalidFraction = 0.6;

}  // namespace mfsbi
