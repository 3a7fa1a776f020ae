// Copyright 2026 The mfsbi Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Multifidelity rejection ABC with early accept / early reject continuation:
// every particle is screened at low fidelity and only sometimes checked at
// high fidelity, with weights that correct for the skipped checks.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mfsbi/matrix.hpp"
#include "mfsbi/prior.hpp"
#include "mfsbi/simulators.hpp"

namespace mfsbi {

struct MfAbcConfig {
  double epsilon_low = 1.0;
  double epsilon_high = 1.0;
  double eta_accept = 0.9;  // continuation probability after a low fidelity accept
  double eta_reject = 0.3;  // continuation probability after a low fidelity reject
  std::size_t pilot = 10'000;

  void validate() const;
};

/// Per-coordinate z-scoring fitted on a prior predictive pilot.
struct SummaryScale {
  std::vector<double> mean;
  std::vector<double> std;

  double distance(std::span<const double> x, std::span<const double> x_o) const;
};

SummaryScale abc_pilot(const Prior& prior, const Simulator& simulator, std::size_t n, std::uint64_t seed);

struct WeightedParticle {
  std::vector<double> theta;
  double weight = 0.0;
  bool low_accepted = false;
  bool high_fidelity = false;  // true when the high fidelity check ran
  double low_distance = 0.0;
  double high_distance = 0.0;  // NaN when not simulated
};

struct MfAbcResult {
  std::vector<WeightedParticle> particles;
  std::size_t hf_calls = 0;
  std::size_t lf_calls = 0;
  double hf_fraction() const;
  double low_acceptance() const;
};

MfAbcResult run_mf_abc(const Prior& prior, const Simulator& low, const Simulator& high, std::span<const double> x_o,
                       std::size_t n_particles, const MfAbcConfig& config, std::uint64_t seed);

/// Plain rejection ABC at high fidelity on the same parameter and noise
/// streams as run_mf_abc; weights are 0 or 1.
MfAbcResult rejection_abc(const Prior& prior, const Simulator& high, std::span<const double> x_o,
                          std::size_t n_particles, double epsilon, std::size_t pilot, std::uint64_t seed);

struct ResampledParticles {
  Matrix theta;
  double positive_mass = 0.0;
  double negative_mass = 0.0;  // total |w| of negative weights, dropped before resampling
};

/// Multinomial resampling proportional to max(w, 0).
ResampledParticles resample_particles(const std::vector<WeightedParticle>& particles, std::size_t n_out,
                                      std::uint64_t seed,
                                      const std::function<void(const std::string&)>& log = {});

}  // namespace mfsbi
