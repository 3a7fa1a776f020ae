// Copyright 2026 The mfsbi Authors
// SPDX-License-Identifier: Apache-2.0

#include "mfsbi/mfabc.hpp"

#include <cmath>
#include <exception>
#include <limits>
#include <random>

#include "mfsbi/errors.hpp"
#include "mfsbi/rng.hpp"

namespace mfsbi {

void MfAbcConfig::validate() const {
  if (!(epsilon_low > 0.0) || !(epsilon_high > 0.0)) throw ConfigError("ABC thresholds must be positive");
  auto in_unit = [](double v) { return v > 0.0 && v <= 1.0; };
  if (!in_unit(eta_accept) || !in_unit(eta_reject)) throw ConfigError("continuation probabilities must lie in (0, 1]");
  if (pilot < 2) throw ConfigError("the ABC pilot needs at least 2 draws");
}

double SummaryScale::distance(std::span<const double> x, std::span<const double> x_o) const {
  if (x.size() != mean.size() || x_o.size() != mean.size()) throw ShapeError("ABC distance: summary length mismatch");
  double sq = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    if (!std::isfinite(x[j])) return std::numeric_limits<double>::infinity();
    const double d = (x[j] - x_o[j]) / std[j];
    sq += d * d;
  }
  return std::sqrt(sq);
}

SummaryScale abc_pilot(const Prior& prior, const Simulator& simulator, std::size_t n, std::uint64_t seed) {
  const auto batch = simulate_batch(
      simulator, [&](RandomStream& rng, std::span<double> out) { prior.sample(rng, out); }, n, seed);
  SummaryScale s;
  s.mean.assign(batch.x.cols, 0.0);
  s.std.assign(batch.x.cols, 0.0);
  for (std::size_t i = 0; i < batch.x.rows; ++i) {
    for (std::size_t j = 0; j < batch.x.cols; ++j) s.mean[j] += batch.x(i, j);
  }
  for (auto& m : s.mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < batch.x.rows; ++i) {
    for (std::size_t j = 0; j < batch.x.cols; ++j) s.std[j] += (batch.x(i, j) - s.mean[j]) * (batch.x(i, j) - s.mean[j]);
  }
  for (auto& v : s.std) v = std::max(std::sqrt(v / static_cast<double>(n - 1)), 1e-12);
  return s;
}

double MfAbcResult::hf_fraction() const {
  return particles.empty() ? 0.0 : static_cast<double>(hf_calls) / static_cast<double>(particles.size());
}

double MfAbcResult::low_acceptance() const {
  std::size_t n = 0;
  for (const auto& p : particles) n += p.low_accepted ? 1 : 0;
  return particles.empty() ? 0.0 : static_cast<double>(n) / static_cast<double>(particles.size());
}

namespace {

struct Streams {
  std::uint64_t theta, low, high, coin;
  explicit Streams(std::uint64_t seed)
      : theta(derive_seed(seed, stream_id("abc-theta"))),
        low(derive_seed(seed, stream_id("abc-low"))),
        high(derive_seed(seed, stream_id("abc-high"))),
        coin(derive_seed(seed, stream_id("abc-continue"))) {}
};

double simulated_distance(const Simulator& sim, std::span<const double> theta, std::uint64_t seed,
                          const SummaryScale& scale, std::span<const double> x_o) {
  try {
    return scale.distance(sim.simulate(theta, seed), x_o);
  } catch (const NumericError&) {
    return std::numeric_limits<double>::infinity();
  }
}

template <typename Body>
void for_each_particle(std::size_t n, Body body) {
  std::vector<std::exception_ptr> errors(n);
  const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic, 64)
  for (std::ptrdiff_t ii = 0; ii < count; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    try {
      body(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

void require_weight(const MfAbcResult& r) {
  for (const auto& p : r.particles) {
    if (p.weight != 0.0) return;
  }
  throw SamplingError("every ABC weight is zero; increase epsilon or the particle count");
}

}  // namespace

MfAbcResult run_mf_abc(const Prior& prior, const Simulator& low, const Simulator& high, std::span<const double> x_o,
                       std::size_t n_particles, const MfAbcConfig& config, std::uint64_t seed) {
  config.validate();
  if (n_particles == 0) throw ConfigError("run_mf_abc: no particles requested");
  if (low.x_dim() != x_o.size() || high.x_dim() != x_o.size()) throw ShapeError("run_mf_abc: observation length mismatch");
  const SummaryScale low_scale = abc_pilot(prior, low, config.pilot, derive_seed(seed, stream_id("pilot-low")));
  const SummaryScale high_scale = abc_pilot(prior, high, config.pilot, derive_seed(seed, stream_id("pilot-high")));
  const Streams streams(seed);

  MfAbcResult r;
  r.particles.resize(n_particles);
  for_each_particle(n_particles, [&](std::size_t i) {
    auto& p = r.particles[i];
    p.theta.resize(prior.dim());
    RandomStream theta_rng(streams.theta, 0, i);
    prior.sample(theta_rng, p.theta);
    p.low_distance = simulated_distance(low, p.theta, derive_seed(streams.low, 0, i), low_scale, x_o);
    p.low_accepted = p.low_distance < config.epsilon_low;
    const double a_low = p.low_accepted ? 1.0 : 0.0;
    const double eta = a_low > 0.0 ? config.eta_accept : config.eta_reject;
    RandomStream coin(streams.coin, 0, i);
    p.high_distance = std::numeric_limits<double>::quiet_NaN();
    p.weight = a_low;
    if (coin.uniform() < eta) {
      p.high_fidelity = true;
      p.high_distance = simulated_distance(high, p.theta, derive_seed(streams.high, 0, i), high_scale, x_o);
      const double a_high = p.high_distance < config.epsilon_high ? 1.0 : 0.0;
      p.weight = a_low + (a_high - a_low) / eta;
    }
  });
  r.lf_calls = n_particles;
  for (const auto& p : r.particles) r.hf_calls += p.high_fidelity ? 1 : 0;
  require_weight(r);
  return r;
}

MfAbcResult rejection_abc(const Prior& prior, const Simulator& high, std::span<const double> x_o,
                          std::size_t n_particles, double epsilon, std::size_t pilot, std::uint64_t seed) {
  if (!(epsilon > 0.0)) throw ConfigError("ABC threshold must be positive");
  if (n_particles == 0) throw ConfigError("rejection_abc: no particles requested");
  if (high.x_dim() != x_o.size()) throw ShapeError("rejection_abc: observation length mismatch");
  const SummaryScale scale = abc_pilot(prior, high, pilot, derive_seed(seed, stream_id("pilot-high")));
  const Streams streams(seed);
  MfAbcResult r;
  r.particles.resize(n_particles);
  for_each_particle(n_particles, [&](std::size_t i) {
    auto& p = r.particles[i];
    p.theta.resize(prior.dim());
    RandomStream theta_rng(streams.theta, 0, i);
    prior.sample(theta_rng, p.theta);
    p.high_fidelity = true;
    p.low_distance = std::numeric_limits<double>::quiet_NaN();
    p.high_distance = simulated_distance(high, p.theta, derive_seed(streams.high, 0, i), scale, x_o);
    p.weight = p.high_distance < epsilon ? 1.0 : 0.0;
  });
  r.hf_calls = n_particles;
  require_weight(r);
  return r;
}

ResampledParticles resample_particles(const std::vector<WeightedParticle>& particles, std::size_t n_out,
                                      std::uint64_t seed, const std::function<void(const std::string&)>& log) {
  if (particles.empty()) throw ShapeError("resample_particles: no particles");
  ResampledParticles out;
  std::vector<double> w(particles.size());
  for (std::size_t i = 0; i < particles.size(); ++i) {
    const double v = particles[i].weight;
    if (!std::isfinite(v)) throw NumericError("resample_particles: non-finite weight at particle " + std::to_string(i));
    w[i] = std::max(v, 0.0);
    if (v > 0.0) out.positive_mass += v;
    else out.negative_mass -= v;
  }
  if (out.positive_mass - out.negative_mass <= 0.0) {
    throw SamplingError("resample_particles: total weight is not positive; increase epsilon");
  }
  if (out.negative_mass > 0.0 && log) {
    log("resample_particles: dropped negative weight mass " + std::to_string(out.negative_mass) + " against positive " +
        std::to_string(out.positive_mass));
  }
  std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
  RandomStream rng(seed, stream_id("abc-resample"));
  out.theta = Matrix(0, particles.front().theta.size());
  for (std::size_t k = 0; k < n_out; ++k) out.theta.append_row(particles[pick(rng.engine())].theta);
  return out;
}

}  // namespace mfsbi
