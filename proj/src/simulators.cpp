// Copyright 2026 The mfsbi Authors
// SPDX-License-Identifier: Apache-2.0

#include "mfsbi/simulators.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <exception>
#include <limits>

#include "mfsbi/errors.hpp"
#include "mfsbi/flow.hpp"

namespace mfsbi {

namespace {

constexpr double kFixedRate = 0.5;
constexpr double kFixedOffset = 3.0;

void require_theta(const Simulator& sim, std::span<const double> theta) {
  if (theta.size() != sim.theta_dim()) {
    throw ShapeError(sim.name() + ": theta has " + std::to_string(theta.size()) + " entries, expected " +
                     std::to_string(sim.theta_dim()));
  }
}

std::vector<double> subsample(const std::vector<double>& trace, const std::vector<std::size_t>& index) {
  std::vector<double> out;
  out.reserve(index.size());
  for (std::size_t i : index) out.push_back(trace.at(i));
  return out;
}

}  // namespace

// ---- OU ------------------------------------------------------------------------

std::size_t ou_free_dims(OuVariant v) {
  switch (v) {
    case OuVariant::kTwo: return 2;
    case OuVariant::kThree: return 3;
    case OuVariant::kFour: return 4;
  }
  return 2;
}

OuParams ou_params(OuVariant v, std::span<const double> theta) {
  if (theta.size() != ou_free_dims(v)) throw ShapeError("ou_params: wrong theta length");
  OuParams p{theta[0], theta[1], kFixedRate, kFixedOffset};
  if (v != OuVariant::kTwo) p.rate = theta[2];
  if (v == OuVariant::kFour) p.offset = theta[3];
  return p;
}

double OuGrid::summary_spacing() const {
  if (summary_index.size() < 2) return dt;
  const std::size_t step = summary_index[1] - summary_index[0];
  for (std::size_t i = 1; i < summary_index.size(); ++i) {
    if (summary_index[i] - summary_index[i - 1] != step) throw ConfigError("OU summary indices must be evenly spaced");
  }
  return static_cast<double>(step) * dt;
}

std::vector<double> ou_trace(const OuParams& p, const OuGrid& grid, RandomStream& rng) {
  std::vector<double> x(grid.steps + 1);
  x[0] = rng.normal(p.mean + p.offset, 1.0);
  const double noise = p.sigma * std::sqrt(grid.dt);
  for (std::size_t t = 0; t < grid.steps; ++t) {
    x[t + 1] = x[t] + p.rate * (p.mean - x[t]) * grid.dt + noise * rng.normal();
  }
  return x;
}

std::vector<double> OuHighFidelity::simulate(std::span<const double> theta, std::uint64_t seed) const {
  require_theta(*this, theta);
  RandomStream rng(seed);
  return subsample(ou_trace(ou_params(variant_, theta), grid_, rng), grid_.summary_index);
}

std::vector<double> OuLowFidelity::simulate(std::span<const double> theta, std::uint64_t seed) const {
  require_theta(*this, theta);
  RandomStream rng(seed);
  std::vector<double> out(points_);
  for (auto& v : out) v = rng.normal(theta[0], theta[1]);
  return out;
}

std::vector<double> OuCoarse::simulate(std::span<const double> theta, std::uint64_t seed) const {
  require_theta(*this, theta);
  const OuParams p = ou_params(variant_, theta);
  const double h = grid_.summary_spacing();
  RandomStream rng(seed);
  std::vector<double> out(grid_.summary_index.size());
  out[0] = rng.normal(p.mean + p.offset, 1.0);
  const double noise = p.sigma * std::sqrt(h);
  for (std::size_t t = 1; t < out.size(); ++t) {
    out[t] = out[t - 1] + p.rate * (p.mean - out[t - 1]) * h + noise * rng.normal();
  }
  return out;
}

std::vector<double> OuPerturbed::simulate(std::span<const double> theta, std::uint64_t seed) const {
  require_theta(*this, theta);
  RandomStream rng(seed);
  OuParams p = ou_params(variant_, theta);
  const double eps = spec_.delta > 0.0 ? spec_.delta * rng.normal() : 0.0;
  p.sigma = std::max(p.sigma + eps, PerturbationSpec::kSigmaFloor);
  auto out = subsample(ou_trace(p, grid_, rng), grid_.summary_index);
  if (spec_.invert) std::reverse(out.begin(), out.end());
  return out;
}

// ---- SLCP ------------------------------------------------------------------------

SlcpMoments slcp_moments(std::span<const double> theta, bool zero_mean) {
  if (theta.size() != 5) throw ShapeError("slcp: theta must have 5 entries");
  const double s1 = theta[2] * theta[2];
  const double s2 = theta[3] * theta[3];
  const double rho = std::tanh(theta[4]);
  return {zero_mean ? 0.0 : theta[0], zero_mean ? 0.0 : theta[1], s1 * s1, rho * s1 * s2, s2 * s2};
}

std::vector<double> Slcp::simulate(std::span<const double> theta, std::uint64_t seed) const {
  require_theta(*this, theta);
  const double s1 = theta[2] * theta[2];
  const double s2 = theta[3] * theta[3];
  if (s1 == 0.0 || s2 == 0.0) return std::vector<double>(8, std::numeric_limits<double>::quiet_NaN());
  const double rho = std::tanh(theta[4]);
  const double m1 = low_ ? 0.0 : theta[0];
  const double m2 = low_ ? 0.0 : theta[1];
  const double tail = std::sqrt(1.0 - rho * rho);
  RandomStream rng(seed);
  std::vector<double> out(8);
  for (std::size_t k = 0; k < 4; ++k) {
    const double z1 = rng.normal();
    const double z2 = rng.normal();
    out[2 * k] = m1 + s1 * z1;
    out[2 * k + 1] = m2 + s2 * (rho * z1 + tail * z2);
  }
  return out;
}

// ---- SIR -------------------------------------------------------------------------

SirTrajectory sir_solve(double beta, double gamma, const SirConfig& c, bool with_recovered) {
  if (c.points == 0 || !(c.step > 0.0)) throw ConfigError("sir: points and step must be positive");
  const double n = c.population;
  const auto steps_per_point = static_cast<std::size_t>(std::llround(c.days / static_cast<double>(c.points) / c.step));
  if (steps_per_point == 0) throw ConfigError("sir: integration step longer than the output spacing");
  const double h = c.days / static_cast<double>(c.points) / static_cast<double>(steps_per_point);

  std::array<double, 3> y{n - 1.0, 1.0, 0.0};
  auto rhs = [&](const std::array<double, 3>& s) {
    const double infection = beta * s[0] * s[1] / n;
    const double recovery = gamma * s[1];
    return std::array<double, 3>{-infection, infection - recovery, with_recovered ? recovery : 0.0};
  };
  SirTrajectory out;
  for (std::size_t p = 1; p <= c.points; ++p) {
    for (std::size_t k = 0; k < steps_per_point; ++k) {
      const auto k1 = rhs(y);
      std::array<double, 3> t;
      for (int i = 0; i < 3; ++i) t[i] = y[i] + 0.5 * h * k1[i];
      const auto k2 = rhs(t);
      for (int i = 0; i < 3; ++i) t[i] = y[i] + 0.5 * h * k2[i];
      const auto k3 = rhs(t);
      for (int i = 0; i < 3; ++i) t[i] = y[i] + h * k3[i];
      const auto k4 = rhs(t);
      for (int i = 0; i < 3; ++i) {
        y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        if (y[i] < -1e-9 * n) throw NumericError("sir: negative compartment, integration step too large");
        y[i] = std::max(y[i], 0.0);
      }
    }
    out.time.push_back(h * static_cast<double>(p * steps_per_point));
    out.susceptible.push_back(y[0]);
    out.infected.push_back(y[1]);
    if (with_recovered) out.recovered.push_back(y[2]);
  }
  return out;
}

std::vector<double> Sir::simulate(std::span<const double> theta, std::uint64_t seed) const {
  require_theta(*this, theta);
  const auto traj = sir_solve(theta[0], theta[1], config_, !low_);
  RandomStream rng(seed);
  std::vector<double> out(config_.points);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double frac = std::clamp(traj.infected[i] / config_.population, 0.0, 1.0);
    out[i] = config_.observation_trials > 0
                 ? static_cast<double>(rng.binomial(config_.observation_trials, frac)) / config_.observation_trials
                 : frac;
  }
  return out;
}

// ---- blob ------------------------------------------------------------------------

double blob_probability(double col, double row, double x_off, double y_off, double width, double contrast) {
  const double r = (col - x_off) * (col - x_off) + (row - y_off) * (row - y_off);
  return 0.9 - 0.8 * std::exp(-0.5 * std::pow(r / (width * width), contrast));
}

std::vector<double> blob_render(std::size_t side, double width, double x_off, double y_off, double contrast,
                                int trials, RandomStream& rng) {
  std::vector<double> img(side * side);
  for (std::size_t row = 0; row < side; ++row) {
    for (std::size_t col = 0; col < side; ++col) {
      const double p = blob_probability(static_cast<double>(col), static_cast<double>(row), x_off, y_off, width, contrast);
      img[row * side + col] = static_cast<double>(rng.binomial(trials, p));
    }
  }
  return img;
}

std::vector<double> Blob::simulate(std::span<const double> theta, std::uint64_t seed) const {
  require_theta(*this, theta);
  RandomStream rng(seed);
  if (!low_) return blob_render(config_.side, config_.width, theta[0], theta[1], theta[2], config_.trials, rng);
  const double scale = static_cast<double>(config_.side) / static_cast<double>(config_.low_side);
  const auto small = blob_render(config_.low_side, config_.low_width, theta[0] / scale, theta[1] / scale, theta[2],
                                 config_.trials, rng);
  return flow::bilinear_resize(small, config_.low_side, config_.side);
}

// ---- batches ------------------------------------------------------------------------

namespace {

bool all_finite(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double a) { return std::isfinite(a); });
}

// Runs sim on the listed rows in parallel; call_index gives the seed counter per row.
std::vector<std::vector<double>> run_parallel(const Simulator& sim, const Matrix& theta,
                                              const std::vector<std::size_t>& rows,
                                              const std::vector<std::uint64_t>& call_index, std::uint64_t seed) {
  std::vector<std::vector<double>> out(rows.size());
  std::exception_ptr failure;
  const auto count = static_cast<std::ptrdiff_t>(rows.size());
#pragma omp parallel for schedule(dynamic, 4)
  for (std::ptrdiff_t k = 0; k < count; ++k) {
    try {
      const auto i = static_cast<std::size_t>(k);
      out[i] = sim.simulate(theta.row(rows[i]), derive_seed(seed, stream_id("simulate"), call_index[i]));
    } catch (...) {
#pragma omp critical(mfsbi_sim_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

}  // namespace

BatchResult simulate_batch(const Simulator& sim, const ThetaSource& source, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw ConfigError("simulate_batch: n must be at least 1");
  BatchResult res;
  res.theta = Matrix(n, sim.theta_dim());
  res.x = Matrix(n, sim.x_dim());
  RandomStream theta_rng(seed, stream_id("theta"));
  std::vector<std::size_t> pending(n);
  for (std::size_t i = 0; i < n; ++i) pending[i] = i;
  std::deque<bool> window;
  std::size_t window_invalid = 0;
  std::uint64_t calls = 0;

  while (!pending.empty()) {
    std::vector<std::uint64_t> call_index(pending.size());
    for (std::size_t k = 0; k < pending.size(); ++k) {
      source(theta_rng, res.theta.row(pending[k]));
      call_index[k] = calls++;
    }
    const auto outputs = run_parallel(sim, res.theta, pending, call_index, seed);
    std::vector<std::size_t> again;
    for (std::size_t k = 0; k < pending.size(); ++k) {
      const bool ok = outputs[k].size() == sim.x_dim() && all_finite(outputs[k]);
      ++res.simulations;
      window.push_back(!ok);
      window_invalid += ok ? 0 : 1;
      if (window.size() > kInvalidWindow) {
        window_invalid -= window.front() ? 1 : 0;
        window.pop_front();
      }
      if (window.size() == kInvalidWindow &&
          static_cast<double>(window_invalid) > kMaxInvalidFraction * static_cast<double>(kInvalidWindow)) {
        throw ConfigError(sim.name() + ": " + std::to_string(window_invalid) + " of the last " +
                          std::to_string(kInvalidWindow) + " simulations were invalid; check the task setup");
      }
      if (ok) {
        std::copy(outputs[k].begin(), outputs[k].end(), res.x.row(pending[k]).begin());
      } else {
        ++res.replacements;
        again.push_back(pending[k]);
      }
    }
    pending = std::move(again);
  }
  return res;
}

BatchResult simulate_rows(const Simulator& sim, const Matrix& theta, std::uint64_t seed, std::vector<bool>* valid) {
  if (theta.cols != sim.theta_dim()) throw ShapeError(sim.name() + ": theta matrix has the wrong width");
  BatchResult res;
  res.theta = theta;
  res.x = Matrix(theta.rows, sim.x_dim());
  std::vector<std::size_t> rows(theta.rows);
  std::vector<std::uint64_t> index(theta.rows);
  for (std::size_t i = 0; i < theta.rows; ++i) rows[i] = index[i] = i;
  const auto outputs = run_parallel(sim, theta, rows, index, seed);
  if (valid) valid->assign(theta.rows, true);
  for (std::size_t i = 0; i < theta.rows; ++i) {
    ++res.simulations;
    const bool ok = outputs[i].size() == sim.x_dim() && all_finite(outputs[i]);
    if (ok) {
      std::copy(outputs[i].begin(), outputs[i].end(), res.x.row(i).begin());
    } else {
      std::fill(res.x.row(i).begin(), res.x.row(i).end(), std::numeric_limits<double>::quiet_NaN());
      if (valid) (*valid)[i] = false;
    }
  }
  return res;
}

}  // namespace mfsbi
