// Copyright 2026 The mfsbi Authors
// SPDX-License-Identifier: Apache-2.0

#include "mfsbi/prior.hpp"

#include <boost/math/distributions/normal.hpp>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "mfsbi/errors.hpp"

namespace mfsbi {

namespace {

const boost::math::normal kStdNormal;

double std_cdf(double z) { return boost::math::cdf(kStdNormal, z); }

// Value on the scale where the factor is Gaussian.
double latent(const PriorDim& d, double v) { return d.kind == PriorDim::Kind::kLogNormal ? std::log(v) : v; }

}  // namespace

PriorDim PriorDim::uniform(double lower, double upper) { return {Kind::kUniform, 0.0, 1.0, lower, upper}; }

PriorDim PriorDim::normal(double mean, double std, double lower, double upper) {
  return {Kind::kNormal, mean, std, lower, upper};
}

PriorDim PriorDim::log_normal(double log_mean, double log_std, double lower, double upper) {
  return {Kind::kLogNormal, log_mean, log_std, lower, upper};
}

Prior::Prior(std::vector<PriorDim> dims) : dims_(std::move(dims)) {
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    const auto& d = dims_[i];
    if (!std::isfinite(d.lower) || !std::isfinite(d.upper) || !(d.lower < d.upper)) {
      throw ConfigError("prior dimension " + std::to_string(i) + " needs finite lower < upper");
    }
    if (d.kind != PriorDim::Kind::kUniform && !(d.scale > 0.0)) {
      throw ConfigError("prior dimension " + std::to_string(i) + " needs a positive scale");
    }
    if (d.kind == PriorDim::Kind::kLogNormal && !(d.lower > 0.0)) {
      throw ConfigError("log-normal prior dimension " + std::to_string(i) + " needs a positive lower bound");
    }
    double lo = 0.0, hi = 1.0, norm = std::log(d.upper - d.lower);
    if (d.kind != PriorDim::Kind::kUniform) {
      lo = std_cdf((latent(d, d.lower) - d.location) / d.scale);
      hi = std_cdf((latent(d, d.upper) - d.location) / d.scale);
      norm = std::log(hi - lo);
    }
    cdf_lo_.push_back(lo);
    cdf_hi_.push_back(hi);
    log_norm_.push_back(norm);
  }
}

Prior Prior::uniform(const std::vector<double>& lower, const std::vector<double>& upper) {
  if (lower.size() != upper.size()) throw ShapeError("Prior::uniform: bound sizes differ");
  std::vector<PriorDim> dims;
  for (std::size_t i = 0; i < lower.size(); ++i) dims.push_back(PriorDim::uniform(lower[i], upper[i]));
  return Prior(std::move(dims));
}

std::vector<double> Prior::lower() const {
  std::vector<double> v;
  for (const auto& d : dims_) v.push_back(d.lower);
  return v;
}

std::vector<double> Prior::upper() const {
  std::vector<double> v;
  for (const auto& d : dims_) v.push_back(d.upper);
  return v;
}

std::vector<double> Prior::range() const {
  std::vector<double> v;
  for (const auto& d : dims_) v.push_back(d.upper - d.lower);
  return v;
}

bool Prior::contains(std::span<const double> theta) const {
  if (theta.size() != dims_.size()) return false;
  for (std::size_t i = 0; i < dims_.size(); ++i)
    if (!(theta[i] > dims_[i].lower && theta[i] < dims_[i].upper)) return false;
  return true;
}

double Prior::log_density(std::span<const double> theta) const {
  if (theta.size() != dims_.size()) {
    throw ShapeError("prior: theta has " + std::to_string(theta.size()) + " entries, expected " +
                     std::to_string(dims_.size()));
  }
  if (!contains(theta)) return -std::numeric_limits<double>::infinity();
  double lp = 0.0;
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    const auto& d = dims_[i];
    if (d.kind == PriorDim::Kind::kUniform) {
      lp -= log_norm_[i];
      continue;
    }
    const double z = (latent(d, theta[i]) - d.location) / d.scale;
    lp += -0.5 * z * z - 0.5 * std::log(2.0 * std::numbers::pi) - std::log(d.scale) - log_norm_[i];
    if (d.kind == PriorDim::Kind::kLogNormal) lp -= std::log(theta[i]);
  }
  return lp;
}

std::vector<double> Prior::log_density(const Matrix& theta) const {
  std::vector<double> out(theta.rows);
  for (std::size_t i = 0; i < theta.rows; ++i) out[i] = log_density(theta.row(i));
  return out;
}

void Prior::sample(RandomStream& rng, std::span<double> out) const {
  if (out.size() != dims_.size()) throw ShapeError("prior: output span has the wrong size");
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    const auto& d = dims_[i];
    double v;
    do {
      if (d.kind == PriorDim::Kind::kUniform) {
        v = rng.uniform(d.lower, d.upper);
      } else {
        const double p = cdf_lo_[i] + (cdf_hi_[i] - cdf_lo_[i]) * rng.uniform();
        const double z = boost::math::quantile(kStdNormal, std::clamp(p, 1e-300, 1.0 - 1e-16));
        v = d.location + d.scale * z;
        if (d.kind == PriorDim::Kind::kLogNormal) v = std::exp(v);
      }
    } while (!(v > d.lower && v < d.upper));
    out[i] = v;
  }
}

Matrix Prior::sample(std::size_t n, std::uint64_t seed) const {
  RandomStream rng(seed, stream_id("prior"));
  Matrix out(n, dims_.size());
  for (std::size_t i = 0; i < n; ++i) sample(rng, out.row(i));
  return out;
}

double Prior::cdf(std::size_t i, double value) const {
  const auto& d = dims_.at(i);
  if (value <= d.lower) return 0.0;
  if (value >= d.upper) return 1.0;
  if (d.kind == PriorDim::Kind::kUniform) return (value - d.lower) / (d.upper - d.lower);
  const double c = std_cdf((latent(d, value) - d.location) / d.scale);
  return (c - cdf_lo_[i]) / (cdf_hi_[i] - cdf_lo_[i]);
}

std::string Prior::describe() const {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    const auto& d = dims_[i];
    if (i) os << ';';
    switch (d.kind) {
      case PriorDim::Kind::kUniform: os << "uniform"; break;
      case PriorDim::Kind::kNormal: os << "normal(" << d.location << ',' << d.scale << ')'; break;
      case PriorDim::Kind::kLogNormal: os << "lognormal(" << d.location << ',' << d.scale << ')'; break;
    }
    os << '[' << d.lower << ',' << d.upper << ']';
  }
  return os.str();
}

}  // namespace mfsbi
