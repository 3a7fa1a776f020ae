// Copyright 2026 The mfsbi Authors
// SPDX-License-Identifier: Apache-2.0

#include "mfsbi/reference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "mfsbi/errors.hpp"
#include "mfsbi/rng.hpp"
#include "mfsbi/tasks.hpp"

namespace mfsbi {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

std::vector<double> evaluate(const LogLikelihood& loglik, const Matrix& theta) {
  std::vector<double> out(theta.rows);
  const auto n = static_cast<std::ptrdiff_t>(theta.rows);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = loglik(theta.row(static_cast<std::size_t>(i)));
  return out;
}

double normal_logpdf(double x, double mean, double var) {
  return -0.5 * (kLog2Pi + std::log(var) + (x - mean) * (x - mean) / var);
}

double binomial_logpmf(int k, int n, double p) {
  if (p <= 0.0) return k == 0 ? 0.0 : -std::numeric_limits<double>::infinity();
  if (p >= 1.0) return k == n ? 0.0 : -std::numeric_limits<double>::infinity();
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) + k * std::log(p) +
         (n - k) * std::log1p(-p);
}

}  // namespace

double ou_exact_loglik(const OuParams& p, std::span<const double> x, double spacing) {
  if (x.empty()) throw ShapeError("ou_exact_loglik: no observed points");
  if (!(p.rate > 0.0) || !(p.sigma > 0.0) || !(spacing > 0.0)) {
    throw DomainError("ou_exact_loglik: rate, sigma and spacing must be positive");
  }
  const double g = -std::expm1(-2.0 * p.rate * spacing) / p.rate;
  const double keep = 1.0 - p.rate * g;
  if (keep < 0.0) throw DomainError("ou_exact_loglik: 1 - rate * g is negative");
  const double decay = std::sqrt(keep);
  const double var = 0.5 * g * p.sigma * p.sigma;
  double ll = normal_logpdf(x[0], p.mean + p.offset, 1.0);
  for (std::size_t t = 1; t < x.size(); ++t) {
    const double r = (p.mean - x[t]) - decay * (p.mean - x[t - 1]);
    ll += -0.5 * (kLog2Pi + std::log(var)) - 0.5 * r * r / var;
  }
  return ll;
}

LogLikelihood task_log_likelihood(const Task& task, std::span<const double> x_o_span, bool full_trace) {
  const std::vector<double> x_o(x_o_span.begin(), x_o_span.end());
  if (auto variant = ou_variant(task.id)) {
    const auto* high = dynamic_cast<const OuHighFidelity*>(&task.high());
    if (high == nullptr) throw ConfigError("OU task without an OU high fidelity simulator");
    const OuGrid grid = high->grid();
    const double spacing = full_trace ? grid.dt : grid.summary_spacing();
    const std::size_t expected = full_trace ? grid.steps + 1 : grid.summary_index.size();
    if (x_o.size() != expected) {
      throw ShapeError("OU likelihood expects " + std::to_string(expected) + " points, got " +
                       std::to_string(x_o.size()));
    }
    const auto v = *variant;
    return [x_o, spacing, v](std::span<const double> theta) {
      return ou_exact_loglik(ou_params(v, theta), x_o, spacing);
    };
  }
  if (task.id == "gaussian") {
    if (x_o.size() != 1) throw ShapeError("gaussian likelihood expects one value");
    const double var = ConjugateGaussian::kNoise * ConjugateGaussian::kNoise;
    return [x = x_o[0], var](std::span<const double> theta) { return normal_logpdf(x, theta[0], var); };
  }
  if (task.id == "slcp") {
    if (x_o.size() != 8) throw ShapeError("slcp likelihood expects 8 values");
    return [x_o](std::span<const double> t) {
      const double s1 = t[2] * t[2], s2 = t[3] * t[3];
      if (s1 == 0.0 || s2 == 0.0) return -std::numeric_limits<double>::infinity();
      const double rho = std::tanh(t[4]);
      const double det_term = std::log(s1) + std::log(s2) + 0.5 * std::log1p(-rho * rho);
      double ll = 0.0;
      for (std::size_t k = 0; k < 4; ++k) {
        const double z1 = (x_o[2 * k] - t[0]) / s1;
        const double z2 = (x_o[2 * k + 1] - t[1]) / s2;
        const double q = (z1 * z1 - 2.0 * rho * z1 * z2 + z2 * z2) / (1.0 - rho * rho);
        ll += -kLog2Pi - det_term - 0.5 * q;
      }
      return ll;
    };
  }
  if (task.id == "sir") {
    const auto* high = dynamic_cast<const Sir*>(&task.high());
    if (high == nullptr) throw ConfigError("sir task without an SIR high fidelity simulator");
    const SirConfig cfg = high->config();
    if (cfg.observation_trials <= 0) throw ConfigError("sir likelihood needs binomial observation noise");
    if (x_o.size() != cfg.points) throw ShapeError("sir likelihood expects " + std::to_string(cfg.points) + " values");
    return [x_o, cfg](std::span<const double> t) {
      const auto traj = sir_solve(t[0], t[1], cfg, true);
      double ll = 0.0;
      for (std::size_t i = 0; i < x_o.size(); ++i) {
        const double frac = std::clamp(traj.infected[i] / cfg.population, 0.0, 1.0);
        const int k = static_cast<int>(std::lround(x_o[i] * cfg.observation_trials));
        ll += binomial_logpmf(k, cfg.observation_trials, frac);
      }
      return ll;
    };
  }
  throw ConfigError("task '" + task.id + "' has no closed-form likelihood; use NLTP or NRMSE instead of C2ST");
}

ReferenceSampleSet rejection_sample(const LogLikelihood& loglik, const Prior& prior, std::size_t n,
                                    std::uint64_t seed, const RejectionConfig& cfg,
                                    const std::function<void(const std::string&)>& log) {
  if (n == 0) throw ConfigError("rejection_sample: n must be positive");
  ReferenceSampleSet out;
  out.method = "rejection";
  const auto probe = prior.sample(cfg.bound_draws, derive_seed(seed, stream_id("bound")));
  const auto probe_ll = evaluate(loglik, probe);
  out.observed_max = *std::max_element(probe_ll.begin(), probe_ll.end());
  if (!std::isfinite(out.observed_max)) {
    throw SamplingError("rejection_sample: the likelihood vanishes on every bound probe; use SIR");
  }
  out.bound = out.observed_max + cfg.margin + cfg.extra_margin;

  for (;;) {
    Matrix accepted(0, prior.dim());
    std::size_t proposed = 0;
    bool violated = false;
    RandomStream u(seed, stream_id("accept"), out.bound_raises);
    for (std::size_t b = 0; accepted.rows < n && !violated; ++b) {
      const auto draws = prior.sample(cfg.block, derive_seed(seed, stream_id("proposal"), b + out.bound_raises * 1'000'000));
      const auto ll = evaluate(loglik, draws);
      for (std::size_t i = 0; i < draws.rows && accepted.rows < n; ++i) {
        ++proposed;
        out.observed_max = std::max(out.observed_max, ll[i]);
        if (ll[i] > out.bound) {
          violated = true;
          break;
        }
        if (std::log(u.uniform()) < ll[i] - out.bound) accepted.append_row(draws.row(i));
      }
      if (!violated && static_cast<double>(proposed) >= 1.0 / cfg.min_acceptance &&
          static_cast<double>(accepted.rows) / static_cast<double>(proposed) < cfg.min_acceptance) {
        throw SamplingError("rejection_sample: acceptance rate below " + std::to_string(cfg.min_acceptance) +
                            "; use SIR instead");
      }
      if (proposed >= cfg.max_proposals) throw SamplingError("rejection_sample: proposal cap reached; use SIR instead");
    }
    if (!violated) {
      out.samples = std::move(accepted);
      out.proposals = proposed;
      out.acceptance_rate = static_cast<double>(n) / static_cast<double>(proposed);
      return out;
    }
    ++out.bound_raises;
    const double old = out.bound;
    out.bound = out.observed_max + cfg.margin + cfg.extra_margin;
    if (log) {
      log("rejection_sample: log-likelihood " + std::to_string(out.observed_max) + " exceeded the bound " +
          std::to_string(old) + "; restarting with " + std::to_string(out.bound));
    }
    if (out.bound_raises > 20) throw SamplingError("rejection_sample: bound kept being exceeded");
  }
}

ReferenceSampleSet sir_resample(const LogLikelihood& loglik, const Prior& prior, std::size_t n_prop,
                                std::size_t n_out, std::uint64_t seed) {
  if (n_prop < n_out) throw ConfigError("sir_resample: n_prop must be at least n_out");
  if (n_out == 0) throw ConfigError("sir_resample: n_out must be positive");
  ReferenceSampleSet out;
  out.method = "sir";
  out.proposals = n_prop;
  const auto draws = prior.sample(n_prop, derive_seed(seed, stream_id("sir-proposal")));
  const auto ll = evaluate(loglik, draws);
  out.observed_max = *std::max_element(ll.begin(), ll.end());
  if (!std::isfinite(out.observed_max)) throw SamplingError("sir_resample: every proposal has zero likelihood");
  std::vector<double> w(n_prop);
  double sum = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < n_prop; ++i) {
    w[i] = std::exp(ll[i] - out.observed_max);
    sum += w[i];
    sq += w[i] * w[i];
  }
  out.ess = sum * sum / sq;
  if (out.ess < kMinEss) {
    throw SamplingError("sir_resample: effective sample size " + std::to_string(out.ess) +
                        " is below 10; increase the proposal count");
  }
  std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
  RandomStream rng(seed, stream_id("sir-resample"));
  out.samples = Matrix(0, prior.dim());
  for (std::size_t i = 0; i < n_out; ++i) out.samples.append_row(draws.row(pick(rng.engine())));
  return out;
}

ReferenceSampleSet reference_posterior(const Task& task, std::span<const double> x_o, std::size_t n,
                                       std::uint64_t seed, std::size_t sir_proposals) {
  const auto loglik = task_log_likelihood(task, x_o);
  if (task.id == "slcp" || task.id == "sir") {
    return sir_resample(loglik, task.prior, std::max(sir_proposals, n), n, seed);
  }
  return rejection_sample(loglik, task.prior, n, seed);
}

}  // namespace mfsbi
