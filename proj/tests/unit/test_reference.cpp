// Copyright 2026 The mfsbi Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numbers>

#include "doctest.h"
#include "mfsbi/errors.hpp"
#include "mfsbi/metrics.hpp"
#include "mfsbi/reference.hpp"
#include "mfsbi/tasks.hpp"

using namespace mfsbi;

namespace {

double normal_logpdf(double x, double mean, double var) {
  return -0.5 * (std::log(2.0 * std::numbers::pi * var) + (x - mean) * (x - mean) / var);
}

std::vector<double> column(const Matrix& m, std::size_t j) {
  std::vector<double> out(m.rows);
  for (std::size_t i = 0; i < m.rows; ++i) out[i] = m(i, j);
  return out;
}

std::pair<double, double> mean_var(const std::vector<double>& v) {
  double m = 0.0, s = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  for (double x : v) s += (x - m) * (x - m);
  return {m, s / static_cast<double>(v.size() - 1)};
}

}  // namespace

TEST_CASE("a single OU point at its mean is a standard normal peak") {
  const OuParams p{1.2, 0.3, 0.5, 3.0};
  const std::vector<double> x{4.2};
  CHECK(ou_exact_loglik(p, x, 1.1) == doctest::Approx(-0.5 * std::log(2.0 * std::numbers::pi)).epsilon(1e-15));
}

TEST_CASE("long OU transitions reduce to the stationary law") {
  const OuParams p{1.0, 0.4, 2.0, 3.0};
  const std::vector<double> x{3.7, 1.3};
  const double spacing = 20.0 / p.rate;
  const double transition = ou_exact_loglik(p, x, spacing) - normal_logpdf(x[0], p.mean + p.offset, 1.0);
  CHECK(std::abs(transition - normal_logpdf(x[1], p.mean, p.sigma * p.sigma / (2.0 * p.rate))) < 1e-8);
}

TEST_CASE("subsampled OU likelihood equals composed fine transitions") {
  const OuParams p{0.8, 0.35, 0.7, 2.0};
  const double dt = 0.1;
  const std::size_t k = 11;
  const std::vector<double> x{2.4, 1.9, 1.1};
  // k fine steps compose to one Gaussian with mean decay a^k and summed variance.
  const double a = std::exp(-p.rate * dt);
  const double v = p.sigma * p.sigma * (1.0 - a * a) / (2.0 * p.rate);
  double decay = 1.0, var = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    var += decay * decay * v;
    decay *= a;
  }
  double composed = normal_logpdf(x[0], p.mean + p.offset, 1.0);
  for (std::size_t t = 1; t < x.size(); ++t) composed += normal_logpdf(x[t], p.mean + decay * (x[t - 1] - p.mean), var);
  CHECK(std::abs(ou_exact_loglik(p, x, static_cast<double>(k) * dt) - composed) < 1e-10);
}

TEST_CASE("OU transition density matches fine Euler-Maruyama simulation") {
  const OuParams p{1.0, 0.5, 0.8, 0.0};
  const double x0 = 2.0, dt = 0.1, micro = 1e-3;
  const std::size_t n = 100000, bins = 60;
  const double mean = p.mean + (x0 - p.mean) * std::exp(-p.rate * dt);
  const double sd = std::sqrt(p.sigma * p.sigma * -std::expm1(-2.0 * p.rate * dt) / (2.0 * p.rate));
  const double lo = mean - 5 * sd, width = 10 * sd / bins;
  std::vector<double> hist(bins, 0.0);
  RandomStream rng(9);
  const auto steps = static_cast<std::size_t>(std::llround(dt / micro));
  for (std::size_t i = 0; i < n; ++i) {
    double x = x0;
    for (std::size_t s = 0; s < steps; ++s) x += p.rate * (p.mean - x) * micro + p.sigma * std::sqrt(micro) * rng.normal();
    const auto b = static_cast<std::ptrdiff_t>(std::floor((x - lo) / width));
    if (b >= 0 && b < static_cast<std::ptrdiff_t>(bins)) hist[static_cast<std::size_t>(b)] += 1.0 / n;
  }
  double l1 = 0.0;
  for (std::size_t b = 0; b < bins; ++b) {
    double mass = 0.0;
    for (int q = 0; q < 20; ++q) {
      const double v = lo + (static_cast<double>(b) + (q + 0.5) / 20.0) * width;
      mass += std::exp(ou_exact_loglik(p, std::vector<double>{x0, v}, dt) - normal_logpdf(x0, p.mean + p.offset, 1.0)) *
              width / 20.0;
    }
    l1 += std::abs(mass - hist[b]);
  }
  CHECK(l1 < 0.04);
}

TEST_CASE("invalid OU parameters are domain errors") {
  const std::vector<double> x{1.0, 2.0};
  CHECK_THROWS_AS(ou_exact_loglik({1.0, 0.0, 0.5, 3.0}, x, 1.0), DomainError);
  CHECK_THROWS_AS(ou_exact_loglik({1.0, 0.3, 0.5, 3.0}, std::vector<double>{}, 1.0), ShapeError);
}

TEST_CASE("rejection sampling with a flat likelihood returns the prior") {
  const auto prior = Prior::uniform({0.0, -1.0}, {2.0, 1.0});
  const auto r = rejection_sample([](std::span<const double>) { return 0.0; }, prior, 4000, 3);
  CHECK(r.samples.rows == 4000);
  CHECK(r.acceptance_rate == doctest::Approx(std::exp(-2.0)).epsilon(0.05));
  const auto reference = prior.sample(4000, 99);
  for (std::size_t j = 0; j < 2; ++j) CHECK(ks_two_sample(column(r.samples, j), column(reference, j)).p_value > 0.01);
}

TEST_CASE("rejection sampling recovers a conjugate Gaussian posterior") {
  const auto prior = Prior::uniform({-10.0}, {10.0});
  auto loglik = [](std::span<const double> t) { return normal_logpdf(1.0, t[0], 0.25); };
  const auto r = rejection_sample(loglik, prior, 10000, 4);
  const auto [m, v] = mean_var(column(r.samples, 0));
  CHECK(std::abs(m - 1.0) < 3.0 * std::sqrt(0.25 / 10000));
  CHECK(std::abs(v - 0.25) < 3.0 * 0.25 * std::sqrt(2.0 / 10000));
  RejectionConfig looser;
  looser.extra_margin = 5.0;
  const auto r2 = rejection_sample(loglik, prior, 2000, 5, looser);
  CHECK(ks_two_sample(column(r.samples, 0), column(r2.samples, 0)).p_value > 0.01);
}

TEST_CASE("rejection sampling restarts when the bound is exceeded") {
  const auto prior = Prior::uniform({0.0}, {1.0});
  RejectionConfig cfg;
  cfg.bound_draws = 3;
  std::vector<std::string> notes;
  const auto r = rejection_sample([](std::span<const double> t) { return 30.0 * t[0]; }, prior, 200, 6, cfg,
                                  [&](const std::string& m) { notes.push_back(m); });
  CHECK(r.bound_raises >= 1);
  CHECK(notes.size() == r.bound_raises);
  CHECK(r.bound >= r.observed_max);
  cfg = {};
  cfg.min_acceptance = 0.5;
  CHECK_THROWS_AS(rejection_sample([](std::span<const double>) { return 0.0; }, prior, 10, 1, cfg), SamplingError);
}

TEST_CASE("sir resampling weights and effective sample size") {
  const auto prior = Prior::uniform({-1.0}, {1.0});
  const auto flat = sir_resample([](std::span<const double>) { return 0.0; }, prior, 5000, 100, 2);
  CHECK(flat.ess == 5000.0);
  CHECK(flat.samples.rows == 100);
  CHECK_THROWS_AS(sir_resample([](std::span<const double> t) { return -1e6 * t[0] * t[0]; }, prior, 5000, 100, 2),
                  SamplingError);
  CHECK_THROWS_AS(sir_resample([](std::span<const double>) { return 0.0; }, prior, 10, 100, 2), ConfigError);
}

TEST_CASE("sir and rejection agree on SLCP over a narrowed prior") {
  const auto task = make_task("slcp");
  const std::vector<double> truth{0.7, -2.9, -1.0, -0.9, 0.6};
  const auto x_o = task.high().simulate(truth, 17);
  const auto loglik = task_log_likelihood(task, x_o);
  std::vector<double> lo, hi;
  for (double t : truth) {
    lo.push_back(t - 0.4);
    hi.push_back(t + 0.4);
  }
  const auto narrow = Prior::uniform(lo, hi);
  const auto sir = sir_resample(loglik, narrow, 100000, 4000, 3);
  const auto rej = rejection_sample(loglik, narrow, 4000, 4);
  for (std::size_t j = 0; j < 5; ++j) {
    const auto [ms, vs] = mean_var(column(sir.samples, j));
    const auto [mr, vr] = mean_var(column(rej.samples, j));
    const double se = std::sqrt(vs / std::min(sir.ess, 4000.0) + vr / 4000.0);
    CHECK(std::abs(ms - mr) < 3.0 * se);
  }
}

TEST_CASE("task likelihoods") {
  const auto blob = make_task("blob");
  CHECK_THROWS_AS(task_log_likelihood(blob, std::vector<double>(blob.x_dim(), 0.0)), ConfigError);

  const auto sir = make_task("sir");
  const std::vector<double> truth{0.5, 0.12};
  const auto x_o = sir.high().simulate(truth, 4);
  const auto ll = task_log_likelihood(sir, x_o);
  CHECK(std::isfinite(ll(truth)));
  CHECK(ll(truth) > ll(std::vector<double>{1.5, 0.5}));

  const auto ou = make_task("ou2");
  const auto x = ou.high().simulate(std::vector<double>{1.0, 0.3}, 5);
  const auto ou_ll = task_log_likelihood(ou, x);
  const OuParams p = ou_params(OuVariant::kTwo, std::vector<double>{1.0, 0.3});
  CHECK(ou_ll(std::vector<double>{1.0, 0.3}) == ou_exact_loglik(p, x, 1.1));
  CHECK_THROWS_AS(task_log_likelihood(ou, x, true), ShapeError);
}

TEST_CASE("reference posterior dispatches by task") {
  const auto task = make_task("gaussian");
  const std::vector<double> x_o{0.5};
  const auto r = reference_posterior(task, x_o, 3000, 8);
  CHECK(r.method == "rejection");
  const auto [m, v] = mean_var(column(r.samples, 0));
  CHECK(m == doctest::Approx(0.4).epsilon(0.05));
  CHECK(v == doctest::Approx(0.2).epsilon(0.1));
}
