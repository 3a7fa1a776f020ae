// Copyright 2026 The mfsbi Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <map>

#include "doctest.h"
#include "mfsbi/errors.hpp"
#include "mfsbi/mfabc.hpp"
#include "mfsbi/rng.hpp"
#include "mfsbi/tasks.hpp"

using namespace mfsbi;

namespace {

// Output depends on theta only through floor(theta), so each unit cell of
// the prior behaves like one discrete parameter value.
class CellSimulator final : public Simulator {
 public:
  CellSimulator(double noise, double shift) : noise_(noise), shift_(shift) {}
  std::string name() const override { return "cell"; }
  std::size_t theta_dim() const override { return 1; }
  std::size_t x_dim() const override { return 1; }
  std::vector<double> simulate(std::span<const double> theta, std::uint64_t seed) const override {
    RandomStream rng(seed);
    return {std::floor(theta[0]) + shift_ + noise_ * rng.normal()};
  }

 private:
  double noise_, shift_;
};

std::vector<WeightedParticle> with_weights(const std::vector<double>& weights) {
  std::vector<WeightedParticle> out;
  for (std::size_t i = 0; i < weights.size(); ++i) out.push_back({{static_cast<double>(i)}, weights[i]});
  return out;
}

}  // namespace

TEST_CASE("full continuation reduces to rejection ABC") {
  const auto task = make_task("ou2");
  const auto x_o = task.high().simulate(std::vector<double>{1.5, 0.3}, 3);
  MfAbcConfig cfg;
  cfg.eta_accept = cfg.eta_reject = 1.0;
  cfg.epsilon_high = 3.0;
  cfg.pilot = 2000;
  const auto mf = run_mf_abc(task.prior, task.low(), task.high(), x_o, 3000, cfg, 11);
  const auto plain = rejection_abc(task.prior, task.high(), x_o, 3000, 3.0, 2000, 11);
  CHECK(mf.hf_calls == 3000);
  std::size_t accepted = 0;
  for (std::size_t i = 0; i < 3000; ++i) {
    CHECK(mf.particles[i].theta == plain.particles[i].theta);
    CHECK(mf.particles[i].weight == plain.particles[i].weight);
    accepted += plain.particles[i].weight > 0.0 ? 1 : 0;
  }
  CHECK(accepted > 0);
}

TEST_CASE("high fidelity call fraction follows the continuation probabilities") {
  const auto task = make_task("ou2");
  const auto x_o = task.high().simulate(std::vector<double>{1.0, 0.4}, 5);
  MfAbcConfig cfg;
  cfg.pilot = 2000;
  cfg.epsilon_low = 3.0;  // enough low fidelity accepts to see both branches
  const std::size_t n = 20000;
  const auto r = run_mf_abc(task.prior, task.low(), task.high(), x_o, n, cfg, 12);
  const double p = r.low_acceptance();
  CHECK(p > 0.01);
  const double expected = p * cfg.eta_accept + (1.0 - p) * cfg.eta_reject;
  const double se = std::sqrt(expected * (1.0 - expected) / static_cast<double>(n));
  CHECK(std::abs(r.hf_fraction() - expected) < 2.5 * se);
}

TEST_CASE("multifidelity weights are unbiased for the high fidelity acceptance") {
  const Prior prior = Prior::uniform({0.0}, {3.0});
  const CellSimulator low(0.5, 0.0), high(0.7, 0.3);
  const std::vector<double> x_o{1.0};
  MfAbcConfig cfg;
  cfg.pilot = 5000;
  cfg.epsilon_low = 0.8;
  cfg.epsilon_high = 0.6;
  const std::size_t n = 60000;
  const auto mf = run_mf_abc(prior, low, high, x_o, n, cfg, 21);
  const auto truth = rejection_abc(prior, high, x_o, n, cfg.epsilon_high, cfg.pilot, 22);
  std::map<int, std::vector<double>> mf_cells, truth_cells;
  for (const auto& p : mf.particles) mf_cells[static_cast<int>(p.theta[0])].push_back(p.weight);
  for (const auto& p : truth.particles) truth_cells[static_cast<int>(p.theta[0])].push_back(p.weight);
  for (int c = 0; c < 3; ++c) {
    auto stats = [](const std::vector<double>& v) {
      double m = 0.0, s = 0.0;
      for (double w : v) m += w;
      m /= static_cast<double>(v.size());
      for (double w : v) s += (w - m) * (w - m);
      return std::pair{m, s / static_cast<double>(v.size() - 1) / static_cast<double>(v.size())};
    };
    const auto [m1, v1] = stats(mf_cells[c]);
    const auto [m2, v2] = stats(truth_cells[c]);
    CHECK(std::abs(m1 - m2) < 4.0 * std::sqrt(v1 + v2));
  }
}

TEST_CASE("abc failure modes") {
  const Prior prior = Prior::uniform({0.0}, {3.0});
  const CellSimulator sim(0.5, 0.0);
  MfAbcConfig cfg;
  cfg.pilot = 100;
  cfg.epsilon_low = cfg.epsilon_high = 1e-9;
  CHECK_THROWS_AS(run_mf_abc(prior, sim, sim, std::vector<double>{1.0}, 50, cfg, 1), SamplingError);
  cfg.eta_accept = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK_THROWS_AS(run_mf_abc(prior, sim, sim, std::vector<double>{1.0, 2.0}, 50, MfAbcConfig{}, 1), ShapeError);
}

TEST_CASE("resampling particles") {
  SUBCASE("equal weights resample uniformly") {
    const auto r = resample_particles(with_weights({1.0, 1.0, 1.0, 1.0}), 40000, 3);
    std::vector<double> counts(4, 0.0);
    for (double v : r.theta.data) counts[static_cast<std::size_t>(v)] += 1.0;
    const double se = std::sqrt(40000 * 0.25 * 0.75);
    for (double c : counts) CHECK(std::abs(c - 10000.0) < 3.0 * se);
  }
  SUBCASE("a single positive weight takes every draw") {
    const auto r = resample_particles(with_weights({0.0, 1.0, 0.0}), 50, 4);
    for (double v : r.theta.data) CHECK(v == 1.0);
  }
  SUBCASE("negative mass is dropped and reported") {
    std::vector<std::string> notes;
    const auto r = resample_particles(with_weights({2.0, -0.5, 1.0}), 100, 5, [&](const std::string& m) { notes.push_back(m); });
    CHECK(r.negative_mass == 0.5);
    CHECK(r.positive_mass == 3.0);
    CHECK(notes.size() == 1);
    for (double v : r.theta.data) CHECK(v != 1.0);
  }
  SUBCASE("non-positive totals are rejected") {
    CHECK_THROWS_AS(resample_particles(with_weights({0.0, 0.0}), 10, 1), SamplingError);
    CHECK_THROWS_AS(resample_particles(with_weights({1.0, -2.0}), 10, 1), SamplingError);
  }
}
