// Copyright 2026 The mfsbi Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numbers>

#include "doctest.h"
#include "mfsbi/algorithms.hpp"
#include "mfsbi/errors.hpp"
#include "mfsbi/tasks.hpp"

using namespace mfsbi;

namespace {

// Isotropic normal in theta, ignoring x.
class StandardNormal final : public DensityModel {
 public:
  explicit StandardNormal(std::size_t dim) : dim_(dim) {}
  std::size_t theta_dim() const override { return dim_; }
  std::vector<double> log_prob(const Matrix& theta, const Matrix&) const override {
    std::vector<double> out(theta.rows);
    for (std::size_t i = 0; i < theta.rows; ++i) {
      double sq = 0.0;
      for (double v : theta.row(i)) sq += v * v;
      out[i] = -0.5 * sq - 0.5 * static_cast<double>(dim_) * std::log(2.0 * std::numbers::pi);
    }
    return out;
  }
  Matrix sample(std::size_t n, const Matrix&, std::uint64_t seed) const override {
    RandomStream rng(seed);
    Matrix m(n, dim_);
    for (auto& v : m.data) v = rng.normal();
    return m;
  }

 private:
  std::size_t dim_;
};

RunContext quick_context(const Task& task, std::uint64_t seed, std::size_t max_epochs = 8) {
  RunContext ctx;
  ctx.architecture = task.architecture;
  ctx.train.max_epochs = max_epochs;
  ctx.seed = seed;
  return ctx;
}

SimulationData simulate(const Task& task, std::size_t n, std::uint64_t seed) {
  return SimulationData::from(simulate_batch(task.high(), task.prior_source(), n, seed));
}

Matrix observation(double value) {
  Matrix x(1, 1);
  x(0, 0) = value;
  return x;
}

}  // namespace

TEST_CASE("npe recovers the conjugate posterior roughly") {
  const auto task = make_task("gaussian");
  const auto data = simulate(task, 3000, 1);
  auto ctx = quick_context(task, 3, 200);
  const auto run = run_npe(task.prior, data, ctx);
  CHECK(run.hf_simulations == 3000);
  CHECK(run.manifest["algorithm"] == "npe");
  const auto s = run.posterior.sample(4000, observation(1.0), 5);
  double mean = 0.0, sq = 0.0;
  for (double v : s.data) mean += v;
  mean /= static_cast<double>(s.rows);
  for (double v : s.data) sq += (v - mean) * (v - mean);
  const double var = sq / static_cast<double>(s.rows - 1);
  CHECK(mean == doctest::Approx(0.8).epsilon(0.15));
  CHECK(var == doctest::Approx(0.2).epsilon(0.25));
}

TEST_CASE("empty datasets are rejected with guidance") {
  const auto task = make_task("gaussian");
  const auto ctx = quick_context(task, 1);
  const SimulationData empty{Matrix(0, 1), Matrix(0, 1), 0};
  const auto data = simulate(task, 100, 2);
  CHECK_THROWS_AS(run_npe(task.prior, empty, ctx), ConfigError);
  try {
    run_mf_npe(task.prior, empty, data, ctx);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("run_npe") != std::string::npos);
  }
  CHECK_THROWS_AS(run_mf_npe_chain(task.prior, {data}, ctx), ConfigError);
  CHECK_THROWS_AS(run_mf_npe_chain(task.prior, {data, empty}, ctx), ConfigError);
}

TEST_CASE("mismatched data shapes are rejected") {
  const auto task = make_task("gaussian");
  const auto ctx = quick_context(task, 1);
  const auto data = simulate(task, 100, 2);
  SimulationData wide{Matrix(100, 2, 0.0), data.x, 100};
  CHECK_THROWS_AS(run_mf_npe_chain(task.prior, {data, wide}, ctx), ShapeError);
  SimulationData wrong_x{data.theta, Matrix(100, 3, 0.0), 100};
  CHECK_THROWS_AS(run_mf_npe(task.prior, wrong_x, data, ctx), ArchitectureMismatch);
}

TEST_CASE("a two level chain equals mf-npe under the same seed") {
  const auto task = make_task("gaussian");
  const auto ctx = quick_context(task, 7, 5);
  const auto lf = simulate(task, 300, 3), hf = simulate(task, 100, 4);
  const auto a = run_mf_npe(task.prior, lf, hf, ctx);
  const auto b = run_mf_npe_chain(task.prior, {lf, hf}, ctx);
  Matrix theta(5, 1);
  theta.data = {-1.0, -0.2, 0.0, 0.7, 2.0};
  CHECK(a.posterior.log_prob(theta, observation(0.3)) == b.posterior.log_prob(theta, observation(0.3)));
  CHECK(a.stages.size() == 2);
  CHECK(a.hf_simulations == 100);
}

TEST_CASE("a three level chain is deterministic") {
  const auto task = make_task("gaussian");
  const auto ctx = quick_context(task, 9, 4);
  const std::vector<SimulationData> levels{simulate(task, 200, 1), simulate(task, 150, 2), simulate(task, 100, 3)};
  const auto a = run_mf_npe_chain(task.prior, levels, ctx);
  const auto b = run_mf_npe_chain(task.prior, levels, ctx);
  Matrix theta(3, 1);
  theta.data = {-0.5, 0.1, 1.2};
  CHECK(a.posterior.log_prob(theta, observation(1.0)) == b.posterior.log_prob(theta, observation(1.0)));
  CHECK(a.stages.size() == 3);
}

TEST_CASE("hpr threshold matches the chi-square quantile of a standard normal") {
  const StandardNormal model(2);
  const Matrix x(1, 1, 0.0);
  // -2 log q - 2 ln(2 pi) ~ chi2(2), whose 0.9 quantile is -2 ln 0.1.
  const double analytic = -std::log(2.0 * std::numbers::pi) + std::log(0.1);
  CHECK(hpr_threshold(model, x, 0.1, 100000, 3) == doctest::Approx(analytic).epsilon(0.02 / std::abs(analytic)));
  const auto s = model.sample(5000, x, 4);
  const auto lp = model.log_prob(s, x);
  CHECK(hpr_threshold(model, x, 1e-9, 5000, 4) == *std::min_element(lp.begin(), lp.end()));
  CHECK_THROWS_AS(hpr_threshold(model, x, 0.1, 999, 1), ConfigError);
  CHECK_THROWS_AS(hpr_threshold(model, x, 0.0, 1000, 1), ConfigError);
}

TEST_CASE("truncated sampling honours the threshold") {
  const auto prior = Prior::uniform({-3.0, -3.0}, {3.0, 3.0});
  const Matrix x(1, 1, 0.0);
  TruncatedProposal open{prior, std::make_shared<StandardNormal>(2), x};
  const auto all = sample_truncated(open, 500, 1);
  CHECK(all.theta.rows == 500);
  CHECK(all.acceptance_rate == 1.0);

  TruncatedProposal tight = open;
  tight.threshold = -std::log(2.0 * std::numbers::pi) - 0.5;  // disc of radius 1
  const auto some = sample_truncated(tight, 800, 2);
  CHECK(some.theta.rows == 800);
  for (double v : StandardNormal(2).log_prob(some.theta, x)) CHECK(v >= tight.threshold);
  CHECK(some.acceptance_rate == doctest::Approx(std::numbers::pi / 36.0).epsilon(0.2));

  TruncatedProposal impossible = open;
  impossible.threshold = 10.0;
  CHECK_THROWS_AS(sample_truncated(impossible, 10, 3), SamplingError);
}

TEST_CASE("proposal source refills deterministically") {
  const auto prior = Prior::uniform({-3.0}, {3.0});
  TruncatedProposal p{prior, std::make_shared<StandardNormal>(1), Matrix(1, 1, 0.0), -1.5};
  ProposalSource a(p, 7, 11), b(p, 7, 11);
  RandomStream unused(0);
  std::vector<double> va(1), vb(1);
  for (int i = 0; i < 20; ++i) {
    a(unused, va);
    b(unused, vb);
    CHECK(va == vb);
  }
  CHECK(a.acceptance_rate() < 1.0);
  CHECK(a.accepted() == 21);
}

TEST_CASE("ensemble variance scores") {
  SUBCASE("identical members score exactly zero") {
    const auto task = make_task("gaussian");
    auto member = make_estimator(task.architecture, task.prior, 5);
    member.standardizer().set({0.3}, {1.7});
    const Posterior ensemble({member, member, member}, task.prior);
    const auto pool = task.prior.sample(200, 1);
    for (double s : acquisition_scores(pool, ensemble, observation(0.4))) CHECK(s == 0.0);
    const Posterior single({member}, task.prior);
    CHECK_THROWS_AS(acquisition_scores(pool, single, observation(0.4)), ConfigError);
  }
  SUBCASE("two shifted normals peak where the densities differ most") {
    std::vector<double> grid;
    for (int i = 0; i <= 4000; ++i) grid.push_back(-4.0 + 0.002 * i);
    std::vector<std::vector<double>> lp(2, std::vector<double>(grid.size()));
    std::size_t brute = 0;
    double best = -1.0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const double c = -0.5 * std::log(2.0 * std::numbers::pi);
      lp[0][i] = c - 0.5 * grid[i] * grid[i];
      lp[1][i] = c - 0.5 * (grid[i] - 2.0) * (grid[i] - 2.0);
      const double d = std::exp(lp[0][i]) - std::exp(lp[1][i]);
      if (d * d / 2.0 > best) {
        best = d * d / 2.0;
        brute = i;
      }
    }
    const auto scores = ensemble_variance(lp);
    const auto top = static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin());
    CHECK(top == brute);
    CHECK(scores[top] == doctest::Approx(best).epsilon(1e-12));
  }
  SUBCASE("scores do not depend on pool order") {
    const std::vector<std::vector<double>> lp{{-1.0, -2.0, -0.5}, {-1.5, -2.5, -0.1}, {-0.7, -2.2, -0.9}};
    const std::vector<std::vector<double>> swapped{{-0.5, -1.0, -2.0}, {-0.1, -1.5, -2.5}, {-0.9, -0.7, -2.2}};
    const auto a = ensemble_variance(lp), b = ensemble_variance(swapped);
    CHECK(a[0] == b[1]);
    CHECK(a[1] == b[2]);
    CHECK(a[2] == b[0]);
  }
}

TEST_CASE("active sequential runs split every round into proposal and pool rows") {
  const auto task = make_task("gaussian");
  auto ctx = quick_context(task, 21, 6);
  std::vector<std::string> notes;
  ctx.log = [&](const std::string& m) { notes.push_back(m); };
  const auto lf = simulate(task, 300, 5);
  SequentialConfig cfg;
  cfg.rounds = 2;
  cfg.per_round = 100;
  cfg.n_mc = 1000;
  cfg.coverage_draws = 20;
  ActiveConfig active;
  active.ensemble = 2;
  const auto x_o = observation(0.5);
  const auto run = run_a_mf_tsnpe(task.prior, lf, task.high(), x_o, cfg, active, ctx);
  REQUIRE(run.rounds.size() == 2);
  for (const auto& r : run.rounds) {
    CHECK(r.proposal_rows == 80);
    CHECK(r.active_rows == 20);
    CHECK(r.training.size() == 2);
    CHECK(r.coverage.pairs == 100);
  }
  CHECK(run.run.hf_simulations == 200);
  CHECK(run.run.manifest["hf_simulations"] == 200);
  CHECK(run.run.posterior.size() == 2);
  CHECK(std::isinf(run.rounds[0].threshold));
  const auto& second = run.rounds[1];
  REQUIRE(second.proposal_log_q.size() == 80);
  for (double v : second.proposal_log_q) CHECK(v >= second.threshold);
  CHECK_NOTHROW(run.run.posterior.log_prob(Matrix(1, 1, 0.3), x_o));
  CHECK_THROWS_AS(run.run.posterior.log_prob(Matrix(1, 1, 0.3), observation(0.6)), ConfigError);

  Matrix theta(4, 1);
  theta.data = {-1.0, 0.0, 0.4, 1.5};
  const auto mixture = run.run.posterior.log_prob(theta, x_o);
  const auto members = run.run.posterior.member_log_probs(theta, x_o);
  for (std::size_t i = 0; i < theta.rows; ++i) {
    const double manual = std::log(0.5 * (std::exp(members[0][i]) + std::exp(members[1][i])));
    CHECK(mixture[i] == doctest::Approx(manual).epsilon(1e-10));
  }
}

TEST_CASE("an exhausted pool falls back to the proposal") {
  const auto task = make_task("gaussian");
  auto ctx = quick_context(task, 22, 3);
  std::vector<std::string> notes;
  ctx.log = [&](const std::string& m) { notes.push_back(m); };
  SequentialConfig cfg;
  cfg.rounds = 2;
  cfg.per_round = 50;
  cfg.n_mc = 1000;
  cfg.coverage_draws = 0;
  ActiveConfig active;
  active.ensemble = 2;
  active.pool_size = 12;
  const auto run = run_a_mf_tsnpe(task.prior, simulate(task, 200, 6), task.high(), observation(0.0), cfg, active, ctx);
  CHECK(run.rounds[0].active_rows == 10);
  CHECK_FALSE(run.rounds[0].pool_exhausted);
  CHECK(run.rounds[1].active_rows == 2);
  CHECK(run.rounds[1].proposal_rows == 48);
  CHECK(run.rounds[1].pool_exhausted);
  CHECK(run.run.hf_simulations == 100);
  CHECK(std::any_of(notes.begin(), notes.end(), [](const std::string& n) { return n.find("exhausted") != std::string::npos; }));
}

TEST_CASE("tsnpe with one round uses the prior and keeps the budget") {
  const auto task = make_task("gaussian");
  SequentialConfig cfg;
  cfg.rounds = 1;
  cfg.per_round = 120;
  cfg.n_mc = 1000;
  cfg.coverage_draws = 0;
  const auto run = run_tsnpe(task.prior, task.high(), observation(1.0), cfg, quick_context(task, 4, 5));
  CHECK(run.rounds[0].acceptance_rate == 1.0);
  CHECK(run.rounds[0].proposal_log_q.empty());
  CHECK(run.run.hf_simulations == 120);
  CHECK_THROWS_AS(run_mf_tsnpe(task.prior, SimulationData{Matrix(0, 1), Matrix(0, 1), 0}, task.high(),
                               observation(1.0), cfg, quick_context(task, 4)),
                  ConfigError);
  ActiveConfig bad;
  bad.ensemble = 1;
  CHECK_THROWS_AS(run_a_mf_tsnpe(task.prior, simulate(task, 50, 1), task.high(), observation(1.0), cfg, bad,
                                 quick_context(task, 4)),
                  ConfigError);
}

TEST_CASE("round data modes") {
  CHECK(parse_round_data("accumulate") == RoundData::kAccumulate);
  CHECK(parse_round_data("last") == RoundData::kLast);
  CHECK_THROWS_AS(parse_round_data("all"), ConfigError);
  CHECK(ActiveConfig{}.active_per_round(100) == 20);
  CHECK(ActiveConfig{}.active_per_round(37) == 7);
}

TEST_CASE("shared pretraining reproduces per-run pretraining") {
  const auto task = make_task("gaussian");
  const auto ctx = quick_context(task, 31, 4);
  const auto lf = simulate(task, 200, 7);
  SequentialConfig cfg;
  cfg.rounds = 2;
  cfg.per_round = 40;
  cfg.n_mc = 1000;
  cfg.coverage_draws = 0;
  const auto shared = pretrain(task.prior, lf, 1, ctx);
  for (double x : {-0.5, 0.8}) {
    const auto direct = run_mf_tsnpe(task.prior, lf, task.high(), observation(x), cfg, ctx);
    const auto reused = run_mf_tsnpe(task.prior, shared, task.high(), observation(x), cfg, ctx);
    Matrix theta(3, 1);
    theta.data = {-1.0, 0.1, 0.9};
    CHECK(direct.run.posterior.log_prob(theta, observation(x)) == reused.run.posterior.log_prob(theta, observation(x)));
  }
  ActiveConfig active;
  active.ensemble = 2;
  CHECK_THROWS_AS(run_a_mf_tsnpe(task.prior, shared, task.high(), observation(0.0), cfg, active, ctx), ConfigError);
}
