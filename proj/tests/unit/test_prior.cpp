// Copyright 2026 The mfsbi Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "doctest.h"
#include "mfsbi/errors.hpp"
#include "mfsbi/prior.hpp"

using namespace mfsbi;

TEST_CASE("uniform prior density and support") {
  auto p = Prior::uniform({0.1, 0.1}, {3.0, 0.6});
  const std::vector<double> inside{1.0, 0.3}, outside{3.5, 0.3};
  CHECK(p.log_density(inside) == doctest::Approx(-std::log(2.9 * 0.5)));
  CHECK(std::isinf(p.log_density(outside)));
  CHECK(p.contains(inside));
  CHECK_FALSE(p.contains(outside));
  auto draws = p.sample(5000, 3);
  for (std::size_t i = 0; i < draws.rows; ++i) CHECK(p.contains(draws.row(i)));
}

TEST_CASE("prior sampling is deterministic per seed") {
  auto p = Prior::uniform({0, 0, 0}, {1, 2, 3});
  auto a = p.sample(100, 7), b = p.sample(100, 7), c = p.sample(100, 8);
  CHECK(a.data == b.data);
  CHECK(a.data != c.data);
}

TEST_CASE("truncated log-normal prior integrates to one and matches its cdf") {
  Prior p({PriorDim::log_normal(std::log(0.4), 0.5, 0.001, 3.0)});
  const std::size_t n = 200000;
  double mass = 0.0;
  const double h = (3.0 - 0.001) / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::vector<double> v{0.001 + (static_cast<double>(i) + 0.5) * h};
    mass += std::exp(p.log_density(v)) * h;
  }
  CHECK(mass == doctest::Approx(1.0).epsilon(1e-4));

  auto draws = p.sample(20000, 11);
  std::size_t below = 0;
  for (std::size_t i = 0; i < draws.rows; ++i) below += draws(i, 0) < 0.4 ? 1 : 0;
  CHECK(static_cast<double>(below) / 20000.0 == doctest::Approx(p.cdf(0, 0.4)).epsilon(0.03));
  CHECK(p.cdf(0, 0.4) == doctest::Approx(0.5).epsilon(1e-4));
}

TEST_CASE("invalid prior configuration throws") {
  CHECK_THROWS_AS(Prior::uniform({1.0}, {0.0}), ConfigError);
  CHECK_THROWS_AS(Prior({PriorDim::log_normal(0.0, 1.0, 0.0, 1.0)}), ConfigError);
  CHECK_THROWS_AS(Prior({PriorDim::normal(0.0, 0.0, -1.0, 1.0)}), ConfigError);
}
