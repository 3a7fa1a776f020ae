// Copyright 2026 The mfsbi Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace mfsbi {

using Engine = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x);

/// Counter-based seed derivation: (seed, stream, index) -> independent seed.
/// Streams separate different uses of one user seed (theta draws,
/// simulator noise, weight init, ...); index separates rows.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0);

/// Compile-time stream tag from a short string.
constexpr std::uint64_t stream_id(std::string_view name) {
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

/// Engine plus cached distributions. One stream per worker; never shared.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : engine_(seed) {}
  RandomStream(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0)
      : engine_(derive_seed(seed, stream, index)) {}

  double normal() { return normal_(engine_); }
  double normal(double mean, double std) { return mean + std * normal_(engine_); }
  /// Uniform on [0, 1).
  double uniform() { return uniform_(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform_(engine_); }
  std::uint64_t next() { return engine_(); }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n);
  int binomial(int trials, double p);

  Engine& engine() { return engine_; }

 private:
  Engine engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace mfsbi
