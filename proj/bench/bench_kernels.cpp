// Copyright 2026 The mfsbi Authors
// SPDX-License-Identifier: Apache-2.0

// Serial reference kernels against their OpenMP counterparts.
// Run with OMP_NUM_THREADS set to compare thread counts.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "mfsbi/kernels.hpp"

namespace {

std::vector<double> random_vector(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::vector<double> v(n);
  for (auto& x : v) x = nd(rng);
  return v;
}

template <bool Parallel>
void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_vector(n * n, 1);
  const auto b = random_vector(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel) mfsbi::kernels::matmul(a.data(), b.data(), c.data(), n, n, n);
    else mfsbi::kernels::serial::matmul(a.data(), b.data(), c.data(), n, n, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(n * n * n));
}

template <bool Parallel>
void BM_KernelSum(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const std::size_t d = 5;
  const auto x = random_vector(n * d, 3);
  const auto y = random_vector(n * d, 4);
  for (auto _ : state) {
    double s = Parallel ? mfsbi::kernels::gaussian_kernel_sum(x.data(), n, y.data(), n, d, 1.0)
                        : mfsbi::kernels::serial::gaussian_kernel_sum(x.data(), n, y.data(), n, d, 1.0);
    benchmark::DoNotOptimize(s);
  }
}

template <bool Parallel>
void BM_EnsembleVariance(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const std::size_t members = 5;
  const auto ld = random_vector(members * n, 5);
  std::vector<double> out(n);
  for (auto _ : state) {
    if constexpr (Parallel) mfsbi::kernels::ensemble_density_variance(ld.data(), members, n, out.data());
    else mfsbi::kernels::serial::ensemble_density_variance(ld.data(), members, n, out.data());
    benchmark::DoNotOptimize(out.data());
  }
}

}  // namespace

BENCHMARK(BM_Matmul<false>)->Arg(64)->Arg(256);
BENCHMARK(BM_Matmul<true>)->Arg(64)->Arg(256);
BENCHMARK(BM_KernelSum<false>)->Arg(1000)->Arg(4000);
BENCHMARK(BM_KernelSum<true>)->Arg(1000)->Arg(4000);
BENCHMARK(BM_EnsembleVariance<false>)->Arg(100000);
BENCHMARK(BM_EnsembleVariance<true>)->Arg(100000);

BENCHMARK_MAIN();
