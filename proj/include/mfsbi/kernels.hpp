// Copyright 2026 The mfsbi Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>

namespace mfsbi::kernels {

// Data-parallel inner loops. Every kernel has a straightforward serial
// reference in `serial::` that the tests compare against; the versions in
// the enclosing namespace are OpenMP-parallel over output rows and give
// bitwise-identical results for any thread count (each output element is
// produced by exactly one thread, reductions are finished serially).

/// c[m x n] (+)= a[m x k] * b[k x n]
void matmul(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
            std::size_t n, bool accumulate = false);
/// c[k x n] += a[m x k]^T * b[m x n]
void matmul_at_b_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                     std::size_t n);
/// c[m x k] += a[m x n] * b[k x n]^T
void matmul_a_bt_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
                     std::size_t k);

/// sum_ij exp(-|x_i - y_j|^2 / (2 h^2)) for row-major x[nx x d], y[ny x d].
double gaussian_kernel_sum(const double* x, std::size_t nx, const double* y, std::size_t ny,
                           std::size_t d, double bandwidth);

/// out[i * ny + j] = |x_i - y_j|
void pairwise_distances(const double* x, std::size_t nx, const double* y, std::size_t ny,
                        std::size_t d, double* out);

/// Unbiased variance over `members` of exp(log_densities[e * n + i]) for each i.
void ensemble_density_variance(const double* log_densities, std::size_t members, std::size_t n,
                               double* out);

/// Current OpenMP worker count (1 when built without OpenMP).
int max_threads();

namespace serial {
void matmul(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
            std::size_t n, bool accumulate = false);
void matmul_at_b_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                     std::size_t n);
void matmul_a_bt_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
                     std::size_t k);
double gaussian_kernel_sum(const double* x, std::size_t nx, const double* y, std::size_t ny,
                           std::size_t d, double bandwidth);
void pairwise_distances(const double* x, std::size_t nx, const double* y, std::size_t ny,
                        std::size_t d, double* out);
void ensemble_density_variance(const double* log_densities, std::size_t members, std::size_t n,
                               double* out);
}  // namespace serial

}  // namespace mfsbi::kernels
