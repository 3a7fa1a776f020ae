// Copyright 2026 The mfsbi Authors
// SPDX-License-Identifier: Apache-2.0

#include "mfsbi/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mfsbi::kernels {

namespace {
// Below this many multiply-adds the fork/join cost dominates.
constexpr std::size_t kParallelWork = 1u << 16;
}  // namespace

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void matmul(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
            std::size_t n, bool accumulate) {
  const bool par = m * k * n >= kParallelWork && m > 1;
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(m); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    double* crow = c + i * n;
    if (!accumulate) {
      for (std::size_t j = 0; j < n; ++j) crow[j] = 0.0;
    }
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void matmul_at_b_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                     std::size_t n) {
  // Parallel over rows of c (columns of a) so each output row has one owner.
  const bool par = m * k * n >= kParallelWork && k > 1;
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t pp = 0; pp < static_cast<std::ptrdiff_t>(k); ++pp) {
    const auto p = static_cast<std::size_t>(pp);
    double* crow = c + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void matmul_a_bt_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
                     std::size_t k) {
  // Work on a transposed copy of b so the inner loop is a contiguous axpy;
  // each output still sums its products in j order, as in the serial version.
  std::vector<double> bt(n * k);
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
  }
  const bool par = m * k * n >= kParallelWork && m > 1;
#pragma omp parallel if (par)
  {
    std::vector<double> acc(k);
#pragma omp for schedule(static)
    for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(m); ++ii) {
      const auto i = static_cast<std::size_t>(ii);
      const double* arow = a + i * n;
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t j = 0; j < n; ++j) {
        const double av = arow[j];
        const double* brow = bt.data() + j * k;
        for (std::size_t p = 0; p < k; ++p) acc[p] += av * brow[p];
      }
      double* crow = c + i * k;
      for (std::size_t p = 0; p < k; ++p) crow[p] += acc[p];
    }
  }
}

double gaussian_kernel_sum(const double* x, std::size_t nx, const double* y, std::size_t ny,
                           std::size_t d, double bandwidth) {
  const double scale = -0.5 / (bandwidth * bandwidth);
  std::vector<double> partial(nx, 0.0);
#pragma omp parallel for schedule(static) if (nx * ny > 4096)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(nx); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const double* xi = x + i * d;
    double s = 0.0;
    for (std::size_t j = 0; j < ny; ++j) {
      const double* yj = y + j * d;
      double d2 = 0.0;
      for (std::size_t t = 0; t < d; ++t) {
        const double diff = xi[t] - yj[t];
        d2 += diff * diff;
      }
      s += std::exp(scale * d2);
    }
    partial[i] = s;
  }
  double total = 0.0;
  for (double p : partial) total += p;
  return total;
}

void pairwise_distances(const double* x, std::size_t nx, const double* y, std::size_t ny,
                        std::size_t d, double* out) {
#pragma omp parallel for schedule(static) if (nx * ny > 4096)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(nx); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const double* xi = x + i * d;
    for (std::size_t j = 0; j < ny; ++j) {
      const double* yj = y + j * d;
      double d2 = 0.0;
      for (std::size_t t = 0; t < d; ++t) {
        const double diff = xi[t] - yj[t];
        d2 += diff * diff;
      }
      out[i * ny + j] = std::sqrt(d2);
    }
  }
}

void ensemble_density_variance(const double* log_densities, std::size_t members, std::size_t n,
                               double* out) {
  const double m = static_cast<double>(members);
#pragma omp parallel for schedule(static) if (n * members > 4096)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(n); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    // Shifted by the first member so identical members give exactly zero.
    const double ref = std::exp(log_densities[i]);
    double sum = 0.0, sum_sq = 0.0;
    for (std::size_t e = 0; e < members; ++e) {
      const double d = std::exp(log_densities[e * n + i]) - ref;
      sum += d;
      sum_sq += d * d;
    }
    out[i] = std::max(0.0, (sum_sq - sum * sum / m) / (m - 1.0));
  }
}

namespace serial {

void matmul(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
            std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = accumulate ? c[i * n + j] : 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
  }
}

void matmul_at_b_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                     std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < m; ++i) s += a[i * k + p] * b[i * n + j];
      c[p * n + j] += s;
    }
  }
}

void matmul_a_bt_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
                     std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += a[i * n + j] * b[p * n + j];
      c[i * k + p] += s;
    }
  }
}

double gaussian_kernel_sum(const double* x, std::size_t nx, const double* y, std::size_t ny,
                           std::size_t d, double bandwidth) {
  double total = 0.0;
  for (std::size_t i = 0; i < nx; ++i) {
    for (std::size_t j = 0; j < ny; ++j) {
      double d2 = 0.0;
      for (std::size_t t = 0; t < d; ++t) {
        const double diff = x[i * d + t] - y[j * d + t];
        d2 += diff * diff;
      }
      total += std::exp(-d2 / (2.0 * bandwidth * bandwidth));
    }
  }
  return total;
}

void pairwise_distances(const double* x, std::size_t nx, const double* y, std::size_t ny,
                        std::size_t d, double* out) {
  for (std::size_t i = 0; i < nx; ++i) {
    for (std::size_t j = 0; j < ny; ++j) {
      double d2 = 0.0;
      for (std::size_t t = 0; t < d; ++t) {
        const double diff = x[i * d + t] - y[j * d + t];
        d2 += diff * diff;
      }
      out[i * ny + j] = std::sqrt(d2);
    }
  }
}

void ensemble_density_variance(const double* log_densities, std::size_t members, std::size_t n,
                               double* out) {
  for (std::size_t i = 0; i < n; ++i) {
    const double ref = std::exp(log_densities[i]);
    double sum = 0.0;
    double sum_sq = 0.0;
    for (std::size_t e = 0; e < members; ++e) {
      const double d = std::exp(log_densities[e * n + i]) - ref;
      sum += d;
      sum_sq += d * d;
    }
    const double m = static_cast<double>(members);
    out[i] = std::max(0.0, (sum_sq - sum * sum / m) / (m - 1.0));
  }
}

}  // namespace serial

}  // namespace mfsbi::kernels
