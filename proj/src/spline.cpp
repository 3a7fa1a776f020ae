// Copyright 2026 The mfsbi Authors
// SPDX-License-Identifier: Apache-2.0

#include "mfsbi/spline.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "mfsbi/errors.hpp"

namespace mfsbi::flow {

namespace {

// Forward-mode dual number over the seven local quantities of one bin:
// (u, x_left, x_right, y_left, y_right, d_left, d_right).
constexpr int kLocal = 7;

struct Dual {
  double v = 0.0;
  std::array<double, kLocal> d{};

  static Dual var(double value, int slot) {
    Dual r{value, {}};
    r.d[static_cast<std::size_t>(slot)] = 1.0;
    return r;
  }
};

Dual operator+(const Dual& a, const Dual& b) {
  Dual r{a.v + b.v, {}};
  for (int i = 0; i < kLocal; ++i) r.d[i] = a.d[i] + b.d[i];
  return r;
}
Dual operator-(const Dual& a, const Dual& b) {
  Dual r{a.v - b.v, {}};
  for (int i = 0; i < kLocal; ++i) r.d[i] = a.d[i] - b.d[i];
  return r;
}
Dual operator*(const Dual& a, const Dual& b) {
  Dual r{a.v * b.v, {}};
  for (int i = 0; i < kLocal; ++i) r.d[i] = a.d[i] * b.v + a.v * b.d[i];
  return r;
}
Dual operator/(const Dual& a, const Dual& b) {
  Dual r{a.v / b.v, {}};
  const double inv = 1.0 / (b.v * b.v);
  for (int i = 0; i < kLocal; ++i) r.d[i] = (a.d[i] * b.v - a.v * b.d[i]) * inv;
  return r;
}
Dual operator*(double s, const Dual& a) {
  Dual r{s * a.v, {}};
  for (int i = 0; i < kLocal; ++i) r.d[i] = s * a.d[i];
  return r;
}
Dual operator-(double s, const Dual& a) {
  Dual r{s - a.v, {}};
  for (int i = 0; i < kLocal; ++i) r.d[i] = -a.d[i];
  return r;
}
Dual log(const Dual& a) {
  Dual r{std::log(a.v), {}};
  for (int i = 0; i < kLocal; ++i) r.d[i] = a.d[i] / a.v;
  return r;
}

using std::log;

// Rational-quadratic segment; T is double or Dual.
template <class T>
void segment(const T& u, const T& xl, const T& xr, const T& yl, const T& yr, const T& dl, const T& dr,
             T& y, T& log_deriv) {
  const T w = xr - xl;
  const T h = yr - yl;
  const T s = h / w;
  const T xi = (u - xl) / w;
  const T xi1 = xi * (1.0 - xi);
  const T den = s + (dl + dr - 2.0 * s) * xi1;
  y = yl + h * (s * xi * xi + dl * xi1) / den;
  const T one_m = 1.0 - xi;
  const T num_d = s * s * (dr * xi * xi + 2.0 * s * xi1 + dl * one_m * one_m);
  log_deriv = log(num_d) - 2.0 * log(den);
}

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

// Softmax of `raw` rescaled so every fraction is >= min_frac.
void bin_fractions(std::span<const double> raw, double min_frac, std::vector<double>& soft,
                   std::vector<double>& frac) {
  const std::size_t k = raw.size();
  const double mx = *std::max_element(raw.begin(), raw.end());
  double z = 0.0;
  soft.resize(k);
  frac.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    soft[i] = std::exp(raw[i] - mx);
    z += soft[i];
  }
  for (std::size_t i = 0; i < k; ++i) {
    soft[i] /= z;
    frac[i] = min_frac + (1.0 - min_frac * static_cast<double>(k)) * soft[i];
  }
}

double derivative_shift(const SplineConfig& c) { return std::log(std::expm1(1.0 - c.min_derivative)); }

std::size_t find_bin(const std::vector<double>& knots, double v) {
  const std::size_t k = knots.size() - 1;
  auto it = std::upper_bound(knots.begin() + 1, knots.end() - 1, v);
  return std::min<std::size_t>(static_cast<std::size_t>(it - knots.begin()) - 1, k - 1);
}

struct Workspace {
  std::vector<double> soft_w, frac_w, soft_h, frac_h;
  SplineKnots knots;
};

void build(const SplineConfig& c, std::span<const double> raw, Workspace& ws) {
  const std::size_t k = c.bins;
  const double b = c.tail_bound;
  bin_fractions(raw.subspan(0, k), c.min_bin_width, ws.soft_w, ws.frac_w);
  bin_fractions(raw.subspan(k, k), c.min_bin_height, ws.soft_h, ws.frac_h);
  auto& kn = ws.knots;
  kn.x.resize(k + 1);
  kn.y.resize(k + 1);
  kn.deriv.resize(k + 1);
  double cw = 0.0, ch = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    kn.x[i] = -b + 2.0 * b * cw;
    kn.y[i] = -b + 2.0 * b * ch;
    cw += ws.frac_w[i];
    ch += ws.frac_h[i];
  }
  kn.x[k] = b;
  kn.y[k] = b;
  const double shift = derivative_shift(c);
  kn.deriv[0] = 1.0;
  kn.deriv[k] = 1.0;
  for (std::size_t i = 1; i < k; ++i) kn.deriv[i] = c.min_derivative + softplus(raw[2 * k + i - 1] + shift);
}

void check_raw(const SplineConfig& c, std::size_t n, std::size_t raw_size) {
  if (raw_size != n * c.params_per_dim()) {
    throw ShapeError("spline: expected " + std::to_string(n * c.params_per_dim()) + " raw parameters for " +
                     std::to_string(n) + " elements, got " + std::to_string(raw_size));
  }
}

}  // namespace

SplineKnots make_knots(const SplineConfig& config, std::span<const double> raw) {
  check_raw(config, 1, raw.size());
  Workspace ws;
  build(config, raw, ws);
  return ws.knots;
}

SplineOutput spline_forward(const SplineConfig& config, std::span<const double> inputs,
                            std::span<const double> raw) {
  check_raw(config, inputs.size(), raw.size());
  const std::size_t p = config.params_per_dim();
  const double b = config.tail_bound;
  SplineOutput out{std::vector<double>(inputs.size()), std::vector<double>(inputs.size(), 0.0)};
  Workspace ws;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const double u = inputs[i];
    if (u < -b || u > b) {
      out.values[i] = u;
      continue;
    }
    build(config, raw.subspan(i * p, p), ws);
    const auto& kn = ws.knots;
    const std::size_t bin = find_bin(kn.x, u);
    segment(u, kn.x[bin], kn.x[bin + 1], kn.y[bin], kn.y[bin + 1], kn.deriv[bin], kn.deriv[bin + 1],
            out.values[i], out.log_det[i]);
  }
  return out;
}

SplineOutput spline_inverse(const SplineConfig& config, std::span<const double> inputs,
                            std::span<const double> raw) {
  check_raw(config, inputs.size(), raw.size());
  const std::size_t p = config.params_per_dim();
  const double b = config.tail_bound;
  SplineOutput out{std::vector<double>(inputs.size()), std::vector<double>(inputs.size(), 0.0)};
  Workspace ws;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const double y = inputs[i];
    if (y < -b || y > b) {
      out.values[i] = y;
      continue;
    }
    build(config, raw.subspan(i * p, p), ws);
    const auto& kn = ws.knots;
    const std::size_t bin = find_bin(kn.y, y);
    const double xl = kn.x[bin], w = kn.x[bin + 1] - xl;
    const double yl = kn.y[bin], h = kn.y[bin + 1] - yl;
    const double dl = kn.deriv[bin], dr = kn.deriv[bin + 1];
    const double s = h / w;
    const double dy = y - yl;
    const double a = h * (s - dl) + dy * (dl + dr - 2.0 * s);
    const double bq = h * dl - dy * (dl + dr - 2.0 * s);
    const double cq = -s * dy;
    const double disc = std::max(0.0, bq * bq - 4.0 * a * cq);
    const double xi = std::clamp((2.0 * cq) / (-bq - std::sqrt(disc)), 0.0, 1.0);
    const double u = xl + xi * w;
    double yy = 0.0, ld = 0.0;
    segment(u, kn.x[bin], kn.x[bin + 1], kn.y[bin], kn.y[bin + 1], dl, dr, yy, ld);
    out.values[i] = u;
    out.log_det[i] = -ld;
  }
  return out;
}

std::pair<ad::Tensor, ad::Tensor> rq_spline(const ad::Tensor& u, const ad::Tensor& raw,
                                            const SplineConfig& config) {
  if (u.rank() != 2 || raw.rank() != 2 || raw.dim(0) != u.dim(0) ||
      raw.dim(1) != u.dim(1) * config.params_per_dim()) {
    throw ShapeError("rq_spline: inputs " + ad::shape_str(u.shape()) + " with raw parameters " +
                     ad::shape_str(raw.shape()) + " (need B x T and B x T*" +
                     std::to_string(config.params_per_dim()) + ")");
  }
  const std::size_t rows = u.dim(0), width = u.dim(1), p = config.params_per_dim();
  const std::size_t n = rows * width;
  const double b = config.tail_bound;
  const auto uv = u.data();
  const auto rv = raw.data();

  std::vector<double> y(n), ld_rows(rows, 0.0);
  // Local partials of (y, log_det) w.r.t. the 7 segment inputs, plus the bin.
  std::vector<std::array<double, kLocal>> dy(n), dld(n);
  std::vector<int> bin_of(n, -1);
  Workspace ws;
  for (std::size_t i = 0; i < n; ++i) {
    const double uu = uv[i];
    if (uu < -b || uu > b) {
      y[i] = uu;
      continue;
    }
    build(config, rv.subspan(i * p, p), ws);
    const auto& kn = ws.knots;
    const std::size_t bin = find_bin(kn.x, uu);
    bin_of[i] = static_cast<int>(bin);
    Dual yd, ldd;
    segment(Dual::var(uu, 0), Dual::var(kn.x[bin], 1), Dual::var(kn.x[bin + 1], 2), Dual::var(kn.y[bin], 3),
            Dual::var(kn.y[bin + 1], 4), Dual::var(kn.deriv[bin], 5), Dual::var(kn.deriv[bin + 1], 6), yd, ldd);
    y[i] = yd.v;
    dy[i] = yd.d;
    dld[i] = ldd.d;
    ld_rows[i / width] += ldd.v;
  }
  ad::check_finite("rq_spline", y);
  ad::check_finite("rq_spline", ld_rows);

  const bool track = ad::needs_grad({&u, &raw});
  ad::Tensor y_out = ad::make_output({rows, width}, std::move(y), track);
  ad::Tensor ld_out = ad::make_output({rows}, std::move(ld_rows), track);
  if (track) {
    auto un = u.shared();
    auto rn = raw.shared();
    auto yn = y_out.shared();
    auto ln = ld_out.shared();
    ad::active_tape()->record(
        "rq_spline", {un, rn}, {yn, ln},
        [un, rn, yn, ln, dy = std::move(dy), dld = std::move(dld), bin_of = std::move(bin_of), config, width, n,
         p]() {
          const std::size_t k = config.bins;
          const double two_b = 2.0 * config.tail_bound;
          const double shift = derivative_shift(config);
          Workspace ws;
          std::vector<double> gw(k), gh(k);
          for (std::size_t i = 0; i < n; ++i) {
            const double gy = yn->grad[i];
            const double gl = ln->grad[i / width];
            if (bin_of[i] < 0) {
              if (un->requires_grad) un->grad[i] += gy;
              continue;
            }
            std::array<double, kLocal> g{};
            for (int s = 0; s < kLocal; ++s) g[s] = gy * dy[i][s] + gl * dld[i][s];
            if (un->requires_grad) un->grad[i] += g[0];
            if (!rn->requires_grad) continue;
            const std::size_t bin = static_cast<std::size_t>(bin_of[i]);
            const auto raw_i = std::span<const double>(rn->value).subspan(i * p, p);
            build(config, raw_i, ws);
            double* graw = rn->grad.data() + i * p;
            // Knot j < K is -B + 2B * sum_{m<j} frac_m; knot K is fixed.
            std::fill(gw.begin(), gw.end(), 0.0);
            std::fill(gh.begin(), gh.end(), 0.0);
            for (std::size_t m = 0; m < bin; ++m) {
              gw[m] += two_b * g[1];
              gh[m] += two_b * g[3];
            }
            if (bin + 1 < k) {
              for (std::size_t m = 0; m < bin + 1; ++m) {
                gw[m] += two_b * g[2];
                gh[m] += two_b * g[4];
              }
            }
            const auto softmax_back = [k](const std::vector<double>& soft, const std::vector<double>& gfrac,
                                          double min_frac, double* out) {
              double dot = 0.0;
              for (std::size_t m = 0; m < k; ++m) dot += soft[m] * gfrac[m];
              const double scale = 1.0 - min_frac * static_cast<double>(k);
              for (std::size_t m = 0; m < k; ++m) out[m] += scale * soft[m] * (gfrac[m] - dot);
            };
            softmax_back(ws.soft_w, gw, config.min_bin_width, graw);
            softmax_back(ws.soft_h, gh, config.min_bin_height, graw + k);
            if (bin >= 1) graw[2 * k + bin - 1] += g[5] * sigmoid(raw_i[2 * k + bin - 1] + shift);
            if (bin + 1 <= k - 1) graw[2 * k + bin] += g[6] * sigmoid(raw_i[2 * k + bin] + shift);
          }
        });
  }
  return {y_out, ld_out};
}

}  // namespace mfsbi::flow
