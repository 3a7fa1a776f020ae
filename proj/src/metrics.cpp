// Copyright 2026 The mfsbi Authors
// SPDX-License-Identifier: Apache-2.0

#include "mfsbi/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <boost/math/distributions/chi_squared.hpp>

#include "mfsbi/errors.hpp"
#include "mfsbi/kernels.hpp"
#include "mfsbi/rng.hpp"
#include "mfsbi/tensor.hpp"

namespace mfsbi {

namespace {

void require_same_dim(const Matrix& a, const Matrix& b, const char* who) {
  if (a.cols != b.cols) {
    throw ShapeError(std::string(who) + ": sample dimensions differ (" + std::to_string(a.cols) + " vs " +
                     std::to_string(b.cols) + ")");
  }
  if (a.rows == 0 || b.rows == 0) throw ShapeError(std::string(who) + ": empty sample set");
}

// Binary classifier used by the two-sample test.
class Classifier {
 public:
  Classifier(std::size_t in, std::size_t hidden, std::uint64_t seed) {
    Engine rng(derive_seed(seed, stream_id("c2st-init")));
    add_layer(in, hidden, rng);
    add_layer(hidden, hidden, rng);
    add_layer(hidden, 1, rng);
  }

  ad::Tensor logits(const Matrix& x) const {
    ad::Tensor h = ad::Tensor::from({x.rows, x.cols}, x.data);
    for (std::size_t l = 0; l < 3; ++l) {
      h = ad::linear(h, params_[2 * l].tensor, params_[2 * l + 1].tensor);
      if (l < 2) h = ad::relu(h);
    }
    return h;
  }

  // Mean binary cross-entropy with logits: softplus(s) - y s.
  ad::Tensor loss(const Matrix& x, const std::vector<double>& labels) const {
    auto s = logits(x);
    auto y = ad::Tensor::from({labels.size(), 1}, labels);
    return ad::mean(ad::sub(ad::softplus(s), ad::mul(y, s)));
  }

  std::vector<ad::NamedParameter>& parameters() { return params_; }

  std::vector<std::vector<double>> snapshot() const {
    std::vector<std::vector<double>> out;
    for (const auto& p : params_) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
    return out;
  }

  void restore(const std::vector<std::vector<double>>& values) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      std::copy(values[i].begin(), values[i].end(), params_[i].tensor.mutable_data().begin());
    }
  }

 private:
  void add_layer(std::size_t in, std::size_t out, Engine& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    std::vector<double> w(in * out), b(out);
    for (auto& v : w) v = u(rng);
    for (auto& v : b) v = u(rng);
    const auto idx = std::to_string(params_.size() / 2);
    params_.push_back({"w" + idx, ad::Tensor::from({in, out}, std::move(w), true)});
    params_.push_back({"b" + idx, ad::Tensor::from({out}, std::move(b), true)});
  }

  std::vector<ad::NamedParameter> params_;
};

std::vector<double> labels_of(const std::vector<double>& all, std::span<const std::size_t> rows) {
  std::vector<double> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) out[i] = all[rows[i]];
  return out;
}

double fold_accuracy(const Matrix& data, const std::vector<double>& labels, std::span<const std::size_t> train_rows,
                     std::span<const std::size_t> test_rows, const C2stConfig& cfg, std::uint64_t seed) {
  const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(cfg.val_fraction * train_rows.size())));
  const std::vector<std::size_t> val(train_rows.begin(), train_rows.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> fit(train_rows.begin() + static_cast<std::ptrdiff_t>(n_val), train_rows.end());
  const Matrix val_x = data.select_rows(val);
  const auto val_y = labels_of(labels, val);

  Classifier net(data.cols, cfg.hidden, seed);
  auto adam = ad::make_adam_state(net.parameters(), ad::AdamConfig{.lr = cfg.learning_rate});
  double best = std::numeric_limits<double>::infinity();
  auto best_params = net.snapshot();
  std::size_t stale = 0;
  for (std::size_t epoch = 0; epoch < cfg.max_epochs && stale < cfg.patience; ++epoch) {
    RandomStream shuffle(seed, stream_id("c2st-shuffle"), epoch);
    std::shuffle(fit.begin(), fit.end(), shuffle.engine());
    for (std::size_t begin = 0; begin < fit.size(); begin += cfg.batch_size) {
      const std::span<const std::size_t> rows(fit.data() + begin, std::min(cfg.batch_size, fit.size() - begin));
      ad::zero_grads(net.parameters());
      ad::Tape tape;
      ad::TapeScope scope(tape);
      auto loss = net.loss(data.select_rows(rows), labels_of(labels, rows));
      tape.backward(loss);
      ad::adam_step(net.parameters(), adam);
    }
    ad::NoGradScope no_grad;
    const double v = net.loss(val_x, val_y).item();
    if (v < best) {
      best = v;
      best_params = net.snapshot();
      stale = 0;
    } else {
      ++stale;
    }
  }
  net.restore(best_params);
  ad::NoGradScope no_grad;
  const auto scores = net.logits(data.select_rows(test_rows));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test_rows.size(); ++i) {
    const bool predicted = scores.at(i) > 0.0;
    correct += predicted == (labels[test_rows[i]] > 0.5) ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(test_rows.size());
}

}  // namespace

C2stResult c2st_detailed(const Matrix& a, const Matrix& b, std::uint64_t seed, const C2stConfig& cfg) {
  require_same_dim(a, b, "c2st");
  if (cfg.folds < 2) throw ConfigError("c2st needs at least 2 folds");
  if (a.rows + b.rows < 2 * cfg.folds) throw ShapeError("c2st: too few samples for the fold count");
  Matrix data = Matrix::vstack(a, b);
  std::vector<double> labels(data.rows, 0.0);
  std::fill(labels.begin() + static_cast<std::ptrdiff_t>(a.rows), labels.end(), 1.0);
  for (std::size_t j = 0; j < data.cols; ++j) {
    double mean = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < data.rows; ++i) mean += data(i, j);
    mean /= static_cast<double>(data.rows);
    for (std::size_t i = 0; i < data.rows; ++i) sq += (data(i, j) - mean) * (data(i, j) - mean);
    const double sd = std::max(std::sqrt(sq / static_cast<double>(data.rows)), 1e-12);
    for (std::size_t i = 0; i < data.rows; ++i) data(i, j) = (data(i, j) - mean) / sd;
  }
  std::vector<std::size_t> order(data.rows);
  std::iota(order.begin(), order.end(), 0);
  RandomStream perm(seed, stream_id("c2st-folds"));
  std::shuffle(order.begin(), order.end(), perm.engine());

  C2stResult result;
  result.fold_accuracy.assign(cfg.folds, 0.0);
  const auto folds = static_cast<std::ptrdiff_t>(cfg.folds);
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t ff = 0; ff < folds; ++ff) {
    const auto f = static_cast<std::size_t>(ff);
    const std::size_t begin = f * data.rows / cfg.folds, end = (f + 1) * data.rows / cfg.folds;
    std::vector<std::size_t> test(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                  order.begin() + static_cast<std::ptrdiff_t>(end));
    std::vector<std::size_t> train(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(begin));
    train.insert(train.end(), order.begin() + static_cast<std::ptrdiff_t>(end), order.end());
    result.fold_accuracy[f] = fold_accuracy(data, labels, train, test, cfg, derive_seed(seed, stream_id("c2st-fold"), f));
  }
  result.accuracy = std::accumulate(result.fold_accuracy.begin(), result.fold_accuracy.end(), 0.0) /
                    static_cast<double>(cfg.folds);
  double var = 0.0;
  for (double v : result.fold_accuracy) var += (v - result.accuracy) * (v - result.accuracy);
  result.fold_std = std::sqrt(var / static_cast<double>(cfg.folds - 1));
  return result;
}

double c2st(const Matrix& a, const Matrix& b, std::uint64_t seed, const C2stConfig& config) {
  return c2st_detailed(a, b, seed, config).accuracy;
}

double median_bandwidth(const Matrix& a, const Matrix& b, std::size_t max_points) {
  require_same_dim(a, b, "median_bandwidth");
  const Matrix pooled = Matrix::vstack(a, b);
  const std::size_t n = std::min(pooled.rows, max_points);
  std::vector<std::size_t> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = i * pooled.rows / n;
  const Matrix sub = pooled.select_rows(rows);
  std::vector<double> d(n * n);
  kernels::pairwise_distances(sub.data.data(), n, sub.data.data(), n, sub.cols, d.data());
  std::vector<double> upper;
  upper.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) upper.push_back(d[i * n + j]);
  }
  if (upper.empty()) return 1.0;
  auto mid = upper.begin() + static_cast<std::ptrdiff_t>(upper.size() / 2);
  std::nth_element(upper.begin(), mid, upper.end());
  return *mid > 0.0 ? *mid : 1.0;
}

namespace {

template <typename KernelSum>
double mmd_with(const Matrix& a, const Matrix& b, double bandwidth, KernelSum kernel_sum) {
  require_same_dim(a, b, "mmd");
  if (bandwidth <= 0.0) bandwidth = median_bandwidth(a, b);
  const double na = static_cast<double>(a.rows), nb = static_cast<double>(b.rows);
  const double kaa = kernel_sum(a.data.data(), a.rows, a.data.data(), a.rows, a.cols, bandwidth) / (na * na);
  const double kbb = kernel_sum(b.data.data(), b.rows, b.data.data(), b.rows, b.cols, bandwidth) / (nb * nb);
  const double kab = kernel_sum(a.data.data(), a.rows, b.data.data(), b.rows, a.cols, bandwidth) / (na * nb);
  return std::max(0.0, kaa + kbb - 2.0 * kab);
}

}  // namespace

double mmd(const Matrix& a, const Matrix& b, double bandwidth) {
  return mmd_with(a, b, bandwidth, kernels::gaussian_kernel_sum);
}

double serial::mmd(const Matrix& a, const Matrix& b, double bandwidth) {
  return mmd_with(a, b, bandwidth, kernels::serial::gaussian_kernel_sum);
}

NltpResult nltp(const DensityModel& model, const Prior& prior, const Matrix& theta_o, const Matrix& x_o) {
  if (theta_o.rows != x_o.rows) throw ShapeError("nltp: theta_o and x_o row counts differ");
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < theta_o.rows; ++i) {
    if (prior.contains(theta_o.row(i))) keep.push_back(i);
  }
  NltpResult r;
  r.excluded = theta_o.rows - keep.size();
  r.used = keep.size();
  if (keep.empty()) throw DomainError("nltp: every true parameter lies outside the prior support");
  const auto lp = model.log_prob(theta_o.select_rows(keep), x_o.select_rows(keep));
  for (double v : lp) r.value -= v;
  r.value /= static_cast<double>(lp.size());
  return r;
}

double nrmse(const Matrix& samples, std::span<const double> theta_o, std::span<const double> range) {
  if (samples.cols != theta_o.size() || range.size() != theta_o.size()) throw ShapeError("nrmse: dimension mismatch");
  if (samples.rows == 0) throw ShapeError("nrmse: no samples");
  double total = 0.0;
  for (std::size_t j = 0; j < samples.cols; ++j) {
    if (!(range[j] > 0.0)) throw DomainError("nrmse: prior range of dimension " + std::to_string(j) + " is not positive");
    double sq = 0.0;
    for (std::size_t i = 0; i < samples.rows; ++i) sq += (samples(i, j) - theta_o[j]) * (samples(i, j) - theta_o[j]);
    total += std::sqrt(sq / static_cast<double>(samples.rows)) / range[j];
  }
  return total / static_cast<double>(samples.cols);
}

void sbc_histogram(SbcReport& r) {
  const std::size_t values = r.draws + 1;
  if (r.bins == 0) r.bins = std::min<std::size_t>(values, 20);
  if (r.bins > values) throw ConfigError("sbc: more bins than distinct ranks");
  std::vector<double> expected_share(r.bins, 0.0);
  for (std::size_t v = 0; v < values; ++v) expected_share[v * r.bins / values] += 1.0 / static_cast<double>(values);
  r.histogram.assign(r.ranks.size(), std::vector<std::size_t>(r.bins, 0));
  r.chi2.assign(r.ranks.size(), 0.0);
  r.p_value.assign(r.ranks.size(), 1.0);
  r.min_p_value = 1.0;
  const boost::math::chi_squared dist(static_cast<double>(r.bins - 1));
  for (std::size_t d = 0; d < r.ranks.size(); ++d) {
    for (std::size_t rank : r.ranks[d]) ++r.histogram[d][rank * r.bins / values];
    const double n = static_cast<double>(r.ranks[d].size());
    for (std::size_t k = 0; k < r.bins; ++k) {
      const double e = n * expected_share[k];
      const double diff = static_cast<double>(r.histogram[d][k]) - e;
      r.chi2[d] += diff * diff / e;
    }
    r.p_value[d] = boost::math::cdf(boost::math::complement(dist, r.chi2[d]));
    r.min_p_value = std::min(r.min_p_value, r.p_value[d]);
  }
}

SbcReport sbc_ranks(const DensityModel& model, const Prior& prior, const Simulator& simulator, std::size_t pairs,
                    std::size_t draws, std::uint64_t seed, std::size_t bins) {
  if (!model.amortized()) throw ConfigError("sbc needs an amortized posterior");
  if (pairs == 0 || draws == 0) throw ConfigError("sbc needs positive pair and draw counts");
  const auto batch = simulate_batch(
      simulator, [&](RandomStream& rng, std::span<double> out) { prior.sample(rng, out); }, pairs,
      derive_seed(seed, stream_id("sbc-data")));
  SbcReport r;
  r.draws = draws;
  r.bins = bins;
  r.ranks.assign(prior.dim(), std::vector<std::size_t>(pairs, 0));
  for (std::size_t i = 0; i < pairs; ++i) {
    Matrix x(1, batch.x.cols);
    std::copy(batch.x.row(i).begin(), batch.x.row(i).end(), x.data.begin());
    const auto samples = model.sample(draws, x, derive_seed(seed, stream_id("sbc-draws"), i));
    for (std::size_t d = 0; d < prior.dim(); ++d) {
      std::size_t below = 0;
      for (std::size_t s = 0; s < draws; ++s) below += samples(s, d) < batch.theta(i, d) ? 1 : 0;
      r.ranks[d][i] = below;
    }
  }
  sbc_histogram(r);
  return r;
}

CoverageReport expected_coverage(const DensityModel& model, const Matrix& theta, const Matrix& x, std::size_t draws,
                                 std::uint64_t seed) {
  if (theta.rows != x.rows) throw ShapeError("expected_coverage: theta and x row counts differ");
  CoverageReport r;
  r.levels = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95};
  r.coverage.assign(r.levels.size(), 0.0);
  r.pairs = theta.rows;
  if (theta.rows == 0) return r;
  for (std::size_t i = 0; i < theta.rows; ++i) {
    Matrix xi(1, x.cols);
    std::copy(x.row(i).begin(), x.row(i).end(), xi.data.begin());
    Matrix ti(1, theta.cols);
    std::copy(theta.row(i).begin(), theta.row(i).end(), ti.data.begin());
    const auto samples = model.sample(draws, xi, derive_seed(seed, stream_id("coverage"), i));
    const auto lp = model.log_prob(samples, xi);
    const double truth = model.log_prob(ti, xi).front();
    std::size_t above = 0;
    for (double v : lp) above += v > truth ? 1 : 0;
    const double level = static_cast<double>(above) / static_cast<double>(draws);
    for (std::size_t k = 0; k < r.levels.size(); ++k) r.coverage[k] += level <= r.levels[k] ? 1.0 : 0.0;
  }
  for (auto& c : r.coverage) c /= static_cast<double>(theta.rows);
  return r;
}

KsResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw ShapeError("ks_two_sample: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] == v) ++i;
    while (j < b.size() && b[j] == v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  // Asymptotic Kolmogorov distribution with the usual small-sample correction.
  const double ne = na * nb / (na + nb);
  const double lambda = (std::sqrt(ne) + 0.12 + 0.11 / std::sqrt(ne)) * d;
  double p = 0.0;
  if (lambda < 1e-3) {
    p = 1.0;
  } else {
    double sign = 1.0;
    for (int k = 1; k <= 200; ++k) {
      const double term = sign * std::exp(-2.0 * k * k * lambda * lambda);
      p += term;
      if (std::abs(term) < 1e-12) break;
      sign = -sign;
    }
    p = std::clamp(2.0 * p, 0.0, 1.0);
  }
  return {d, p};
}

}  // namespace mfsbi
