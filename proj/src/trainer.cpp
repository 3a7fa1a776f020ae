// Copyright 2026 The mfsbi Authors
// SPDX-License-Identifier: Apache-2.0

#include "mfsbi/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"

#include "mfsbi/errors.hpp"
#include "mfsbi/rng.hpp"

namespace mfsbi {

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction must lie in (0, 1)");
  if (patience == 0) throw ConfigError("patience must be >= 1");
  if (max_epochs == 0) throw ConfigError("max_epochs must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
}

Split split_train_val(std::size_t n, double val_fraction, std::uint64_t seed) {
  if (n < 10) throw ConfigError("dataset has " + std::to_string(n) + " rows; training needs at least 10");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  RandomStream rng(seed, stream_id("split"));
  std::shuffle(order.begin(), order.end(), rng.engine());
  const auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n)));
  if (n_val == 0 || n_val >= n) throw ConfigError("validation split would be empty or cover every row");
  Split s;
  s.val.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  s.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  return s;
}

EarlyStopper::EarlyStopper(std::size_t patience) : patience_(patience) {
  if (patience == 0) throw ConfigError("patience must be >= 1");
}

bool EarlyStopper::update(double val_loss) {
  if (val_loss < best_) {
    best_ = val_loss;
    since_improvement_ = 0;
    return true;
  }
  ++since_improvement_;
  return false;
}

std::string to_string(StopReason reason) { return reason == StopReason::kPatience ? "patience" : "max_epochs"; }

void TrainReport::write_jsonl(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  for (const auto& e : epochs) {
    out << nlohmann::json{{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}}.dump() << '\n';
  }
  out << nlohmann::json{{"stop_epoch", stop_epoch},
                        {"best_epoch", best_epoch},
                        {"best_val_loss", best_val_loss},
                        {"stop_reason", to_string(reason)},
                        {"train_rows", train_rows},
                        {"val_rows", val_rows},
                        {"wall_seconds", wall_seconds}}
             .dump()
      << '\n';
}

ad::Tensor nll_loss(const flow::ConditionalDensityEstimator& estimator, const Matrix& theta, const Matrix& x) {
  if (theta.rows == 0) throw ShapeError("nll_loss: empty batch");
  return ad::neg(ad::mean(estimator.log_prob_tensor(theta, x)));
}

namespace {

double mean_nll(const flow::ConditionalDensityEstimator& estimator, const Matrix& theta, const Matrix& x) {
  const auto lp = estimator.log_prob(theta, x);
  double total = 0.0;
  for (double v : lp) total -= v;
  return total / static_cast<double>(lp.size());
}

}  // namespace

TrainReport train(flow::ConditionalDensityEstimator& estimator, const Matrix& theta, const Matrix& x,
                  const TrainConfig& config) {
  config.validate();
  if (theta.rows == 0) throw ConfigError("train: empty dataset");
  if (theta.rows != x.rows) throw ShapeError("train: theta and x row counts differ");
  const auto start = std::chrono::steady_clock::now();

  const auto split = split_train_val(theta.rows, config.val_fraction, config.seed);
  const Matrix train_theta = theta.select_rows(split.train);
  const Matrix train_x = x.select_rows(split.train);
  const Matrix val_theta = theta.select_rows(split.val);
  const Matrix val_x = x.select_rows(split.val);
  if (config.refit_standardizer || !estimator.standardizer().fitted()) estimator.standardizer().fit(train_x);

  auto adam = ad::make_adam_state(estimator.parameters(), ad::AdamConfig{.lr = config.learning_rate});
  EarlyStopper stopper(config.patience);
  auto best = estimator.snapshot();
  TrainReport report;
  report.train_rows = split.train.size();
  report.val_rows = split.val.size();

  std::vector<std::size_t> order(train_theta.rows);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    RandomStream shuffle(config.seed, stream_id("shuffle"), epoch);
    std::shuffle(order.begin(), order.end(), shuffle.engine());
    double epoch_loss = 0.0;
    for (std::size_t begin = 0, batch = 0; begin < order.size(); begin += config.batch_size, ++batch) {
      const std::span<const std::size_t> rows(order.data() + begin,
                                              std::min(config.batch_size, order.size() - begin));
      const Matrix bt = train_theta.select_rows(rows);
      const Matrix bx = train_x.select_rows(rows);
      try {
        ad::zero_grads(estimator.parameters());
        ad::Tape tape;
        ad::TapeScope scope(tape);
        auto loss = nll_loss(estimator, bt, bx);
        tape.backward(loss);
        ad::adam_step(estimator.parameters(), adam);
        epoch_loss += loss.at(0) * static_cast<double>(rows.size());
      } catch (const NumericError& e) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch) +
                           ": " + e.what());
      }
    }
    EpochRecord rec{epoch, epoch_loss / static_cast<double>(order.size()), mean_nll(estimator, val_theta, val_x)};
    if (!std::isfinite(rec.val_loss)) {
      throw NumericError("validation loss is not finite at epoch " + std::to_string(epoch));
    }
    report.epochs.push_back(rec);
    if (stopper.update(rec.val_loss)) {
      best = estimator.snapshot();
      report.best_epoch = epoch;
      report.best_val_loss = rec.val_loss;
    }
    report.stop_epoch = epoch;
    if (stopper.should_stop()) {
      report.reason = StopReason::kPatience;
      break;
    }
  }
  estimator.restore(best);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace mfsbi
