// Copyright 2026 The mfsbi Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Minibatch maximum-likelihood training of a conditional flow with Adam
// and validation-based early stopping.

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "mfsbi/flow.hpp"
#include "mfsbi/matrix.hpp"

namespace mfsbi {

struct TrainConfig {
  std::size_t batch_size = 200;
  double learning_rate = 5e-4;
  double val_fraction = 0.1;
  std::size_t patience = 20;
  std::size_t max_epochs = 2000;
  std::uint64_t seed = 0;
  /// Refit the observation standardizer even when the estimator already
  /// carries one (a cloned estimator keeps its pretraining statistics).
  bool refit_standardizer = false;

  void validate() const;
};

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// Seeded shuffle split; val gets round(fraction * n) rows. Needs n >= 10.
Split split_train_val(std::size_t n, double val_fraction, std::uint64_t seed);

/// Tracks the lowest validation loss. Ties keep the earlier epoch.
class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience);
  /// Returns true when `val_loss` is a new optimum.
  bool update(double val_loss);
  bool should_stop() const { return since_improvement_ >= patience_; }
  double best() const { return best_; }
  std::size_t since_improvement() const { return since_improvement_; }

 private:
  std::size_t patience_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t since_improvement_ = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
};

enum class StopReason { kPatience, kMaxEpochs };

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t stop_epoch = 0;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  StopReason reason = StopReason::kMaxEpochs;
  double wall_seconds = 0.0;
  std::size_t train_rows = 0;
  std::size_t val_rows = 0;

  /// One JSON object per epoch, then a summary object.
  void write_jsonl(const std::filesystem::path& path) const;
};

std::string to_string(StopReason reason);

/// Mean negative log-probability over the rows, differentiable.
ad::Tensor nll_loss(const flow::ConditionalDensityEstimator& estimator, const Matrix& theta, const Matrix& x);

/// Trains in place and leaves the estimator at its best validation epoch.
/// Fits the standardizer on the training split unless one is already
/// fitted (see TrainConfig::refit_standardizer).
TrainReport train(flow::ConditionalDensityEstimator& estimator, const Matrix& theta, const Matrix& x,
                  const TrainConfig& config);

}  // namespace mfsbi
