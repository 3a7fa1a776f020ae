// Copyright 2026 The mfsbi Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Benchmark task registry: prior, simulators ordered by fidelity and the
// default estimator architecture for each task id.

#include <optional>
#include <string>
#include <vector>

#include "mfsbi/flow.hpp"
#include "mfsbi/prior.hpp"
#include "mfsbi/simulators.hpp"

namespace mfsbi {

struct TaskOptions {
  PerturbationSpec perturbation{};  // ou2-perturbed only
  std::size_t sir_points = 10;
  BlobConfig blob{};
};

struct Task {
  std::string id;
  Prior prior;
  /// Ascending fidelity; levels.front() is the cheapest, levels.back() the target.
  std::vector<SimulatorPtr> levels;
  /// Three-level chain (OU tasks only; empty elsewhere).
  std::vector<SimulatorPtr> chain;
  /// Parameters the low fidelity simulator reads; the rest are dummies.
  std::vector<std::size_t> low_free_dims;
  /// True when a closed-form likelihood gives reference posteriors.
  bool exact_likelihood = false;
  flow::ArchitectureDescriptor architecture;

  const Simulator& low() const { return *levels.front(); }
  const Simulator& high() const { return *levels.back(); }
  std::size_t theta_dim() const { return prior.dim(); }
  std::size_t x_dim() const { return high().x_dim(); }
  /// Prior draws as a simulate_batch source.
  ThetaSource prior_source() const;
};

/// Known ids: ou2 ou3 ou4 ou2-perturbed slcp sir blob gaussian.
/// "gaussian" is the conjugate toy task theta ~ N(0,1), x | theta ~ N(theta, 0.5^2).
Task make_task(const std::string& id, const TaskOptions& options = {});
std::vector<std::string> task_ids();

std::optional<OuVariant> ou_variant(const std::string& task_id);

/// theta ~ N(0, 1) truncated to (-5, 5); x = theta + 0.5 * noise.
class ConjugateGaussian final : public Simulator {
 public:
  static constexpr double kNoise = 0.5;
  std::string name() const override { return "gaussian"; }
  std::size_t theta_dim() const override { return 1; }
  std::size_t x_dim() const override { return 1; }
  std::vector<double> simulate(std::span<const double> theta, std::uint64_t seed) const override;
};

}  // namespace mfsbi
