// Copyright 2026 The mfsbi Authors
// SPDX-License-Identifier: Apache-2.0

#include "mfsbi/tasks.hpp"

#include <cmath>

#include "mfsbi/errors.hpp"

namespace mfsbi {

namespace {

Prior ou_prior(OuVariant v) {
  std::vector<PriorDim> dims{PriorDim::uniform(0.1, 3.0), PriorDim::uniform(0.1, 0.6)};
  if (v != OuVariant::kTwo) dims.push_back(PriorDim::uniform(0.1, 1.0));
  if (v == OuVariant::kFour) dims.push_back(PriorDim::uniform(0.0, 4.0));
  return Prior(std::move(dims));
}

flow::ArchitectureDescriptor default_architecture(std::size_t theta_dim, std::size_t x_dim) {
  flow::ArchitectureDescriptor arch;
  arch.theta_dim = theta_dim;
  arch.x_dim = x_dim;
  return arch;
}

}  // namespace

std::vector<double> ConjugateGaussian::simulate(std::span<const double> theta, std::uint64_t seed) const {
  if (theta.size() != 1) throw ShapeError("gaussian: theta must have 1 entry");
  RandomStream rng(seed);
  return {rng.normal(theta[0], kNoise)};
}

ThetaSource Task::prior_source() const {
  return [p = prior](RandomStream& rng, std::span<double> out) { p.sample(rng, out); };
}

std::vector<std::string> task_ids() { return {"ou2", "ou3", "ou4", "ou2-perturbed", "slcp", "sir", "blob", "gaussian"}; }

std::optional<OuVariant> ou_variant(const std::string& id) {
  if (id == "ou2" || id == "ou2-perturbed") return OuVariant::kTwo;
  if (id == "ou3") return OuVariant::kThree;
  if (id == "ou4") return OuVariant::kFour;
  return std::nullopt;
}

Task make_task(const std::string& id, const TaskOptions& options) {
  Task task;
  task.id = id;
  if (auto variant = ou_variant(id)) {
    task.prior = ou_prior(*variant);
    auto high = std::make_shared<OuHighFidelity>(*variant);
    if (id == "ou2-perturbed") {
      if (options.perturbation.delta < 0.0) throw ConfigError("perturbation delta must be >= 0");
      task.levels = {std::make_shared<OuPerturbed>(*variant, options.perturbation), high};
      task.low_free_dims = {0, 1};
    } else {
      auto low = std::make_shared<OuLowFidelity>(*variant);
      task.levels = {low, high};
      task.chain = {low, std::make_shared<OuCoarse>(*variant), high};
      task.low_free_dims = {0, 1};
    }
    task.exact_likelihood = true;
  } else if (id == "slcp") {
    task.prior = Prior::uniform(std::vector<double>(5, -3.0), std::vector<double>(5, 3.0));
    task.levels = {std::make_shared<Slcp>(true), std::make_shared<Slcp>(false)};
    task.low_free_dims = {2, 3, 4};
    task.exact_likelihood = true;
  } else if (id == "sir") {
    task.prior = Prior({PriorDim::log_normal(std::log(0.4), 0.5, 0.001, 3.0),
                        PriorDim::log_normal(std::log(0.125), 0.2, 0.001, 3.0)});
    SirConfig cfg;
    cfg.points = options.sir_points;
    task.levels = {std::make_shared<Sir>(true, cfg), std::make_shared<Sir>(false, cfg)};
    task.low_free_dims = {0, 1};
    task.exact_likelihood = true;
  } else if (id == "blob") {
    const auto side = static_cast<double>(options.blob.side);
    task.prior = Prior::uniform({0.0, 0.0, 0.2}, {side, side, 2.0});
    task.levels = {std::make_shared<Blob>(true, options.blob), std::make_shared<Blob>(false, options.blob)};
    task.low_free_dims = {0, 1, 2};
  } else if (id == "gaussian") {
    task.prior = Prior({PriorDim::normal(0.0, 1.0, -5.0, 5.0)});
    auto sim = std::make_shared<ConjugateGaussian>();
    task.levels = {sim, sim};
    task.low_free_dims = {0};
    task.exact_likelihood = true;
  } else {
    throw ConfigError("unknown task '" + id + "'");
  }
  task.architecture = default_architecture(task.prior.dim(), task.high().x_dim());
  if (id == "blob") {
    task.architecture.embedding = flow::EmbeddingKind::kCnn;
    task.architecture.image_side = options.blob.side;
  }
  return task;
}

}  // namespace mfsbi
