// Copyright 2026 The mfsbi Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Conditional neural spline flow q(theta | x).
//
// Density evaluation runs theta through a logit box (bounded -> R^D),
// then through a stack of coupling layers, each of which applies a
// rational-quadratic spline to half of the coordinates with parameters
// produced by an MLP that sees the other half plus the embedded
// observation. Fixed random permutations sit between coupling layers.
// Sampling runs the same stack backwards from a standard normal.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mfsbi/matrix.hpp"
#include "mfsbi/rng.hpp"
#include "mfsbi/spline.hpp"
#include "mfsbi/tensor.hpp"

namespace mfsbi::flow {

enum class EmbeddingKind { kIdentity, kMlp, kCnn };
enum class Activation { kTanh, kRelu };

struct ArchitectureDescriptor {
  std::size_t theta_dim = 1;
  std::size_t x_dim = 1;
  std::size_t transforms = 5;
  std::size_t hidden = 50;
  std::size_t hidden_layers = 2;
  SplineConfig spline{};
  Activation activation = Activation::kTanh;
  EmbeddingKind embedding = EmbeddingKind::kIdentity;
  std::size_t embed_hidden = 64;  // MLP embedding only
  std::size_t embed_out = 32;     // MLP and CNN embeddings
  std::size_t image_side = 0;     // CNN embedding: x_dim == image_side^2
  std::uint64_t permutation_seed = 0;

  /// Canonical "key=value;..." text, stable across runs.
  std::string describe() const;
  static ArchitectureDescriptor parse(const std::string& text);
  std::uint64_t hash() const;
  /// Dimension of the feature vector the conditioners see.
  std::size_t feature_dim() const;
  bool operator==(const ArchitectureDescriptor& other) const { return describe() == other.describe(); }
};

/// Maps the open box (lower, upper) to R^D through a per-dimension logit.
class LogitBox {
 public:
  LogitBox() = default;
  LogitBox(std::vector<double> lower, std::vector<double> upper);

  std::size_t dim() const { return lower_.size(); }
  const std::vector<double>& lower() const { return lower_; }
  const std::vector<double>& upper() const { return upper_; }

  /// theta -> z; log_det[i] = log |dz/dtheta| summed over dimensions.
  /// Throws DomainError naming the dimension for theta on or outside the box.
  Matrix forward(const Matrix& theta, std::vector<double>& log_det) const;
  /// z -> theta, always strictly inside the box.
  Matrix inverse(const Matrix& z) const;
  bool contains(std::span<const double> theta) const;

 private:
  std::vector<double> lower_;
  std::vector<double> upper_;
};

/// Per-dimension z-scoring of observations, fitted on training data only.
class Standardizer {
 public:
  static constexpr double kMinStd = 1e-6;

  bool fitted() const { return fitted_; }
  void fit(const Matrix& x);
  void set(std::vector<double> mean, std::vector<double> std);
  Matrix apply(const Matrix& x) const;
  const std::vector<double>& mean() const { return mean_; }
  const std::vector<double>& std() const { return std_; }

 private:
  bool fitted_ = false;
  std::vector<double> mean_;
  std::vector<double> std_;
};

class ConditionalDensityEstimator {
 public:
  ConditionalDensityEstimator() = default;
  /// Fresh estimator; conditioner output layers start at zero so every
  /// spline is the identity.
  ConditionalDensityEstimator(ArchitectureDescriptor arch, LogitBox box, std::uint64_t init_seed);
  // Copies are deep: parameter tensors are never shared between estimators.
  ConditionalDensityEstimator(const ConditionalDensityEstimator& other);
  ConditionalDensityEstimator& operator=(const ConditionalDensityEstimator& other);
  ConditionalDensityEstimator(ConditionalDensityEstimator&&) noexcept = default;
  ConditionalDensityEstimator& operator=(ConditionalDensityEstimator&&) noexcept = default;

  const ArchitectureDescriptor& architecture() const { return arch_; }
  const LogitBox& box() const { return box_; }
  void set_box(LogitBox box);
  Standardizer& standardizer() { return standardizer_; }
  const Standardizer& standardizer() const { return standardizer_; }
  std::uint64_t init_seed() const { return init_seed_; }

  std::vector<ad::NamedParameter>& parameters() { return params_; }
  const std::vector<ad::NamedParameter>& parameters() const { return params_; }

  /// Differentiable log q(theta | x) per row, in original theta coordinates.
  /// x has either one row (broadcast) or as many rows as theta.
  ad::Tensor log_prob_tensor(const Matrix& theta, const Matrix& x) const;
  /// Same, without gradient tracking, evaluated in chunks.
  std::vector<double> log_prob(const Matrix& theta, const Matrix& x) const;
  /// n draws for one observation (x has one row).
  Matrix sample(std::size_t n, const Matrix& x, std::uint64_t seed) const;

  /// Embedded, standardised observation features (rows of x).
  ad::Tensor features(const Matrix& x) const;
  /// Unconstrained z -> base u with the per-row flow log-determinant.
  std::pair<Matrix, std::vector<double>> to_base(const Matrix& z, const Matrix& x) const;
  /// Base u -> unconstrained z with the per-row inverse log-determinant.
  std::pair<Matrix, std::vector<double>> from_base(const Matrix& u, const Matrix& x) const;

  /// Copies every value from another estimator of identical architecture.
  void copy_parameters_from(const ConditionalDensityEstimator& other);
  /// Snapshot / restore of parameter values only.
  std::vector<std::vector<double>> snapshot() const;
  void restore(const std::vector<std::vector<double>>& values);

 private:
  struct Mlp {
    std::vector<std::size_t> weight_index;  // into params_
    std::vector<std::size_t> bias_index;
  };
  struct Coupling {
    std::vector<std::size_t> permutation;  // applied before the layer; empty = none
    std::vector<std::size_t> identity;
    std::vector<std::size_t> transformed;
    Mlp conditioner;
  };

  std::size_t add_param(const std::string& name, ad::Shape shape, std::vector<double> values);
  Mlp make_mlp(const std::string& prefix, std::size_t in, std::size_t hidden, std::size_t layers,
               std::size_t out, bool zero_last, Engine& rng);
  ad::Tensor run_mlp(const Mlp& mlp, ad::Tensor h, Activation act) const;
  ad::Tensor embed(const ad::Tensor& standardized) const;
  ad::Tensor flow_to_base(const ad::Tensor& z, const ad::Tensor& features, ad::Tensor& log_det) const;

  ArchitectureDescriptor arch_;
  LogitBox box_;
  Standardizer standardizer_;
  std::uint64_t init_seed_ = 0;
  std::vector<ad::NamedParameter> params_;
  std::vector<Coupling> layers_;
  Mlp embed_mlp_;
  std::vector<std::size_t> conv_weight_, conv_bias_;
  std::size_t embed_linear_w_ = 0, embed_linear_b_ = 0;
};

/// Makes `target` a bitwise copy of `source` (parameters, standardizer, box).
/// Throws ArchitectureMismatch listing the differing descriptor fields.
void clone_weights(const ConditionalDensityEstimator& source, ConditionalDensityEstimator& target);

/// Text checkpoint; doubles are stored as hex floats so round trips are exact.
/// Layout is documented in docs/FORMATS.md.
void save_checkpoint(const ConditionalDensityEstimator& estimator, const std::filesystem::path& path);
ConditionalDensityEstimator load_checkpoint(const std::filesystem::path& path);

/// Bilinear resampling (half-pixel centres) of a square image to a new side length.
std::vector<double> bilinear_resize(std::span<const double> image, std::size_t side, std::size_t new_side);

}  // namespace mfsbi::flow
