// Copyright 2026 The mfsbi Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace mfsbi {

/// Base class for every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible for the requested operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// An argument lies outside the domain of a function (log of a
/// non-positive value, a parameter on the boundary of its box, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A computation produced NaN or infinity.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Two estimators (or an estimator and a checkpoint) disagree on architecture.
class ArchitectureMismatch : public Error {
 public:
  using Error::Error;
};

/// Checkpoint file problems. The subclasses let callers tell apart
/// a stale format, a short read and a corrupted descriptor.
class CheckpointError : public Error {
 public:
  using Error::Error;
};
class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointTruncatedError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointArchitectureError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

/// Bad user input: config keys, sizes, budgets.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A sampler could not make progress (degenerate truncation, flat weights).
class SamplingError : public Error {
 public:
  using Error::Error;
};

/// Malformed or unreadable data file.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace mfsbi
