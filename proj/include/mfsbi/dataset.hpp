// Copyright 2026 The mfsbi Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// (theta, x) tables on disk. See docs/FORMATS.md for the layout.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mfsbi/matrix.hpp"

namespace mfsbi {

struct Dataset {
  static constexpr int kSchemaVersion = 1;
  /// Observations wider than this are stored as a raw binary block.
  static constexpr std::size_t kBinaryThreshold = 1024;

  std::string task;
  int fidelity = 0;  // 0 = lowest
  std::string simulator;
  std::uint64_t seed = 0;
  std::size_t simulations = 0;
  std::size_t replacements = 0;
  Matrix theta;
  Matrix x;
  std::vector<double> weights;  // optional per-row weights (particle sets)
  std::map<std::string, std::string> meta;

  std::size_t size() const { return theta.rows; }
  /// Throws ShapeError when theta, x and weights disagree on the row count.
  void validate() const;
  /// The first `count` rows with the same provenance.
  Dataset head(std::size_t count) const;
};

void save_dataset(const Dataset& data, const std::filesystem::path& path);
/// Throws FormatError on malformed or truncated files.
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace mfsbi
