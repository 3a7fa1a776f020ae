// Copyright 2026 The mfsbi Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace mfsbi {

/// Dense row-major matrix of doubles used for datasets and sample sets.
/// Gradient-tracked values live in ad::Tensor instead.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
  Matrix(std::size_t r, std::size_t c, std::vector<double> values);
  Matrix(std::initializer_list<std::initializer_list<double>> init);

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }

  bool empty() const { return rows == 0; }

  void append_row(std::span<const double> values);
  Matrix select_rows(std::span<const std::size_t> indices) const;
  std::vector<double> column(std::size_t j) const;
  /// Vertical concatenation; column counts must agree.
  static Matrix vstack(const Matrix& top, const Matrix& bottom);
  /// Repeats a single row `n` times.
  static Matrix repeat_row(std::span<const double> values, std::size_t n);
};

}  // namespace mfsbi
