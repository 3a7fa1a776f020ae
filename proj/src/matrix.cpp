// Copyright 2026 The mfsbi Authors
// SPDX-License-Identifier: Apache-2.0

#include "mfsbi/matrix.hpp"

#include <algorithm>
#include <string>

#include "mfsbi/errors.hpp"

namespace mfsbi {

Matrix::Matrix(std::size_t r, std::size_t c, std::vector<double> values)
    : rows(r), cols(c), data(std::move(values)) {
  if (data.size() != r * c) {
    throw ShapeError("Matrix: " + std::to_string(data.size()) + " values for shape " +
                     std::to_string(r) + "x" + std::to_string(c));
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> init) {
  rows = init.size();
  cols = rows ? init.begin()->size() : 0;
  data.reserve(rows * cols);
  for (const auto& r : init) {
    if (r.size() != cols) throw ShapeError("Matrix: ragged initializer");
    data.insert(data.end(), r.begin(), r.end());
  }
}

void Matrix::append_row(std::span<const double> values) {
  if (rows == 0 && cols == 0) cols = values.size();
  if (values.size() != cols) {
    throw ShapeError("Matrix::append_row: row of length " + std::to_string(values.size()) +
                     " into matrix with " + std::to_string(cols) + " columns");
  }
  data.insert(data.end(), values.begin(), values.end());
  ++rows;
}

Matrix Matrix::select_rows(std::span<const std::size_t> indices) const {
  Matrix out(indices.size(), cols);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(indices[i] * cols), cols,
                out.data.begin() + static_cast<std::ptrdiff_t>(i * cols));
  }
  return out;
}

std::vector<double> Matrix::column(std::size_t j) const {
  std::vector<double> out(rows);
  for (std::size_t i = 0; i < rows; ++i) out[i] = (*this)(i, j);
  return out;
}

Matrix Matrix::vstack(const Matrix& top, const Matrix& bottom) {
  if (top.empty()) return bottom;
  if (bottom.empty()) return top;
  if (top.cols != bottom.cols) throw ShapeError("Matrix::vstack: column mismatch");
  Matrix out = top;
  out.data.insert(out.data.end(), bottom.data.begin(), bottom.data.end());
  out.rows += bottom.rows;
  return out;
}

Matrix Matrix::repeat_row(std::span<const double> values, std::size_t n) {
  Matrix out(n, values.size());
  for (std::size_t i = 0; i < n; ++i) std::copy(values.begin(), values.end(), out.row(i).begin());
  return out;
}

}  // namespace mfsbi
