// Copyright 2026 The mfsbi Authors
// SPDX-License-Identifier: Apache-2.0

#include "mfsbi/dataset.hpp"

#include <bit>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "mfsbi/errors.hpp"

namespace mfsbi {

namespace {

constexpr const char* kMagic = "# mfsbi-dataset";

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(std::string_view text, const std::filesystem::path& path, std::size_t line) {
  double v = 0.0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw FormatError(path.string() + ":" + std::to_string(line) + ": bad number '" + std::string(text) + "'");
  }
  return v;
}

std::size_t parse_size(const std::map<std::string, std::string>& header, const std::string& key,
                       const std::filesystem::path& path) {
  auto it = header.find(key);
  if (it == header.end()) throw FormatError(path.string() + ": missing header key '" + key + "'");
  return std::stoull(it->second);
}

}  // namespace

void Dataset::validate() const {
  if (theta.rows != x.rows) throw ShapeError("dataset: theta and x row counts differ");
  if (!weights.empty() && weights.size() != theta.rows) throw ShapeError("dataset: weight count differs from rows");
}

Dataset Dataset::head(std::size_t count) const {
  if (count > size()) throw ShapeError("dataset: head(" + std::to_string(count) + ") of " + std::to_string(size()));
  Dataset out = *this;
  std::vector<std::size_t> rows(count);
  for (std::size_t i = 0; i < count; ++i) rows[i] = i;
  out.theta = theta.select_rows(rows);
  out.x = x.select_rows(rows);
  if (!weights.empty()) out.weights.assign(weights.begin(), weights.begin() + static_cast<std::ptrdiff_t>(count));
  return out;
}

void save_dataset(const Dataset& data, const std::filesystem::path& path) {
  data.validate();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  const bool binary = data.x.cols > Dataset::kBinaryThreshold;
  out << kMagic << '\n'
      << "# schema_version=" << Dataset::kSchemaVersion << '\n'
      << "# task=" << data.task << '\n'
      << "# fidelity=" << data.fidelity << '\n'
      << "# simulator=" << data.simulator << '\n'
      << "# seed=" << data.seed << '\n'
      << "# theta_dim=" << data.theta.cols << '\n'
      << "# x_dim=" << data.x.cols << '\n'
      << "# rows=" << data.size() << '\n'
      << "# simulations=" << data.simulations << '\n'
      << "# replacements=" << data.replacements << '\n'
      << "# weights=" << (data.weights.empty() ? 0 : 1) << '\n'
      << "# x_storage=" << (binary ? "binary" : "csv") << '\n';
  for (const auto& [k, v] : data.meta) out << "# meta." << k << '=' << v << '\n';

  std::string line;
  for (std::size_t j = 0; j < data.theta.cols; ++j) line += (j ? ",theta_" : "theta_") + std::to_string(j);
  if (!binary) {
    for (std::size_t j = 0; j < data.x.cols; ++j) line += ",x_" + std::to_string(j);
  }
  if (!data.weights.empty()) line += ",weight";
  out << line << '\n';
  for (std::size_t i = 0; i < data.size(); ++i) {
    line.clear();
    for (std::size_t j = 0; j < data.theta.cols; ++j) line += (j ? "," : "") + format_double(data.theta(i, j));
    if (!binary) {
      for (std::size_t j = 0; j < data.x.cols; ++j) line += "," + format_double(data.x(i, j));
    }
    if (!data.weights.empty()) line += "," + format_double(data.weights[i]);
    out << line << '\n';
  }
  if (binary) {
    static_assert(std::endian::native == std::endian::little, "binary block is little-endian");
    out << "# x_binary_bytes=" << data.x.data.size() * sizeof(double) << '\n';
    out.write(reinterpret_cast<const char*>(data.x.data.data()),
              static_cast<std::streamsize>(data.x.data.size() * sizeof(double)));
  }
  if (!out) throw FormatError("failed writing " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path.string());
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line) || line != kMagic) throw FormatError(path.string() + ": not an mfsbi dataset");
  ++line_no;
  std::map<std::string, std::string> header;
  Dataset data;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.starts_with("# ")) break;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError(path.string() + ":" + std::to_string(line_no) + ": bad header line");
    const auto key = line.substr(2, eq - 2);
    const auto value = line.substr(eq + 1);
    if (key.starts_with("meta.")) {
      data.meta[key.substr(5)] = value;
    } else {
      header[key] = value;
    }
  }
  if (parse_size(header, "schema_version", path) != Dataset::kSchemaVersion) {
    throw FormatError(path.string() + ": unsupported schema_version " + header["schema_version"]);
  }
  data.task = header["task"];
  data.fidelity = std::stoi(header["fidelity"]);
  data.simulator = header["simulator"];
  data.seed = std::stoull(header["seed"]);
  data.simulations = parse_size(header, "simulations", path);
  data.replacements = parse_size(header, "replacements", path);
  const auto theta_dim = parse_size(header, "theta_dim", path);
  const auto x_dim = parse_size(header, "x_dim", path);
  const auto rows = parse_size(header, "rows", path);
  const bool weighted = parse_size(header, "weights", path) == 1;
  const bool binary = header["x_storage"] == "binary";

  // `line` now holds the column header.
  data.theta = Matrix(rows, theta_dim);
  data.x = Matrix(rows, x_dim);
  if (weighted) data.weights.resize(rows);
  const std::size_t fields = theta_dim + (binary ? 0 : x_dim) + (weighted ? 1 : 0);
  std::vector<double> values(fields);
  for (std::size_t i = 0; i < rows; ++i) {
    if (!std::getline(in, line)) throw FormatError(path.string() + ": truncated after " + std::to_string(i) + " rows");
    ++line_no;
    std::size_t start = 0, k = 0;
    while (k < fields) {
      const auto comma = line.find(',', start);
      const auto end = comma == std::string::npos ? line.size() : comma;
      values[k++] = parse_double(std::string_view(line).substr(start, end - start), path, line_no);
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (k != fields) throw FormatError(path.string() + ":" + std::to_string(line_no) + ": wrong field count");
    std::copy_n(values.begin(), theta_dim, data.theta.row(i).begin());
    if (!binary) std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(theta_dim), x_dim, data.x.row(i).begin());
    if (weighted) data.weights[i] = values.back();
  }
  if (binary) {
    if (!std::getline(in, line) || !line.starts_with("# x_binary_bytes=")) {
      throw FormatError(path.string() + ": missing binary block");
    }
    const auto bytes = data.x.data.size() * sizeof(double);
    if (std::stoull(line.substr(17)) != bytes) throw FormatError(path.string() + ": binary block size mismatch");
    in.read(reinterpret_cast<char*>(data.x.data.data()), static_cast<std::streamsize>(bytes));
    if (static_cast<std::size_t>(in.gcount()) != bytes) throw FormatError(path.string() + ": truncated binary block");
  }
  return data;
}

}  // namespace mfsbi
