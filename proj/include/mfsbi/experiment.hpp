// Copyright 2026 The mfsbi Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Config-driven experiment runs: budget grids x seeds x observations, with
// metrics appended to a JSON-lines results store and CSV summaries.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mfsbi/algorithms.hpp"
#include "mfsbi/mfabc.hpp"
#include "mfsbi/tasks.hpp"
#include "mfsbi/trainer.hpp"

namespace mfsbi {

struct ExperimentConfig {
  std::string task = "ou2";
  std::string algorithm = "npe";  // npe mf-npe mf-npe-chain tsnpe mf-tsnpe a-mf-tsnpe mf-abc
  std::size_t lf_budget = 10'000;
  std::vector<std::size_t> hf_budgets{50, 100, 1000, 10'000, 100'000};
  std::vector<std::uint64_t> seeds{1};
  std::size_t observations = 10;
  std::uint64_t observation_seed = 1000;
  std::vector<std::string> metrics{"c2st"};
  std::filesystem::path output = "results";
  std::size_t reference_samples = 10'000;
  std::size_t metric_samples = 10'000;
  std::size_t sir_proposals = 10'000;
  bool save_checkpoints = true;

  SequentialConfig sequential;
  ActiveConfig active;
  PerturbationSpec perturbation;
  MfAbcConfig abc;
  TrainConfig train;
  std::size_t sir_points = 10;
  std::size_t blob_side = 64;

  /// Applies one key=value assignment; throws ConfigError on unknown keys
  /// or malformed values.
  void set(const std::string& key, const std::string& value);
  /// Plain-text "key = value" lines; '#' starts a comment.
  static ExperimentConfig parse(const std::string& text);
  static ExperimentConfig load(const std::filesystem::path& path);
  /// Every key in a fixed order; parse(canonical()) reproduces the config.
  std::string canonical() const;
  std::uint64_t hash() const;
  void validate() const;

  TaskOptions task_options() const;
  static std::vector<std::string> keys();
};

struct Observation {
  std::size_t id = 0;
  std::vector<double> theta;
  std::vector<double> x;
};

/// Deterministic observation set drawn from the prior predictive.
std::vector<Observation> make_observations(const Task& task, std::size_t count, std::uint64_t seed);

struct ResultRow {
  std::string task;
  std::string algorithm;
  std::size_t lf_budget = 0;
  std::size_t hf_budget = 0;
  std::uint64_t seed = 0;
  std::size_t observation_id = 0;
  std::string metric;
  double value = 0.0;

  std::string to_json() const;
  static ResultRow from_json(const std::string& line);
  bool operator==(const ResultRow&) const = default;
};

std::vector<ResultRow> read_results(const std::filesystem::path& path);

using ExperimentLog = std::function<void(const std::string&)>;

struct ExperimentSummary {
  std::vector<ResultRow> rows;
  std::size_t cells_run = 0;
  std::size_t cells_cached = 0;
};

/// Runs every (hf_budget, seed) cell. Cells already present in the output
/// directory are reused. Refuses an output directory that holds a different
/// config.
ExperimentSummary run_experiment(const ExperimentConfig& config, const ExperimentLog& log = {});

/// Reference samples for one observation, cached under output/reference.
Matrix cached_reference(const Task& task, const Observation& obs, const ExperimentConfig& config);

// ---- report --------------------------------------------------------------------------

struct ReportCell {
  double mean = 0.0;
  double ci = 0.0;  // 95% half-width, 0 when n = 1
  std::size_t n = 0;
};

struct Report {
  std::string metric;
  std::vector<std::string> algorithms;
  std::vector<std::size_t> budgets;
  std::map<std::pair<std::size_t, std::string>, ReportCell> cells;  // (budget, algorithm)
  std::vector<std::string> warnings;
};

Report build_report(const std::vector<ResultRow>& rows, const std::string& metric);
std::string report_csv(const Report& report);
Report parse_report_csv(const std::string& text, const std::string& metric);
/// One line per result row, in a flat CSV.
std::string long_csv(const std::vector<ResultRow>& rows);

}  // namespace mfsbi
