// Copyright 2026 The mfsbi Authors
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "mfsbi/errors.hpp"
#include "mfsbi/experiment.hpp"

using namespace mfsbi;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("mfsbi-test-" + name + "-" + std::to_string(std::random_device{}()));
  fs::remove_all(dir);
  return dir;
}

ExperimentConfig small_config(const fs::path& out) {
  auto cfg = ExperimentConfig::parse(R"(
    task = gaussian
    algorithm = mf-npe
    lf_budget = 300
    hf_budgets = 50, 100
    seeds = 1-2
    observations = 2
    metrics = c2st, nltp, nrmse, mmd
    reference_samples = 200
    metric_samples = 200
    train.max_epochs = 5   # keep it quick
    save_checkpoints = false
  )");
  cfg.output = out;
  return cfg;
}

}  // namespace

TEST_CASE("config parse and canonical round trip") {
  auto cfg = ExperimentConfig::parse("task = ou4\nseeds = 3, 5-7\nhf_budgets = 1e3,50\nabc.eta_reject=0.25\n");
  CHECK(cfg.task == "ou4");
  CHECK(cfg.seeds == std::vector<std::uint64_t>{3, 5, 6, 7});
  CHECK(cfg.hf_budgets == std::vector<std::size_t>{1000, 50});
  CHECK(cfg.abc.eta_reject == 0.25);
  const auto again = ExperimentConfig::parse(cfg.canonical());
  CHECK(again.canonical() == cfg.canonical());
  CHECK(again.hash() == cfg.hash());
  cfg.set("train.learning_rate", "1e-3");
  CHECK(cfg.hash() != again.hash());
  for (const auto& key : ExperimentConfig::keys()) CHECK(cfg.canonical().find(key + " = ") != std::string::npos);
}

TEST_CASE("config errors") {
  CHECK_THROWS_AS(ExperimentConfig::parse("colour = red"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("lf_budget = many"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("no equals sign"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("seeds = 5-2"), ConfigError);
  auto cfg = ExperimentConfig::parse("task = blob\nmetrics = c2st");
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = ExperimentConfig::parse("algorithm = mf-abc\nmetrics = nltp");
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = ExperimentConfig::parse("task = slcp\nalgorithm = mf-npe-chain");
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = ExperimentConfig::parse("algorithm = tsnpe\nhf_budgets = 40");
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("result rows round trip through json") {
  const ResultRow row{"ou2", "mf-npe", 10000, 50, 7, 3, "c2st", 0.1 + 0.2};
  CHECK(ResultRow::from_json(row.to_json()) == row);
  CHECK_THROWS_AS(ResultRow::from_json("{\"task\": 1}"), FormatError);
}

TEST_CASE("report aggregates and round trips through csv") {
  std::vector<ResultRow> rows;
  for (int i = 0; i < 4; ++i) rows.push_back({"ou2", "npe", 0, 100, 1, std::size_t(i), "c2st", 0.8 + 0.01 * i});
  for (int i = 0; i < 4; ++i) rows.push_back({"ou2", "npe", 0, 1000, 1, std::size_t(i), "c2st", 0.9 + 0.01 * i});
  rows.push_back({"ou2", "mf-npe", 1000, 100, 1, 0, "c2st", 0.6});
  rows.push_back({"ou2", "mf-npe", 1000, 100, 1, 0, "nltp", 3.0});
  const auto rep = build_report(rows, "c2st");
  REQUIRE(rep.budgets == std::vector<std::size_t>{100, 1000});
  REQUIRE(rep.algorithms == std::vector<std::string>{"mf-npe", "npe"});
  const auto& cell = rep.cells.at({100, "npe"});
  CHECK(cell.n == 4);
  CHECK(cell.mean == doctest::Approx(0.815));
  // sd of {0,1,2,3}/100 is 0.0129099; t(0.975, 3) = 3.182446.
  CHECK(cell.ci == doctest::Approx(3.182446 * 0.0129099 / 2.0).epsilon(1e-5));
  CHECK(rep.cells.at({100, "mf-npe"}).ci == 0.0);
  CHECK_FALSE(rep.cells.contains({1000, "mf-npe"}));
  bool rising = false;
  for (const auto& w : rep.warnings) rising |= w.find("npe: mean c2st rises") != std::string::npos;
  CHECK(rising);

  const auto parsed = parse_report_csv(report_csv(rep), "c2st");
  CHECK(parsed.budgets == rep.budgets);
  CHECK(parsed.algorithms == rep.algorithms);
  REQUIRE(parsed.cells.size() == rep.cells.size());
  for (const auto& [key, c] : rep.cells) {
    CHECK(parsed.cells.at(key).mean == c.mean);
    CHECK(parsed.cells.at(key).ci == c.ci);
    CHECK(parsed.cells.at(key).n == c.n);
  }
  CHECK_THROWS_AS(build_report(rows, "mmd"), ConfigError);
  CHECK(long_csv(rows).find("ou2,mf-npe,1000,100,1,0,nltp,3\n") != std::string::npos);
}

TEST_CASE("observations are deterministic prior predictive draws") {
  const auto task = make_task("gaussian");
  const auto a = make_observations(task, 3, 11);
  const auto b = make_observations(task, 3, 11);
  REQUIRE(a.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(a[i].id == i);
    CHECK(a[i].theta == b[i].theta);
    CHECK(a[i].x == b[i].x);
  }
  CHECK(make_observations(task, 1, 12)[0].x != a[0].x);
}

TEST_CASE("experiment runs, caches cells and reproduces rows") {
  const auto dir_a = scratch_dir("a"), dir_b = scratch_dir("b");
  auto cfg = small_config(dir_a);
  const auto first = run_experiment(cfg);
  CHECK(first.cells_run == 4);
  // 4 cells x 2 observations x 4 metrics.
  CHECK(first.rows.size() == 32);
  CHECK(read_results(dir_a / "results.jsonl") == first.rows);
  for (const auto& r : first.rows) {
    CHECK(std::isfinite(r.value));
    if (r.metric == "c2st") CHECK((r.value >= 0.0 && r.value <= 1.0));
  }

  const auto second = run_experiment(cfg);
  CHECK(second.cells_run == 0);
  CHECK(second.cells_cached == 4);
  CHECK(second.rows == first.rows);
  CHECK(read_results(dir_a / "results.jsonl").size() == 32);

  auto other = cfg;
  other.lf_budget = 400;
  CHECK_THROWS_AS(run_experiment(other), ConfigError);

  cfg.output = dir_b;
  CHECK(run_experiment(cfg).rows == first.rows);
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}
