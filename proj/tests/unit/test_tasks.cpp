// Copyright 2026 The mfsbi Authors
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "mfsbi/dataset.hpp"
#include "mfsbi/errors.hpp"
#include "mfsbi/tasks.hpp"

using namespace mfsbi;

TEST_CASE("task registry") {
  for (const auto& id : task_ids()) {
    TaskOptions opt;
    opt.blob.side = 64;
    opt.blob.low_side = 8;
    auto task = make_task(id, opt);
    CHECK(task.levels.size() == 2);
    CHECK(task.low().theta_dim() == task.theta_dim());
    CHECK(task.low().x_dim() == task.x_dim());
    CHECK(task.architecture.theta_dim == task.theta_dim());
    CHECK(task.architecture.x_dim == task.x_dim());
    auto batch = simulate_batch(task.high(), task.prior_source(), 3, 1);
    for (std::size_t i = 0; i < 3; ++i) CHECK(task.prior.contains(batch.theta.row(i)));
  }
  CHECK(make_task("ou3").chain.size() == 3);
  CHECK(make_task("slcp").low_free_dims.size() == 3);
  CHECK(make_task("ou4").theta_dim() == 4);
  CHECK_THROWS_AS(make_task("lorenz"), ConfigError);
}

TEST_CASE("dataset csv round trip is exact") {
  auto task = make_task("ou2");
  auto batch = simulate_batch(task.low(), task.prior_source(), 50, 9);
  Dataset d;
  d.task = "ou2";
  d.fidelity = 0;
  d.simulator = task.low().name();
  d.seed = 9;
  d.simulations = batch.simulations;
  d.theta = batch.theta;
  d.x = batch.x;
  d.weights.assign(50, 0.25);
  d.weights[3] = -1.0 / 3.0;
  d.meta["note"] = "pilot";
  const auto path = std::filesystem::temp_directory_path() / "mfsbi_test_dataset.csv";
  save_dataset(d, path);
  auto e = load_dataset(path);
  CHECK(e.theta.data == d.theta.data);
  CHECK(e.x.data == d.x.data);
  CHECK(e.weights == d.weights);
  CHECK(e.task == "ou2");
  CHECK(e.simulator == "ou-low");
  CHECK(e.seed == 9);
  CHECK(e.simulations == 50);
  CHECK(e.meta.at("note") == "pilot");
  CHECK(d.head(5).size() == 5);

  std::string text;
  {
    std::ifstream in(path);
    text.assign(std::istreambuf_iterator<char>(in), {});
  }
  {
    std::ofstream out(path, std::ios::trunc);
    out << text.substr(0, text.size() / 2);
  }
  CHECK_THROWS_AS(load_dataset(path), FormatError);
  std::filesystem::remove(path);
}

TEST_CASE("wide observations use the binary block") {
  Dataset d;
  d.task = "blob";
  d.theta = Matrix(3, 3, 1.5);
  d.x = Matrix(3, 2048);
  for (std::size_t i = 0; i < d.x.data.size(); ++i) d.x.data[i] = static_cast<double>(i) / 7.0;
  const auto path = std::filesystem::temp_directory_path() / "mfsbi_test_blob.csv";
  save_dataset(d, path);
  auto e = load_dataset(path);
  CHECK(e.x.data == d.x.data);
  CHECK(e.theta.data == d.theta.data);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 100);
  CHECK_THROWS_AS(load_dataset(path), FormatError);
  std::filesystem::remove(path);
}
