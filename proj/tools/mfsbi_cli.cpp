// Copyright 2026 The mfsbi Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end: simulate, run, reference, report, sbc, mfabc.

#include <omp.h>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "mfsbi/dataset.hpp"
#include "mfsbi/errors.hpp"
#include "mfsbi/experiment.hpp"
#include "mfsbi/metrics.hpp"
#include "mfsbi/reference.hpp"
#include "mfsbi/rng.hpp"

using namespace mfsbi;
namespace fs = std::filesystem;

namespace {

constexpr int kUsageError = 2;

// Shared --config/--set handling.
struct ConfigFlags {
  std::string file;
  std::vector<std::string> overrides;

  void attach(CLI::App* cmd) {
    cmd->add_option("-c,--config", file, "Config file of key = value lines")->check(CLI::ExistingFile);
    cmd->add_option("--set", overrides, "Override one config key, as key=value")->take_all();
  }

  ExperimentConfig load() const {
    ExperimentConfig cfg = file.empty() ? ExperimentConfig{} : ExperimentConfig::load(file);
    for (const auto& o : overrides) {
      const auto eq = o.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + o + "'");
      cfg.set(o.substr(0, eq), o.substr(eq + 1));
    }
    return cfg;
  }
};

void print_log(const std::string& m) { std::cerr << m << "\n"; }

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

const Simulator& pick_fidelity(const Task& task, const std::string& fidelity) {
  if (fidelity == "low") return task.low();
  if (fidelity == "high") return task.high();
  std::size_t level = 0;
  try {
    level = std::stoul(fidelity);
  } catch (const std::exception&) {
    throw ConfigError("fidelity must be low, high or a chain level, got '" + fidelity + "'");
  }
  const auto& levels = task.chain.empty() ? task.levels : task.chain;
  if (level >= levels.size()) throw ConfigError("task '" + task.id + "' has no fidelity level " + fidelity);
  return *levels[level];
}

int cmd_simulate(const ExperimentConfig& cfg, const std::string& fidelity, std::size_t n, std::uint64_t seed,
                 const std::string& out) {
  if (n == 0) throw ConfigError("-n must be positive");
  const auto start = std::chrono::steady_clock::now();
  const Task task = make_task(cfg.task, cfg.task_options());
  const Simulator& sim = pick_fidelity(task, fidelity);
  const auto batch = simulate_batch(sim, task.prior_source(), n, seed);
  Dataset d;
  d.task = task.id;
  d.fidelity = &sim == &task.high() ? static_cast<int>(task.levels.size()) - 1 : 0;
  d.simulator = sim.name();
  d.seed = seed;
  d.simulations = batch.simulations;
  d.replacements = batch.replacements;
  d.theta = batch.theta;
  d.x = batch.x;
  const fs::path path = out.empty() ? fs::path(task.id + "-" + fidelity + "-n" + std::to_string(n) + "-seed" +
                                               std::to_string(seed) + ".csv")
                                    : fs::path(out);
  save_dataset(d, path);
  std::cout << "wrote " << path.string() << "\nrows " << n << "\nreplacements " << batch.replacements
            << "\nwall_seconds " << seconds_since(start) << "\n";
  return 0;
}

void print_reports(const std::vector<ResultRow>& rows, const std::vector<std::string>& metrics) {
  for (const auto& metric : metrics) {
    const auto rep = build_report(rows, metric);
    std::cout << "# " << metric << " (mean, 95% CI half-width, n)\n" << report_csv(rep);
    for (const auto& w : rep.warnings) std::cerr << "warning: " << w << "\n";
  }
}

int cmd_run(const ExperimentConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  const auto summary = run_experiment(cfg, print_log);
  std::cerr << "cells run " << summary.cells_run << ", cached " << summary.cells_cached << " in "
            << seconds_since(start) << " s\n";
  print_reports(summary.rows, cfg.metrics);
  return 0;
}

int cmd_reference(const ExperimentConfig& cfg, std::size_t observation) {
  const Task task = make_task(cfg.task, cfg.task_options());
  const auto obs = make_observations(task, observation + 1, cfg.observation_seed);
  const auto samples = cached_reference(task, obs[observation], cfg);
  std::cout << "reference samples " << samples.rows << " for observation " << observation << " under "
            << (cfg.output / "reference").string() << "\n";
  return 0;
}

int cmd_report(const fs::path& dir, const std::vector<std::string>& metrics, bool long_format, const std::string& out) {
  const fs::path path = fs::is_directory(dir) ? dir / "results.jsonl" : dir;
  const auto rows = read_results(path);
  if (rows.empty()) throw ConfigError("results store " + path.string() + " is empty");
  std::ostringstream text;
  if (long_format) {
    text << long_csv(rows);
  } else {
    std::vector<std::string> wanted = metrics;
    if (wanted.empty()) {
      for (const auto& r : rows) {
        if (std::find(wanted.begin(), wanted.end(), r.metric) == wanted.end()) wanted.push_back(r.metric);
      }
    }
    for (const auto& m : wanted) {
      const auto rep = build_report(rows, m);
      if (wanted.size() > 1) text << "# " << m << "\n";
      text << report_csv(rep);
      for (const auto& w : rep.warnings) std::cerr << "warning: " << w << "\n";
    }
  }
  if (out.empty()) {
    std::cout << text.str();
  } else {
    std::ofstream f(out);
    if (!f) throw ConfigError("cannot write " + out);
    f << text.str();
  }
  return 0;
}

int cmd_sbc(const ExperimentConfig& cfg, std::size_t pairs, std::size_t draws, std::size_t bins) {
  if (cfg.algorithm != "npe" && cfg.algorithm != "mf-npe") throw ConfigError("sbc needs an amortized npe or mf-npe run");
  const Task task = make_task(cfg.task, cfg.task_options());
  const std::uint64_t seed = cfg.seeds.front();
  RunContext ctx;
  ctx.architecture = task.architecture;
  ctx.train = cfg.train;
  ctx.seed = seed;
  ctx.log = print_log;
  const auto hf = SimulationData::from(simulate_batch(task.high(), task.prior_source(), cfg.hf_budgets.front(),
                                                      derive_seed(seed, stream_id("hf-data"))));
  const auto run = cfg.algorithm == "npe"
                       ? run_npe(task.prior, hf, ctx)
                       : run_mf_npe(task.prior,
                                    SimulationData::from(simulate_batch(task.low(), task.prior_source(), cfg.lf_budget,
                                                                        derive_seed(seed, stream_id("lf-data"), 0))),
                                    hf, ctx);
  const auto rep = sbc_ranks(run.posterior, task.prior, task.high(), pairs, draws, derive_seed(seed, stream_id("sbc")), bins);
  std::cout << "dim,chi2,p_value,histogram\n";
  for (std::size_t d = 0; d < rep.histogram.size(); ++d) {
    std::cout << d << "," << rep.chi2[d] << "," << rep.p_value[d] << ",";
    for (std::size_t b = 0; b < rep.histogram[d].size(); ++b) std::cout << (b ? " " : "") << rep.histogram[d][b];
    std::cout << "\n";
  }
  return 0;
}

int cmd_mfabc(const ExperimentConfig& cfg, const std::vector<double>& epsilons, std::size_t particles) {
  const Task task = make_task(cfg.task, cfg.task_options());
  const auto obs = make_observations(task, cfg.observations, cfg.observation_seed);
  std::cout << "epsilon,observation,hf_fraction,low_acceptance,positive_particles,hf_calls\n";
  for (double eps : epsilons) {
    MfAbcConfig abc = cfg.abc;
    abc.epsilon_low = abc.epsilon_high = eps;
    abc.validate();
    for (const auto& o : obs) {
      MfAbcResult r;
      try {
        r = run_mf_abc(task.prior, task.low(), task.high(), o.x, particles, abc,
                       derive_seed(cfg.seeds.front(), stream_id("abc"), o.id));
      } catch (const SamplingError& e) {
        std::cout << eps << "," << o.id << ",,,0,\n";
        std::cerr << "observation " << o.id << ": " << e.what() << "\n";
        continue;
      }
      std::size_t positive = 0;
      for (const auto& p : r.particles) positive += p.weight > 0.0;
      std::cout << eps << "," << o.id << "," << r.hf_fraction() << "," << r.low_acceptance() << "," << positive << ","
                << r.hf_calls << "\n";
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* workers = std::getenv("MFSBI_WORKERS")) {
    const int n = std::atoi(workers);
    if (n < 1) {
      std::cerr << "MFSBI_WORKERS must be a positive integer\n";
      return kUsageError;
    }
    omp_set_num_threads(n);
  }

  CLI::App app{"Multifidelity simulation-based inference experiments"};
  app.require_subcommand(1);

  auto* simulate = app.add_subcommand("simulate", "Simulate a dataset from the prior predictive");
  ConfigFlags sim_flags;
  sim_flags.attach(simulate);
  std::string task_id, fidelity = "high", out;
  std::size_t n = 0;
  std::uint64_t seed = 1;
  simulate->add_option("--task", task_id, "Task id (overrides the config)");
  simulate->add_option("--fidelity", fidelity, "low, high or a chain level index")->capture_default_str();
  simulate->add_option("-n", n, "Number of valid rows")->required();
  simulate->add_option("--seed", seed, "Seed")->capture_default_str();
  simulate->add_option("-o,--out", out, "Output dataset path");

  auto* run = app.add_subcommand("run", "Run an algorithm over the budget grid and seeds");
  ConfigFlags run_flags;
  run_flags.attach(run);

  auto* reference = app.add_subcommand("reference", "Generate and cache a reference posterior");
  ConfigFlags ref_flags;
  ref_flags.attach(reference);
  std::size_t observation = 0;
  reference->add_option("--observation", observation, "Observation index")->capture_default_str();

  auto* report = app.add_subcommand("report", "Summarize a results store as CSV");
  std::string results_dir, report_out;
  std::vector<std::string> report_metrics;
  bool long_format = false;
  report->add_option("results", results_dir, "Output directory or results.jsonl")->required();
  report->add_option("--metric", report_metrics, "Metrics to tabulate (default: all present)");
  report->add_flag("--long", long_format, "One line per result row");
  report->add_option("-o,--out", report_out, "Write CSV here instead of stdout");

  auto* sbc = app.add_subcommand("sbc", "Simulation-based calibration of an amortized run");
  ConfigFlags sbc_flags;
  sbc_flags.attach(sbc);
  std::size_t pairs = 1000, draws = 100, bins = 0;
  sbc->add_option("--pairs", pairs, "Prior predictive pairs")->capture_default_str();
  sbc->add_option("--draws", draws, "Posterior draws per pair")->capture_default_str();
  sbc->add_option("--bins", bins, "Histogram bins (0 = automatic)")->capture_default_str();

  auto* mfabc = app.add_subcommand("mfabc", "Multifidelity ABC over a tolerance grid");
  ConfigFlags abc_flags;
  abc_flags.attach(mfabc);
  std::vector<double> epsilons{1.0};
  std::size_t particles = 10'000;
  mfabc->add_option("--eps", epsilons, "Tolerances applied to both fidelities")->capture_default_str();
  mfabc->add_option("--particles", particles, "Particles per observation")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*simulate) {
      auto cfg = sim_flags.load();
      if (!task_id.empty()) cfg.set("task", task_id);
      return cmd_simulate(cfg, fidelity, n, seed, out);
    }
    if (*run) return cmd_run(run_flags.load());
    if (*reference) return cmd_reference(ref_flags.load(), observation);
    if (*report) return cmd_report(results_dir, report_metrics, long_format, report_out);
    if (*sbc) return cmd_sbc(sbc_flags.load(), pairs, draws, bins);
    if (*mfabc) return cmd_mfabc(abc_flags.load(), epsilons, particles);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
