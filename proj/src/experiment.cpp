// Copyright 2026 The mfsbi Authors
// SPDX-License-Identifier: Apache-2.0

#include "mfsbi/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>

#include "json.hpp"
#include "mfsbi/dataset.hpp"
#include "mfsbi/errors.hpp"
#include "mfsbi/metrics.hpp"
#include "mfsbi/reference.hpp"
#include "mfsbi/rng.hpp"

namespace mfsbi {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ConfigError("config key '" + key + "': cannot parse '" + text + "'");
  return v;
}

std::size_t parse_size(const std::string& key, const std::string& text) {
  // Accepts plain integers and exact powers written as 1e4.
  if (text.find_first_of("eE") != std::string::npos) {
    const double d = parse_number<double>(key, text);
    if (d < 0 || d != std::floor(d)) throw ConfigError("config key '" + key + "': '" + text + "' is not a count");
    return static_cast<std::size_t>(d);
  }
  return parse_number<std::size_t>(key, text);
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + text + "'");
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (const auto& item : v) {
    if (!out.empty()) out += ",";
    if constexpr (std::is_same_v<T, std::string>) out += item;
    else out += std::to_string(item);
  }
  return out;
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : text) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

const std::set<std::string> kAlgorithms{"npe", "mf-npe", "mf-npe-chain", "tsnpe", "mf-tsnpe", "a-mf-tsnpe", "mf-abc"};
const std::set<std::string> kMetrics{"c2st", "mmd", "nltp", "nrmse"};

}  // namespace

// ---- config -------------------------------------------------------------------------

std::vector<std::string> ExperimentConfig::keys() {
  return {"task",          "algorithm",        "lf_budget",         "hf_budgets",         "seeds",
          "observations",  "observation_seed", "metrics",           "output",             "reference_samples",
          "metric_samples", "sir_proposals",   "save_checkpoints",  "rounds",             "epsilon",
          "n_mc",          "round_data",       "coverage_draws",    "b_fraction",         "ensemble",
          "pool_size",     "delta",            "invert",            "abc.epsilon_low",    "abc.epsilon_high",
          "abc.eta_accept", "abc.eta_reject",  "abc.pilot",         "train.batch_size",   "train.learning_rate",
          "train.val_fraction", "train.patience", "train.max_epochs", "sir_points",       "blob_side"};
}

void ExperimentConfig::set(const std::string& raw_key, const std::string& raw_value) {
  const std::string key = trim(raw_key), value = trim(raw_value);
  if (key == "task") task = value;
  else if (key == "algorithm") algorithm = value;
  else if (key == "lf_budget") lf_budget = parse_size(key, value);
  else if (key == "hf_budgets") {
    hf_budgets.clear();
    for (const auto& v : split(value, ',')) hf_budgets.push_back(parse_size(key, v));
  } else if (key == "seeds") {
    seeds.clear();
    for (const auto& v : split(value, ',')) {
      const auto dash = v.find('-');
      if (dash != std::string::npos && dash > 0) {
        const auto lo = parse_number<std::uint64_t>(key, v.substr(0, dash));
        const auto hi = parse_number<std::uint64_t>(key, v.substr(dash + 1));
        if (hi < lo) throw ConfigError("config key 'seeds': empty range '" + v + "'");
        for (auto s = lo; s <= hi; ++s) seeds.push_back(s);
      } else {
        seeds.push_back(parse_number<std::uint64_t>(key, v));
      }
    }
  } else if (key == "observations") observations = parse_size(key, value);
  else if (key == "observation_seed") observation_seed = parse_number<std::uint64_t>(key, value);
  else if (key == "metrics") metrics = split(value, ',');
  else if (key == "output") output = value;
  else if (key == "reference_samples") reference_samples = parse_size(key, value);
  else if (key == "metric_samples") metric_samples = parse_size(key, value);
  else if (key == "sir_proposals") sir_proposals = parse_size(key, value);
  else if (key == "save_checkpoints") save_checkpoints = parse_bool(key, value);
  else if (key == "rounds") sequential.rounds = parse_size(key, value);
  else if (key == "epsilon") sequential.epsilon = parse_number<double>(key, value);
  else if (key == "n_mc") sequential.n_mc = parse_size(key, value);
  else if (key == "round_data") sequential.round_data = parse_round_data(value);
  else if (key == "coverage_draws") sequential.coverage_draws = parse_size(key, value);
  else if (key == "b_fraction") active.b_fraction = parse_number<double>(key, value);
  else if (key == "ensemble") active.ensemble = parse_size(key, value);
  else if (key == "pool_size") active.pool_size = parse_size(key, value);
  else if (key == "delta") perturbation.delta = parse_number<double>(key, value);
  else if (key == "invert") perturbation.invert = parse_bool(key, value);
  else if (key == "abc.epsilon_low") abc.epsilon_low = parse_number<double>(key, value);
  else if (key == "abc.epsilon_high") abc.epsilon_high = parse_number<double>(key, value);
  else if (key == "abc.eta_accept") abc.eta_accept = parse_number<double>(key, value);
  else if (key == "abc.eta_reject") abc.eta_reject = parse_number<double>(key, value);
  else if (key == "abc.pilot") abc.pilot = parse_size(key, value);
  else if (key == "train.batch_size") train.batch_size = parse_size(key, value);
  else if (key == "train.learning_rate") train.learning_rate = parse_number<double>(key, value);
  else if (key == "train.val_fraction") train.val_fraction = parse_number<double>(key, value);
  else if (key == "train.patience") train.patience = parse_size(key, value);
  else if (key == "train.max_epochs") train.max_epochs = parse_size(key, value);
  else if (key == "sir_points") sir_points = parse_size(key, value);
  else if (key == "blob_side") blob_side = parse_size(key, value);
  else throw ConfigError("unknown config key '" + key + "'");
}

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(number) + ": expected key = value, got '" + line + "'");
    }
    cfg.set(line.substr(0, eq), line.substr(eq + 1));
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

std::string ExperimentConfig::canonical() const {
  std::ostringstream o;
  o << "task = " << task << "\n"
    << "algorithm = " << algorithm << "\n"
    << "lf_budget = " << lf_budget << "\n"
    << "hf_budgets = " << join(hf_budgets) << "\n"
    << "seeds = " << join(seeds) << "\n"
    << "observations = " << observations << "\n"
    << "observation_seed = " << observation_seed << "\n"
    << "metrics = " << join(metrics) << "\n"
    << "output = " << output.string() << "\n"
    << "reference_samples = " << reference_samples << "\n"
    << "metric_samples = " << metric_samples << "\n"
    << "sir_proposals = " << sir_proposals << "\n"
    << "save_checkpoints = " << (save_checkpoints ? "true" : "false") << "\n"
    << "rounds = " << sequential.rounds << "\n"
    << "epsilon = " << format_double(sequential.epsilon) << "\n"
    << "n_mc = " << sequential.n_mc << "\n"
    << "round_data = " << to_string(sequential.round_data) << "\n"
    << "coverage_draws = " << sequential.coverage_draws << "\n"
    << "b_fraction = " << format_double(active.b_fraction) << "\n"
    << "ensemble = " << active.ensemble << "\n"
    << "pool_size = " << active.pool_size << "\n"
    << "delta = " << format_double(perturbation.delta) << "\n"
    << "invert = " << (perturbation.invert ? "true" : "false") << "\n"
    << "abc.epsilon_low = " << format_double(abc.epsilon_low) << "\n"
    << "abc.epsilon_high = " << format_double(abc.epsilon_high) << "\n"
    << "abc.eta_accept = " << format_double(abc.eta_accept) << "\n"
    << "abc.eta_reject = " << format_double(abc.eta_reject) << "\n"
    << "abc.pilot = " << abc.pilot << "\n"
    << "train.batch_size = " << train.batch_size << "\n"
    << "train.learning_rate = " << format_double(train.learning_rate) << "\n"
    << "train.val_fraction = " << format_double(train.val_fraction) << "\n"
    << "train.patience = " << train.patience << "\n"
    << "train.max_epochs = " << train.max_epochs << "\n"
    << "sir_points = " << sir_points << "\n"
    << "blob_side = " << blob_side << "\n";
  return o.str();
}

std::uint64_t ExperimentConfig::hash() const { return fnv1a(canonical()); }

TaskOptions ExperimentConfig::task_options() const {
  TaskOptions o;
  o.perturbation = perturbation;
  o.sir_points = sir_points;
  o.blob.side = blob_side;
  return o;
}

void ExperimentConfig::validate() const {
  const auto ids = task_ids();
  if (std::find(ids.begin(), ids.end(), task) == ids.end()) throw ConfigError("unknown task '" + task + "'");
  if (!kAlgorithms.contains(algorithm)) throw ConfigError("unknown algorithm '" + algorithm + "'");
  if (hf_budgets.empty()) throw ConfigError("hf_budgets is empty");
  for (auto b : hf_budgets) {
    if (b == 0) throw ConfigError("hf budgets must be positive");
  }
  if (seeds.empty()) throw ConfigError("seeds is empty");
  if (observations == 0) throw ConfigError("observations must be positive");
  if (metrics.empty()) throw ConfigError("metrics is empty");
  for (const auto& m : metrics) {
    if (!kMetrics.contains(m)) throw ConfigError("unknown metric '" + m + "'");
  }
  const bool uses_lf = algorithm == "mf-npe" || algorithm == "mf-npe-chain" || algorithm == "mf-tsnpe" ||
                       algorithm == "a-mf-tsnpe";
  if (uses_lf && lf_budget == 0) throw ConfigError("lf_budget must be positive for " + algorithm);
  if (metric_samples < 100 || reference_samples < 100) throw ConfigError("sample counts must be at least 100");
  if (algorithm == "mf-npe-chain" && make_task(task, task_options()).chain.empty()) {
    throw ConfigError("task '" + task + "' has no fidelity chain; use mf-npe");
  }
  if (algorithm == "mf-abc") {
    abc.validate();
    if (std::find(metrics.begin(), metrics.end(), "nltp") != metrics.end()) {
      throw ConfigError("nltp needs a density; mf-abc only yields particles");
    }
  }
  const bool sequential_alg = algorithm == "tsnpe" || algorithm == "mf-tsnpe" || algorithm == "a-mf-tsnpe";
  if (sequential_alg) {
    for (auto b : hf_budgets) {
      if (b / sequential.rounds < 10) {
        throw ConfigError("hf budget " + std::to_string(b) + " leaves fewer than 10 simulations per round");
      }
    }
  }
  if (algorithm == "a-mf-tsnpe") active.validate();
  train.validate();
  const bool needs_reference = std::any_of(metrics.begin(), metrics.end(),
                                           [](const std::string& m) { return m == "c2st" || m == "mmd"; });
  if (needs_reference && !make_task(task, task_options()).exact_likelihood) {
    throw ConfigError("task '" + task + "' has no reference posterior for c2st or mmd; use nltp or nrmse");
  }
}

// ---- observations and results ---------------------------------------------------------

std::vector<Observation> make_observations(const Task& task, std::size_t count, std::uint64_t seed) {
  const auto batch = simulate_batch(task.high(), task.prior_source(), count, derive_seed(seed, stream_id("observations")));
  std::vector<Observation> out;
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back({i, {batch.theta.row(i).begin(), batch.theta.row(i).end()}, {batch.x.row(i).begin(), batch.x.row(i).end()}});
  }
  return out;
}

std::string ResultRow::to_json() const {
  const json j = {{"task", task},         {"algorithm", algorithm},           {"lf_budget", lf_budget},
                  {"hf_budget", hf_budget}, {"seed", seed},                   {"observation_id", observation_id},
                  {"metric", metric},     {"value", value}};
  return j.dump();
}

ResultRow ResultRow::from_json(const std::string& line) {
  try {
    const auto j = json::parse(line);
    return {j.at("task"),      j.at("algorithm"),      j.at("lf_budget"), j.at("hf_budget"),
            j.at("seed"),      j.at("observation_id"), j.at("metric"),    j.at("value")};
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad results row: ") + e.what());
  }
}

std::vector<ResultRow> read_results(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read results file " + path.string());
  std::vector<ResultRow> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!trim(line).empty()) rows.push_back(ResultRow::from_json(line));
  }
  return rows;
}

Matrix cached_reference(const Task& task, const Observation& obs, const ExperimentConfig& config) {
  std::string key = task.id + "|rejection-or-sir|" + std::to_string(config.reference_samples) + "|" +
                    std::to_string(config.sir_proposals) + "|" + std::to_string(config.observation_seed) + "|";
  for (double v : obs.x) key += format_double(v) + ",";
  const fs::path dir = config.output / "reference";
  const fs::path path = dir / (task.id + "-obs" + std::to_string(obs.id) + "-" + hex(fnv1a(key)) + ".csv");
  if (fs::exists(path)) return load_dataset(path).theta;
  const auto ref = reference_posterior(task, obs.x, config.reference_samples,
                                       derive_seed(config.observation_seed, stream_id("reference"), obs.id),
                                       config.sir_proposals);
  Dataset d;
  d.task = task.id;
  d.fidelity = static_cast<int>(task.levels.size()) - 1;
  d.simulator = "reference-" + ref.method;
  d.seed = config.observation_seed;
  d.theta = ref.samples;
  d.x = Matrix::repeat_row(obs.x, ref.samples.rows);
  d.meta["method"] = ref.method;
  d.meta["proposals"] = std::to_string(ref.proposals);
  d.meta["acceptance_rate"] = format_double(ref.acceptance_rate);
  d.meta["bound"] = format_double(ref.bound);
  d.meta["observed_max"] = format_double(ref.observed_max);
  d.meta["ess"] = format_double(ref.ess);
  fs::create_directories(dir);
  const fs::path tmp = path.string() + ".tmp";
  save_dataset(d, tmp);
  fs::rename(tmp, path);
  return ref.samples;
}

// ---- cells ---------------------------------------------------------------------------

namespace {

struct CellOutput {
  std::vector<ResultRow> rows;
  json manifest;
};

Matrix head_rows(const Matrix& m, std::size_t n) {
  Matrix out(std::min(n, m.rows), m.cols);
  std::copy(m.data.begin(), m.data.begin() + static_cast<std::ptrdiff_t>(out.rows * m.cols), out.data.begin());
  return out;
}

class CellRunner {
 public:
  CellRunner(const ExperimentConfig& cfg, const Task& task, const std::vector<Observation>& obs,
             const std::vector<Matrix>& references, std::size_t budget, std::uint64_t seed, const ExperimentLog& log)
      : cfg_(cfg), task_(task), obs_(obs), refs_(references), budget_(budget), seed_(seed), log_(log) {
    name_ = cfg.algorithm + "-hf" + std::to_string(budget) + "-seed" + std::to_string(seed);
  }

  const std::string& name() const { return name_; }

  CellOutput run() {
    const auto start = std::chrono::steady_clock::now();
    out_.manifest = {{"cell", name_}, {"config_hash", hex(cfg_.hash())}, {"hf_budget", budget_}, {"seed", seed_},
                     {"lf_budget", cfg_.lf_budget}};
    const auto& alg = cfg_.algorithm;
    if (alg == "npe" || alg == "mf-npe" || alg == "mf-npe-chain") run_amortized();
    else if (alg == "mf-abc") run_abc();
    else run_sequential();
    out_.manifest["wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return std::move(out_);
  }

 private:
  RunContext context() const {
    RunContext ctx;
    ctx.architecture = task_.architecture;
    ctx.train = cfg_.train;
    ctx.seed = seed_;
    if (log_) ctx.log = [this](const std::string& m) { log_(name_ + ": " + m); };
    return ctx;
  }

  SimulationData lf_data(const Simulator& sim, std::size_t level) const {
    return SimulationData::from(
        simulate_batch(sim, task_.prior_source(), cfg_.lf_budget, derive_seed(seed_, stream_id("lf-data"), level)));
  }

  SimulationData hf_data() const {
    return SimulationData::from(
        simulate_batch(task_.high(), task_.prior_source(), budget_, derive_seed(seed_, stream_id("hf-data"))));
  }

  void add(std::size_t obs_id, const std::string& metric, double value) {
    out_.rows.push_back({task_.id, cfg_.algorithm, cfg_.lf_budget, budget_, seed_, obs_id, metric, value});
  }

  bool wants(const std::string& metric) const {
    return std::find(cfg_.metrics.begin(), cfg_.metrics.end(), metric) != cfg_.metrics.end();
  }

  void evaluate_samples(const Observation& o, const Matrix& samples) {
    const std::uint64_t s = derive_seed(seed_, stream_id("metric"), o.id);
    if (wants("c2st")) {
      const Matrix ref = head_rows(refs_[o.id], samples.rows);
      add(o.id, "c2st", c2st(head_rows(samples, ref.rows), ref, s));
    }
    if (wants("mmd")) add(o.id, "mmd", mmd(samples, refs_[o.id]));
    if (wants("nrmse")) add(o.id, "nrmse", nrmse(samples, o.theta, task_.prior.range()));
  }

  void evaluate(const Observation& o, const DensityModel& model) {
    Matrix x(1, o.x.size(), o.x);
    if (wants("nltp")) {
      Matrix t(1, o.theta.size(), o.theta);
      if (task_.prior.contains(o.theta)) add(o.id, "nltp", -model.log_prob(t, x).front());
    }
    if (wants("c2st") || wants("mmd") || wants("nrmse")) {
      evaluate_samples(o, model.sample(cfg_.metric_samples, x, derive_seed(seed_, stream_id("posterior-samples"), o.id)));
    }
  }

  void save(const Posterior& p, const std::string& suffix) {
    if (!cfg_.save_checkpoints) return;
    const fs::path dir = cfg_.output / "checkpoints";
    fs::create_directories(dir);
    for (std::size_t e = 0; e < p.size(); ++e) {
      const fs::path path = dir / (name_ + suffix + "-m" + std::to_string(e) + ".ckpt");
      save_checkpoint(p.member(e), path);
      out_.manifest["checkpoints"].push_back(path.string());
    }
  }

  void run_amortized() {
    const auto ctx = context();
    const auto hf = hf_data();
    RunResult run = [&] {
      if (cfg_.algorithm == "npe") return run_npe(task_.prior, hf, ctx);
      if (cfg_.algorithm == "mf-npe") return run_mf_npe(task_.prior, lf_data(task_.low(), 0), hf, ctx);
      std::vector<SimulationData> levels;
      for (std::size_t f = 0; f + 1 < task_.chain.size(); ++f) levels.push_back(lf_data(*task_.chain[f], f));
      levels.push_back(hf);
      return run_mf_npe_chain(task_.prior, levels, ctx);
    }();
    out_.manifest["run"] = run.manifest;
    out_.manifest["hf_simulations"] = hf.simulations;
    save(run.posterior, "");
    for (const auto& o : obs_) evaluate(o, run.posterior);
  }

  void run_sequential() {
    const auto ctx = context();
    SequentialConfig sc = cfg_.sequential;
    sc.per_round = budget_ / sc.rounds;
    std::optional<Pretraining> pretrained;
    if (cfg_.algorithm != "tsnpe") {
      const std::size_t members = cfg_.algorithm == "a-mf-tsnpe" ? cfg_.active.ensemble : 1;
      pretrained = pretrain(task_.prior, lf_data(task_.low(), 0), members, ctx);
    }
    std::size_t hf_total = 0;
    for (const auto& o : obs_) {
      Matrix x(1, o.x.size(), o.x);
      auto result = cfg_.algorithm == "tsnpe"      ? run_tsnpe(task_.prior, task_.high(), x, sc, ctx)
                    : cfg_.algorithm == "mf-tsnpe"
                        ? run_mf_tsnpe(task_.prior, *pretrained, task_.high(), x, sc, ctx)
                        : run_a_mf_tsnpe(task_.prior, *pretrained, task_.high(), x, sc, cfg_.active, ctx);
      hf_total += result.run.hf_simulations;
      out_.manifest["runs"].push_back({{"observation", o.id}, {"manifest", result.run.manifest}});
      save(result.run.posterior, "-obs" + std::to_string(o.id));
      evaluate(o, result.run.posterior);
    }
    out_.manifest["per_round"] = sc.per_round;
    out_.manifest["hf_simulations_per_observation"] = hf_total / obs_.size();
    out_.manifest["hf_simulations"] = hf_total;
  }

  // An observation whose particles all carry zero or negative weight has no
  // posterior sample; it is recorded in the manifest and yields no rows.
  void run_abc() {
    std::size_t hf_calls = 0;
    for (const auto& o : obs_) {
      json entry = {{"observation", o.id}};
      try {
        const auto r = run_mf_abc(task_.prior, task_.low(), task_.high(), o.x, budget_, cfg_.abc,
                                  derive_seed(seed_, stream_id("abc"), o.id));
        hf_calls += r.hf_calls;
        entry["hf_calls"] = r.hf_calls;
        entry["hf_fraction"] = r.hf_fraction();
        const auto resampled = resample_particles(r.particles, cfg_.metric_samples,
                                                  derive_seed(seed_, stream_id("abc-resample"), o.id),
                                                  [this](const std::string& m) {
                                                    if (log_) log_(name_ + ": " + m);
                                                  });
        entry["negative_mass"] = resampled.negative_mass;
        entry["positive_mass"] = resampled.positive_mass;
        evaluate_samples(o, resampled.theta);
      } catch (const SamplingError& e) {
        entry["failed"] = e.what();
        if (log_) log_(name_ + ": observation " + std::to_string(o.id) + ": " + e.what());
      }
      out_.manifest["runs"].push_back(entry);
    }
    out_.manifest["hf_simulations"] = hf_calls;
  }

  const ExperimentConfig& cfg_;
  const Task& task_;
  const std::vector<Observation>& obs_;
  const std::vector<Matrix>& refs_;
  std::size_t budget_;
  std::uint64_t seed_;
  const ExperimentLog& log_;
  std::string name_;
  CellOutput out_;
};

void write_text(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << text;
  }
  fs::rename(tmp, path);
}

}  // namespace

ExperimentSummary run_experiment(const ExperimentConfig& config, const ExperimentLog& log) {
  config.validate();
  fs::create_directories(config.output / "cells");
  fs::create_directories(config.output / "manifests");
  const fs::path config_path = config.output / "config.txt";
  const std::string canonical = config.canonical();
  if (fs::exists(config_path)) {
    std::ifstream in(config_path);
    std::stringstream existing;
    existing << in.rdbuf();
    if (existing.str() != canonical) {
      throw ConfigError("output directory " + config.output.string() +
                        " holds results of a different config; choose a new output directory");
    }
  } else {
    write_text(config_path, canonical);
  }

  const Task task = make_task(config.task, config.task_options());
  const auto observations = make_observations(task, config.observations, config.observation_seed);
  std::vector<Matrix> references(observations.size());
  const bool needs_reference = std::any_of(config.metrics.begin(), config.metrics.end(),
                                           [](const std::string& m) { return m == "c2st" || m == "mmd"; });
  if (needs_reference) {
    for (const auto& o : observations) {
      if (log) log("reference posterior for observation " + std::to_string(o.id));
      references[o.id] = cached_reference(task, o, config);
    }
  }

  struct Cell {
    std::size_t budget;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (auto b : config.hf_budgets) {
    for (auto s : config.seeds) cells.push_back({b, s});
  }
  std::vector<std::vector<ResultRow>> cell_rows(cells.size());
  std::vector<bool> fresh(cells.size(), false);
  std::vector<std::exception_ptr> errors(cells.size());
  const auto locked_log = [&](const std::string& m) {
    if (!log) return;
#pragma omp critical(mfsbi_experiment_log)
    log(m);
  };
  const ExperimentLog cell_log = log ? ExperimentLog(locked_log) : ExperimentLog();

  const auto n = static_cast<std::ptrdiff_t>(cells.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t ci = 0; ci < n; ++ci) {
    const auto c = static_cast<std::size_t>(ci);
    try {
      CellRunner runner(config, task, observations, references, cells[c].budget, cells[c].seed, cell_log);
      const fs::path rows_path = config.output / "cells" / (runner.name() + ".jsonl");
      if (fs::exists(rows_path)) {
        cell_rows[c] = read_results(rows_path);
        if (cell_log) cell_log(runner.name() + ": cached");
        continue;
      }
      if (cell_log) cell_log(runner.name() + ": running");
      auto out = runner.run();
      write_text(config.output / "manifests" / (runner.name() + ".json"), out.manifest.dump(2) + "\n");
      std::string text;
      for (const auto& r : out.rows) text += r.to_json() + "\n";
      write_text(rows_path, text);
      cell_rows[c] = std::move(out.rows);
      fresh[c] = true;
    } catch (...) {
      errors[c] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  ExperimentSummary summary;
  std::ofstream results(config.output / "results.jsonl", std::ios::app);
  if (!results) throw ConfigError("cannot append to " + (config.output / "results.jsonl").string());
  for (std::size_t c = 0; c < cells.size(); ++c) {
    if (fresh[c]) {
      ++summary.cells_run;
      for (const auto& r : cell_rows[c]) results << r.to_json() << "\n";
    } else {
      ++summary.cells_cached;
    }
    summary.rows.insert(summary.rows.end(), cell_rows[c].begin(), cell_rows[c].end());
  }
  return summary;
}

// ---- report --------------------------------------------------------------------------

Report build_report(const std::vector<ResultRow>& rows, const std::string& metric) {
  Report rep;
  rep.metric = metric;
  std::map<std::pair<std::size_t, std::string>, std::vector<double>> values;
  for (const auto& r : rows) {
    if (r.metric != metric) continue;
    values[{r.hf_budget, r.algorithm}].push_back(r.value);
  }
  if (values.empty()) throw ConfigError("no results rows for metric '" + metric + "'");
  std::set<std::size_t> budgets;
  std::set<std::string> algorithms;
  for (const auto& [key, v] : values) {
    budgets.insert(key.first);
    algorithms.insert(key.second);
    ReportCell cell;
    cell.n = v.size();
    for (double x : v) cell.mean += x;
    cell.mean /= static_cast<double>(v.size());
    if (v.size() > 1) {
      double ss = 0.0;
      for (double x : v) ss += (x - cell.mean) * (x - cell.mean);
      const double sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
      const boost::math::students_t t(static_cast<double>(v.size() - 1));
      cell.ci = boost::math::quantile(t, 0.975) * sd / std::sqrt(static_cast<double>(v.size()));
    } else {
      rep.warnings.push_back(key.second + " at budget " + std::to_string(key.first) + " has n=1; no interval");
    }
    rep.cells[key] = cell;
  }
  rep.budgets.assign(budgets.begin(), budgets.end());
  rep.algorithms.assign(algorithms.begin(), algorithms.end());
  for (const auto& a : rep.algorithms) {
    const ReportCell* previous = nullptr;
    std::size_t previous_budget = 0;
    for (auto b : rep.budgets) {
      const auto it = rep.cells.find({b, a});
      if (it == rep.cells.end()) continue;
      if (previous != nullptr && it->second.mean > previous->mean) {
        rep.warnings.push_back(a + ": mean " + metric + " rises from budget " + std::to_string(previous_budget) +
                               " to " + std::to_string(b));
      }
      previous = &it->second;
      previous_budget = b;
    }
  }
  return rep;
}

std::string report_csv(const Report& rep) {
  std::ostringstream o;
  o << "hf_budget";
  for (const auto& a : rep.algorithms) o << "," << a << "_mean," << a << "_ci95," << a << "_n";
  o << "\n";
  for (auto b : rep.budgets) {
    o << b;
    for (const auto& a : rep.algorithms) {
      const auto it = rep.cells.find({b, a});
      if (it == rep.cells.end()) o << ",,,";
      else o << "," << format_double(it->second.mean) << "," << format_double(it->second.ci) << "," << it->second.n;
    }
    o << "\n";
  }
  return o.str();
}

Report parse_report_csv(const std::string& text, const std::string& metric) {
  Report rep;
  rep.metric = metric;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty report");
  std::vector<std::string> header;
  {
    std::istringstream h(line);
    std::string f;
    while (std::getline(h, f, ',')) header.push_back(f);
  }
  if (header.empty() || header[0] != "hf_budget" || (header.size() - 1) % 3 != 0) {
    throw FormatError("report header must be hf_budget followed by mean, ci95 and n columns");
  }
  for (std::size_t k = 1; k < header.size(); k += 3) {
    const auto& h = header[k];
    const std::string suffix = "_mean";
    if (h.size() <= suffix.size() || h.compare(h.size() - suffix.size(), suffix.size(), suffix) != 0) {
      throw FormatError("report column '" + h + "' should end in _mean");
    }
    rep.algorithms.push_back(h.substr(0, h.size() - suffix.size()));
  }
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    std::vector<std::string> fields;
    std::string f;
    std::istringstream r(line);
    while (std::getline(r, f, ',')) fields.push_back(f);
    fields.resize(header.size());
    const auto budget = parse_number<std::size_t>("hf_budget", fields[0]);
    rep.budgets.push_back(budget);
    for (std::size_t a = 0; a < rep.algorithms.size(); ++a) {
      const auto& mean = fields[1 + 3 * a];
      if (mean.empty()) continue;
      ReportCell cell;
      cell.mean = parse_number<double>("mean", mean);
      cell.ci = parse_number<double>("ci95", fields[2 + 3 * a]);
      cell.n = parse_number<std::size_t>("n", fields[3 + 3 * a]);
      rep.cells[{budget, rep.algorithms[a]}] = cell;
    }
  }
  return rep;
}

std::string long_csv(const std::vector<ResultRow>& rows) {
  std::ostringstream o;
  o << "task,algorithm,lf_budget,hf_budget,seed,observation_id,metric,value\n";
  for (const auto& r : rows) {
    o << r.task << "," << r.algorithm << "," << r.lf_budget << "," << r.hf_budget << "," << r.seed << ","
      << r.observation_id << "," << r.metric << "," << format_double(r.value) << "\n";
  }
  return o.str();
}

}  // namespace mfsbi
