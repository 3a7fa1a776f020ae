// Copyright 2026 The mfsbi Authors
// SPDX-License-Identifier: Apache-2.0

#include "mfsbi/algorithms.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <optional>

#include "mfsbi/errors.hpp"
#include "mfsbi/kernels.hpp"
#include "mfsbi/rng.hpp"

namespace mfsbi {

using nlohmann::json;

SimulationData SimulationData::from(BatchResult batch) {
  return {std::move(batch.theta), std::move(batch.x), batch.simulations};
}

void RunContext::note(const std::string& message) const {
  if (log) log(message);
}

flow::ConditionalDensityEstimator make_estimator(const flow::ArchitectureDescriptor& architecture,
                                                 const Prior& prior, std::uint64_t init_seed) {
  if (architecture.theta_dim != prior.dim()) {
    throw ArchitectureMismatch("architecture theta_dim " + std::to_string(architecture.theta_dim) +
                               " does not match the prior dimension " + std::to_string(prior.dim()));
  }
  return flow::ConditionalDensityEstimator(architecture, prior.box(), init_seed);
}

namespace {

void check_data(const SimulationData& data, const Prior& prior, const flow::ArchitectureDescriptor& arch,
                const std::string& what) {
  if (data.theta.rows != data.x.rows) throw ShapeError(what + ": theta and x row counts differ");
  if (data.theta.cols != prior.dim()) {
    throw ShapeError(what + ": theta has " + std::to_string(data.theta.cols) + " columns, the prior " +
                     std::to_string(prior.dim()));
  }
  if (data.x.cols != arch.x_dim) {
    throw ArchitectureMismatch(what + ": x has " + std::to_string(data.x.cols) + " columns, the estimator expects " +
                               std::to_string(arch.x_dim));
  }
  for (std::size_t i = 0; i < data.theta.rows; ++i) {
    if (!prior.contains(data.theta.row(i))) {
      throw DomainError(what + ": row " + std::to_string(i) + " lies outside the prior support");
    }
  }
}

TrainConfig stage_config(const RunContext& ctx, std::uint64_t stream, std::uint64_t index) {
  TrainConfig cfg = ctx.train;
  cfg.seed = derive_seed(ctx.seed, stream, index);
  return cfg;
}

json train_summary(const TrainReport& r) {
  return {{"epochs", r.stop_epoch},
          {"best_epoch", r.best_epoch},
          {"best_val_loss", r.best_val_loss},
          {"stop", to_string(r.reason)},
          {"train_rows", r.train_rows},
          {"val_rows", r.val_rows},
          {"wall_seconds", r.wall_seconds}};
}

json base_manifest(const std::string& algorithm, const RunContext& ctx) {
  const auto& t = ctx.train;
  return {{"algorithm", algorithm},
          {"seed", ctx.seed},
          {"architecture", ctx.architecture.describe()},
          {"train",
           {{"batch_size", t.batch_size},
            {"learning_rate", t.learning_rate},
            {"val_fraction", t.val_fraction},
            {"patience", t.patience},
            {"max_epochs", t.max_epochs}}}};
}

RunResult chain(const std::string& algorithm, const Prior& prior, const std::vector<SimulationData>& levels,
                const RunContext& ctx) {
  flow::ConditionalDensityEstimator estimator = make_estimator(ctx.architecture, prior, derive_seed(ctx.seed, stream_id("init")));
  std::vector<StageReport> stages;
  json manifest = base_manifest(algorithm, ctx);
  for (std::size_t f = 0; f < levels.size(); ++f) {
    const auto& data = levels[f];
    ctx.note(algorithm + ": training fidelity level " + std::to_string(f) + " on " + std::to_string(data.rows()) +
             " rows");
    if (f > 0) {
      flow::ConditionalDensityEstimator next = make_estimator(ctx.architecture, prior, estimator.init_seed());
      clone_weights(estimator, next);
      estimator = std::move(next);
    }
    auto report = train(estimator, data.theta, data.x, stage_config(ctx, stream_id("train"), f));
    manifest["stages"].push_back({{"level", f}, {"rows", data.rows()}, {"train", train_summary(report)}});
    stages.push_back({"level" + std::to_string(f), data.rows(), std::move(report)});
  }
  const std::size_t hf = levels.back().simulations;
  manifest["hf_simulations"] = hf;
  std::vector<flow::ConditionalDensityEstimator> members;
  members.push_back(std::move(estimator));
  return {Posterior(std::move(members), prior), std::move(manifest), std::move(stages), hf};
}

}  // namespace

RunResult run_npe(const Prior& prior, const SimulationData& hf, const RunContext& context) {
  if (hf.rows() == 0) throw ConfigError("run_npe: the high fidelity dataset is empty");
  check_data(hf, prior, context.architecture, "high fidelity data");
  return chain("npe", prior, {hf}, context);
}

RunResult run_mf_npe(const Prior& prior, const SimulationData& lf, const SimulationData& hf,
                     const RunContext& context) {
  if (lf.rows() == 0) {
    throw ConfigError("run_mf_npe: the low fidelity dataset is empty; use run_npe for high fidelity data only");
  }
  if (hf.rows() == 0) throw ConfigError("run_mf_npe: the high fidelity dataset is empty");
  check_data(lf, prior, context.architecture, "low fidelity data");
  check_data(hf, prior, context.architecture, "high fidelity data");
  return chain("mf-npe", prior, {lf, hf}, context);
}

RunResult run_mf_npe_chain(const Prior& prior, const std::vector<SimulationData>& levels, const RunContext& context) {
  if (levels.size() < 2) throw ConfigError("run_mf_npe_chain needs at least two fidelity levels");
  for (std::size_t f = 0; f < levels.size(); ++f) {
    if (levels[f].rows() == 0) throw ConfigError("run_mf_npe_chain: level " + std::to_string(f) + " is empty");
    check_data(levels[f], prior, context.architecture, "level " + std::to_string(f));
  }
  return chain("mf-npe-chain", prior, levels, context);
}

// ---- truncation ---------------------------------------------------------------------

double hpr_threshold(const DensityModel& model, const Matrix& x_o, double epsilon, std::size_t n_mc,
                     std::uint64_t seed) {
  if (n_mc < 1000) throw ConfigError("hpr_threshold needs at least 1000 Monte Carlo draws");
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw ConfigError("hpr_threshold: epsilon must lie in (0, 1)");
  const auto samples = model.sample(n_mc, x_o, seed);
  auto lp = model.log_prob(samples, x_o);
  const auto k = static_cast<std::size_t>(std::floor(epsilon * static_cast<double>(n_mc)));
  std::nth_element(lp.begin(), lp.begin() + static_cast<std::ptrdiff_t>(k), lp.end());
  return lp[k];
}

TruncatedSample sample_truncated(const TruncatedProposal& proposal, std::size_t n, std::uint64_t seed) {
  TruncatedSample out;
  out.theta = Matrix(0, proposal.prior.dim());
  out.theta.data.reserve(n * proposal.prior.dim());
  const bool truncated = proposal.model && proposal.threshold > -std::numeric_limits<double>::infinity();
  const std::size_t block = std::max<std::size_t>(1000, 2 * n);
  for (std::size_t b = 0; out.theta.rows < n; ++b) {
    const auto draws = proposal.prior.sample(block, derive_seed(seed, stream_id("truncated"), b));
    std::vector<double> lp;
    if (truncated) lp = proposal.model->log_prob(draws, proposal.observation);
    for (std::size_t i = 0; i < draws.rows && out.theta.rows < n; ++i) {
      ++out.proposed;
      if (!truncated || proposal.accepts(lp[i])) out.theta.append_row(draws.row(i));
    }
    const double rate = static_cast<double>(out.theta.rows) / static_cast<double>(out.proposed);
    if (out.proposed >= kMinTruncationTrials && rate < kMinTruncationAcceptance) {
      throw SamplingError("truncated proposal accepted " + std::to_string(out.theta.rows) + " of " +
                          std::to_string(out.proposed) + " prior draws; the high-probability region is degenerate");
    }
  }
  out.acceptance_rate = static_cast<double>(out.theta.rows) / static_cast<double>(std::max<std::size_t>(out.proposed, 1));
  return out;
}

ProposalSource::ProposalSource(TruncatedProposal proposal, std::size_t block, std::uint64_t seed)
    : proposal_(std::move(proposal)), block_(std::max<std::size_t>(block, 1)), seed_(seed) {}

void ProposalSource::refill() {
  auto s = sample_truncated(proposal_, block_, derive_seed(seed_, stream_id("refill"), refills_++));
  proposed_ += s.proposed;
  accepted_ += s.theta.rows;
  buffer_ = std::move(s.theta);
  next_ = 0;
}

void ProposalSource::operator()(RandomStream&, std::span<double> out) {
  if (next_ >= buffer_.rows) refill();
  const auto row = buffer_.row(next_++);
  std::copy(row.begin(), row.end(), out.begin());
}

double ProposalSource::acceptance_rate() const {
  return proposed_ == 0 ? 1.0 : static_cast<double>(accepted_) / static_cast<double>(proposed_);
}

// ---- sequential ---------------------------------------------------------------------

RoundData parse_round_data(const std::string& text) {
  if (text == "accumulate") return RoundData::kAccumulate;
  if (text == "last") return RoundData::kLast;
  throw ConfigError("round data mode must be accumulate or last, got '" + text + "'");
}

std::string to_string(RoundData mode) { return mode == RoundData::kAccumulate ? "accumulate" : "last"; }

void SequentialConfig::validate() const {
  if (rounds == 0) throw ConfigError("sequential runs need at least one round");
  if (per_round < 10) throw ConfigError("sequential runs need at least 10 simulations per round");
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw ConfigError("epsilon must lie in (0, 1)");
  if (n_mc < 1000) throw ConfigError("n_mc must be at least 1000");
}

std::size_t ActiveConfig::active_per_round(std::size_t per_round) const {
  return static_cast<std::size_t>(std::llround(b_fraction * static_cast<double>(per_round)));
}

void ActiveConfig::validate() const {
  if (!(b_fraction >= 0.0 && b_fraction < 1.0)) throw ConfigError("b_fraction must lie in [0, 1)");
  if (ensemble < 2) throw ConfigError("the acquisition ensemble needs at least two members");
}

std::vector<double> ensemble_variance(const std::vector<std::vector<double>>& lp) {
  if (lp.size() < 2) throw ConfigError("acquisition scores need an ensemble of at least two members");
  const std::size_t rows = lp.front().size();
  std::vector<double> flat;
  flat.reserve(lp.size() * rows);
  for (const auto& m : lp) {
    if (m.size() != rows) throw ShapeError("ensemble_variance: members disagree on the row count");
    flat.insert(flat.end(), m.begin(), m.end());
  }
  std::vector<double> scores(rows);
  kernels::ensemble_density_variance(flat.data(), lp.size(), rows, scores.data());
  return scores;
}

std::vector<double> acquisition_scores(const Matrix& pool, const Posterior& ensemble, const Matrix& x_o) {
  if (ensemble.size() < 2) throw ConfigError("acquisition scores need an ensemble of at least two members");
  if (pool.rows == 0) throw ShapeError("acquisition scores: empty pool");
  return ensemble_variance(ensemble.member_log_probs(pool, x_o));
}

namespace {

void train_members(std::vector<flow::ConditionalDensityEstimator>& members, const Matrix& theta, const Matrix& x,
                   const std::vector<TrainConfig>& configs, std::vector<TrainReport>& reports) {
  reports.assign(members.size(), {});
  std::vector<std::exception_ptr> errors(members.size());
  const auto n = static_cast<std::ptrdiff_t>(members.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t ee = 0; ee < n; ++ee) {
    const auto e = static_cast<std::size_t>(ee);
    try {
      reports[e] = train(members[e], theta, x, configs[e]);
    } catch (...) {
      errors[e] = std::current_exception();
    }
  }
  for (auto& err : errors) {
    if (err) std::rethrow_exception(err);
  }
}

json round_manifest(const RoundReport& r) {
  json j = {{"round", r.round},
            {"proposal_rows", r.proposal_rows},
            {"active_rows", r.active_rows},
            {"simulations", r.simulations},
            {"acceptance_rate", r.acceptance_rate},
            {"threshold", r.threshold},
            {"next_threshold", r.next_threshold},
            {"pool_exhausted", r.pool_exhausted}};
  for (const auto& t : r.training) j["training"].push_back(train_summary(t));
  if (r.coverage.pairs > 0) j["coverage"] = {{"levels", r.coverage.levels}, {"coverage", r.coverage.coverage}};
  return j;
}

std::vector<flow::ConditionalDensityEstimator> fresh_members(const Prior& prior, std::size_t count,
                                                             const RunContext& ctx, std::vector<TrainConfig>* configs) {
  std::vector<flow::ConditionalDensityEstimator> members;
  for (std::size_t e = 0; e < count; ++e) {
    const std::uint64_t base = count == 1 ? ctx.seed : derive_seed(ctx.seed, stream_id("member"), e);
    members.push_back(make_estimator(ctx.architecture, prior, derive_seed(base, stream_id("init"))));
    if (configs != nullptr) {
      TrainConfig cfg = ctx.train;
      cfg.seed = derive_seed(base, stream_id("train"), 0);
      configs->push_back(cfg);
    }
  }
  return members;
}

SequentialResult sequential(const std::string& algorithm, const Prior& prior, const Pretraining* pretrained,
                            const Simulator& hf_sim, const Matrix& x_o, const SequentialConfig& cfg,
                            const std::optional<ActiveConfig>& active, const RunContext& ctx) {
  cfg.validate();
  if (active) active->validate();
  if (x_o.rows != 1 || x_o.cols != ctx.architecture.x_dim) {
    throw ShapeError("the observation must be a single row of " + std::to_string(ctx.architecture.x_dim) + " values");
  }
  if (hf_sim.theta_dim() != prior.dim() || hf_sim.x_dim() != ctx.architecture.x_dim) {
    throw ArchitectureMismatch("the high fidelity simulator does not match the prior and estimator dimensions");
  }
  const std::size_t count = active ? active->ensemble : 1;
  if (pretrained != nullptr) {
    if (pretrained->members.size() != count) {
      throw ConfigError(algorithm + ": pretraining holds " + std::to_string(pretrained->members.size()) +
                        " member(s) but the run needs " + std::to_string(count));
    }
    if (!(pretrained->members.front().architecture() == ctx.architecture)) {
      throw ArchitectureMismatch(algorithm + ": the pretrained estimator has a different architecture");
    }
  }

  json manifest = base_manifest(algorithm, ctx);
  manifest["rounds"] = cfg.rounds;
  manifest["epsilon"] = cfg.epsilon;
  manifest["per_round"] = cfg.per_round;
  manifest["n_mc"] = cfg.n_mc;
  manifest["round_data"] = to_string(cfg.round_data);
  std::vector<StageReport> stages;
  std::vector<flow::ConditionalDensityEstimator> members;
  if (pretrained != nullptr) {
    members = pretrained->members;
    manifest["pretraining"] = pretrained->summary;
    stages = pretrained->stages;
  } else {
    members = fresh_members(prior, count, ctx, nullptr);
  }

  const std::size_t b = active ? active->active_per_round(cfg.per_round) : 0;
  Matrix pool;
  std::vector<bool> alive;
  if (active) {
    const std::size_t pool_size = active->pool_size > 0 ? active->pool_size : 10 * cfg.per_round * cfg.rounds;
    pool = prior.sample(pool_size, derive_seed(ctx.seed, stream_id("pool")));
    alive.assign(pool.rows, true);
    manifest["b_fraction"] = active->b_fraction;
    manifest["ensemble"] = active->ensemble;
    manifest["pool_size"] = pool_size;
  }

  TruncatedProposal proposal{prior, nullptr, x_o, -std::numeric_limits<double>::infinity()};
  Matrix all_theta(0, prior.dim()), all_x(0, hf_sim.x_dim());
  std::vector<RoundReport> rounds;
  std::size_t hf_total = 0;
  for (std::size_t r = 1; r <= cfg.rounds; ++r) {
    RoundReport rep;
    rep.round = r;
    rep.threshold = proposal.threshold;
    Matrix round_theta(0, prior.dim()), round_x(0, hf_sim.x_dim());

    ProposalSource source(proposal, std::max<std::size_t>(cfg.per_round, 1000), derive_seed(ctx.seed, stream_id("proposal"), r));
    const std::size_t n_prop = cfg.per_round - b;
    if (n_prop > 0) {
      auto batch = simulate_batch(hf_sim, std::ref(source), n_prop, derive_seed(ctx.seed, stream_id("hf"), 2 * r));
      rep.simulations += batch.simulations;
      rep.proposal_rows = batch.theta.rows;
      if (proposal.model) rep.proposal_log_q = proposal.model->log_prob(batch.theta, x_o);
      round_theta = std::move(batch.theta);
      round_x = std::move(batch.x);
    }
    if (b > 0) {
      const Posterior ensemble(members, prior);
      std::vector<std::size_t> remaining;
      for (std::size_t i = 0; i < pool.rows; ++i) {
        if (alive[i]) remaining.push_back(i);
      }
      std::vector<std::size_t> ranked;
      if (!remaining.empty()) {
        const auto scores = acquisition_scores(pool.select_rows(remaining), ensemble, x_o);
        std::vector<std::size_t> order(remaining.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t c) { return scores[a] > scores[c]; });
        for (std::size_t o : order) ranked.push_back(remaining[o]);
      }
      std::size_t cursor = 0, from_pool = 0;
      ThetaSource active_source = [&](RandomStream& rng, std::span<double> out) {
        if (cursor < ranked.size()) {
          const std::size_t idx = ranked[cursor++];
          alive[idx] = false;
          ++from_pool;
          const auto row = pool.row(idx);
          std::copy(row.begin(), row.end(), out.begin());
        } else {
          rep.pool_exhausted = true;
          source(rng, out);
        }
      };
      auto batch = simulate_batch(hf_sim, active_source, b, derive_seed(ctx.seed, stream_id("hf"), 2 * r + 1));
      if (rep.pool_exhausted) {
        ctx.note(algorithm + ": acquisition pool exhausted in round " + std::to_string(r) +
                 "; remaining rows come from the proposal");
      }
      rep.simulations += batch.simulations;
      rep.active_rows = std::min(from_pool, b);
      rep.proposal_rows += b - rep.active_rows;
      for (std::size_t i = 0; i < batch.theta.rows; ++i) {
        round_theta.append_row(batch.theta.row(i));
        round_x.append_row(batch.x.row(i));
      }
    }
    rep.acceptance_rate = source.acceptance_rate();
    hf_total += rep.simulations;

    if (cfg.round_data == RoundData::kAccumulate) {
      for (std::size_t i = 0; i < round_theta.rows; ++i) {
        all_theta.append_row(round_theta.row(i));
        all_x.append_row(round_x.row(i));
      }
    } else {
      all_theta = round_theta;
      all_x = round_x;
    }
    ctx.note(algorithm + ": round " + std::to_string(r) + " training on " + std::to_string(all_theta.rows) + " rows");
    std::vector<TrainConfig> configs;
    for (std::size_t e = 0; e < members.size(); ++e) {
      const std::uint64_t base = count == 1 ? ctx.seed : derive_seed(ctx.seed, stream_id("member"), e);
      TrainConfig tc = ctx.train;
      tc.seed = derive_seed(base, stream_id("train"), r);
      configs.push_back(tc);
    }
    train_members(members, all_theta, all_x, configs, rep.training);

    const Posterior current(members, prior);
    if (cfg.coverage_draws > 0) {
      rep.coverage = expected_coverage(current, round_theta, round_x, cfg.coverage_draws,
                                       derive_seed(ctx.seed, stream_id("coverage"), r));
    }
    proposal.threshold = hpr_threshold(current, x_o, cfg.epsilon, cfg.n_mc, derive_seed(ctx.seed, stream_id("hpr"), r));
    proposal.model = std::make_shared<Posterior>(current);
    rep.next_threshold = proposal.threshold;
    rep.theta = std::move(round_theta);
    manifest["round_reports"].push_back(round_manifest(rep));
    rounds.push_back(std::move(rep));
  }
  manifest["hf_simulations"] = hf_total;
  Posterior posterior(std::move(members), prior, x_o);
  return {RunResult{std::move(posterior), std::move(manifest), std::move(stages), hf_total}, std::move(rounds)};
}

}  // namespace

SequentialResult run_tsnpe(const Prior& prior, const Simulator& hf_simulator, const Matrix& x_o,
                           const SequentialConfig& config, const RunContext& context) {
  return sequential("tsnpe", prior, nullptr, hf_simulator, x_o, config, std::nullopt, context);
}

Pretraining pretrain(const Prior& prior, const SimulationData& lf, std::size_t members, const RunContext& ctx) {
  if (lf.rows() == 0) throw ConfigError("pretrain: the low fidelity dataset is empty; use tsnpe instead");
  if (members == 0) throw ConfigError("pretrain: at least one member is needed");
  check_data(lf, prior, ctx.architecture, "low fidelity data");
  std::vector<TrainConfig> configs;
  auto trained = fresh_members(prior, members, ctx, &configs);
  ctx.note("pretraining " + std::to_string(members) + " estimator(s) on " + std::to_string(lf.rows()) +
           " low fidelity rows");
  std::vector<TrainReport> reports;
  train_members(trained, lf.theta, lf.x, configs, reports);
  Pretraining out;
  out.lf_rows = lf.rows();
  for (std::size_t e = 0; e < members; ++e) {
    out.summary.push_back(train_summary(reports[e]));
    out.stages.push_back({"pretrain" + std::to_string(e), lf.rows(), std::move(reports[e])});
    // The high fidelity estimators start as exact copies of the pretrained ones.
    auto c = make_estimator(ctx.architecture, prior, trained[e].init_seed());
    clone_weights(trained[e], c);
    out.members.push_back(std::move(c));
  }
  return out;
}

SequentialResult run_mf_tsnpe(const Prior& prior, const SimulationData& lf, const Simulator& hf_simulator,
                              const Matrix& x_o, const SequentialConfig& config, const RunContext& context) {
  return run_mf_tsnpe(prior, pretrain(prior, lf, 1, context), hf_simulator, x_o, config, context);
}

SequentialResult run_mf_tsnpe(const Prior& prior, const Pretraining& pretrained, const Simulator& hf_simulator,
                              const Matrix& x_o, const SequentialConfig& config, const RunContext& context) {
  return sequential("mf-tsnpe", prior, &pretrained, hf_simulator, x_o, config, std::nullopt, context);
}

SequentialResult run_a_mf_tsnpe(const Prior& prior, const SimulationData& lf, const Simulator& hf_simulator,
                                const Matrix& x_o, const SequentialConfig& config, const ActiveConfig& active,
                                const RunContext& context) {
  active.validate();
  return run_a_mf_tsnpe(prior, pretrain(prior, lf, active.ensemble, context), hf_simulator, x_o, config, active,
                        context);
}

SequentialResult run_a_mf_tsnpe(const Prior& prior, const Pretraining& pretrained, const Simulator& hf_simulator,
                                const Matrix& x_o, const SequentialConfig& config, const ActiveConfig& active,
                                const RunContext& context) {
  return sequential("a-mf-tsnpe", prior, &pretrained, hf_simulator, x_o, config, active, context);
}

}  // namespace mfsbi
