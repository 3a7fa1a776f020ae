// Copyright 2026 The mfsbi Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Inference procedures built on the conditional flow: amortized NPE, its
// multifidelity transfer variants, and truncated sequential estimation with
// optional ensemble-variance acquisition.

#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "mfsbi/flow.hpp"
#include "mfsbi/metrics.hpp"
#include "mfsbi/posterior.hpp"
#include "mfsbi/prior.hpp"
#include "mfsbi/simulators.hpp"
#include "mfsbi/trainer.hpp"

namespace mfsbi {

/// Paired training data at one fidelity.
struct SimulationData {
  Matrix theta;
  Matrix x;
  std::size_t simulations = 0;

  static SimulationData from(BatchResult batch);
  std::size_t rows() const { return theta.rows; }
};

using RunLog = std::function<void(const std::string&)>;

struct RunContext {
  flow::ArchitectureDescriptor architecture;
  TrainConfig train;
  std::uint64_t seed = 0;
  RunLog log;  // optional

  void note(const std::string& message) const;
};

struct StageReport {
  std::string stage;
  std::size_t rows = 0;
  TrainReport train;
};

struct RunResult {
  Posterior posterior;
  nlohmann::json manifest;
  std::vector<StageReport> stages;
  std::size_t hf_simulations = 0;
};

/// Fresh estimator whose logit box is the prior support.
flow::ConditionalDensityEstimator make_estimator(const flow::ArchitectureDescriptor& architecture,
                                                 const Prior& prior, std::uint64_t init_seed);

RunResult run_npe(const Prior& prior, const SimulationData& hf, const RunContext& context);

/// Pretrains on low fidelity data, clones, then fine-tunes on high fidelity
/// data. Both stages use context.train.
RunResult run_mf_npe(const Prior& prior, const SimulationData& lf, const SimulationData& hf,
                     const RunContext& context);

/// Levels in ascending fidelity; each level starts from the previous one.
RunResult run_mf_npe_chain(const Prior& prior, const std::vector<SimulationData>& levels, const RunContext& context);

// ---- truncation ---------------------------------------------------------------------

/// The floor(epsilon * n_mc)-th smallest log q(theta | x_o) over n_mc draws.
double hpr_threshold(const DensityModel& model, const Matrix& x_o, double epsilon, std::size_t n_mc,
                     std::uint64_t seed);

/// Prior restricted to { theta : log q(theta | x_o) >= threshold }.
struct TruncatedProposal {
  Prior prior;
  std::shared_ptr<const DensityModel> model;  // null means no truncation
  Matrix observation;
  double threshold = -std::numeric_limits<double>::infinity();

  bool accepts(double log_q) const { return log_q >= threshold; }
};

struct TruncatedSample {
  Matrix theta;
  std::size_t proposed = 0;
  double acceptance_rate = 1.0;
};

inline constexpr std::size_t kMinTruncationTrials = 1'000'000;
inline constexpr double kMinTruncationAcceptance = 1e-6;

/// Exactly n accepted prior draws. Throws SamplingError when the acceptance
/// rate drops below kMinTruncationAcceptance after kMinTruncationTrials.
TruncatedSample sample_truncated(const TruncatedProposal& proposal, std::size_t n, std::uint64_t seed);

/// Serial theta source that hands out truncated draws from refilled blocks;
/// tracks proposal statistics for the run manifest.
class ProposalSource {
 public:
  ProposalSource(TruncatedProposal proposal, std::size_t block, std::uint64_t seed);
  void operator()(RandomStream& rng, std::span<double> out);
  std::size_t proposed() const { return proposed_; }
  std::size_t accepted() const { return accepted_; }
  double acceptance_rate() const;

 private:
  void refill();

  TruncatedProposal proposal_;
  std::size_t block_;
  std::uint64_t seed_;
  std::size_t refills_ = 0;
  Matrix buffer_;
  std::size_t next_ = 0;
  std::size_t proposed_ = 0;
  std::size_t accepted_ = 0;
};

// ---- sequential ---------------------------------------------------------------------

enum class RoundData { kAccumulate, kLast };
RoundData parse_round_data(const std::string& text);
std::string to_string(RoundData mode);

struct SequentialConfig {
  std::size_t rounds = 5;
  double epsilon = 1e-6;
  std::size_t per_round = 100;  // M
  std::size_t n_mc = 10'000;
  RoundData round_data = RoundData::kAccumulate;
  std::size_t coverage_draws = 100;  // per round pair, 0 disables the diagnostic

  void validate() const;
};

struct ActiveConfig {
  double b_fraction = 0.2;
  std::size_t ensemble = 5;
  std::size_t pool_size = 0;  // 0 selects 10 * M * R

  std::size_t active_per_round(std::size_t per_round) const;
  void validate() const;
};

struct RoundReport {
  std::size_t round = 0;  // 1-based
  std::size_t proposal_rows = 0;
  std::size_t active_rows = 0;
  std::size_t simulations = 0;
  double acceptance_rate = 1.0;
  double threshold = 0.0;  // used for this round's proposal
  double next_threshold = 0.0;
  bool pool_exhausted = false;
  std::vector<TrainReport> training;  // one per ensemble member
  CoverageReport coverage;
  /// Parameters simulated this round, in simulation order (proposal rows first).
  Matrix theta;
  /// log q(theta | x_o) of the proposal rows under the truncating model
  /// (empty while the proposal is the prior).
  std::vector<double> proposal_log_q;
};

struct SequentialResult {
  RunResult run;
  std::vector<RoundReport> rounds;
};

/// Truncated sequential estimation from a fresh estimator.
SequentialResult run_tsnpe(const Prior& prior, const Simulator& hf_simulator, const Matrix& x_o,
                           const SequentialConfig& config, const RunContext& context);

/// Low fidelity pretraining, reusable across observations of one run.
struct Pretraining {
  std::vector<flow::ConditionalDensityEstimator> members;  // cloned copies, ready for fine-tuning
  std::vector<StageReport> stages;
  nlohmann::json summary;
  std::size_t lf_rows = 0;
};

/// Trains `members` estimators on low fidelity data with the member seeds
/// the sequential runs use (a single member uses context.seed directly).
Pretraining pretrain(const Prior& prior, const SimulationData& lf, std::size_t members, const RunContext& context);

/// Same loop started from an estimator pretrained on low fidelity data.
SequentialResult run_mf_tsnpe(const Prior& prior, const SimulationData& lf, const Simulator& hf_simulator,
                              const Matrix& x_o, const SequentialConfig& config, const RunContext& context);
SequentialResult run_mf_tsnpe(const Prior& prior, const Pretraining& pretrained, const Simulator& hf_simulator,
                              const Matrix& x_o, const SequentialConfig& config, const RunContext& context);

/// Per-row unbiased variance of exp(log q_e) over members (members x rows input).
std::vector<double> ensemble_variance(const std::vector<std::vector<double>>& member_log_probs);

/// Unbiased variance over members of q_e(theta | x_o), on the density scale.
std::vector<double> acquisition_scores(const Matrix& pool, const Posterior& ensemble, const Matrix& x_o);

/// Ensemble version of run_mf_tsnpe; each round adds the B highest-scoring
/// pool parameters to M - B proposal draws.
SequentialResult run_a_mf_tsnpe(const Prior& prior, const SimulationData& lf, const Simulator& hf_simulator,
                                const Matrix& x_o, const SequentialConfig& config, const ActiveConfig& active,
                                const RunContext& context);
SequentialResult run_a_mf_tsnpe(const Prior& prior, const Pretraining& pretrained, const Simulator& hf_simulator,
                                const Matrix& x_o, const SequentialConfig& config, const ActiveConfig& active,
                                const RunContext& context);

}  // namespace mfsbi
