// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "interpkit/interp.hpp"
#include "interpkit/toy/config.hpp"
#include "interpkit/toy/merged.hpp"

namespace interpkit {

/// Pearson correlation; nullopt when either side has zero variance.
std::optional<double> pearson(std::span<const double> x, std::span<const double> y);
/// Spearman rank correlation with average ranks for ties; nullopt when either side is constant.
std::optional<double> spearman(std::span<const double> x, std::span<const double> y);

struct PremiseLevel {
  int level = 0;
  double acc_instruct = 0.0;
  double acc_thinking = 0.0;
};

/// Thinking accuracy at least instruct accuracy (minus tolerance) on every difficulty level.
struct PremiseCheck {
  bool satisfied = true;
  double tolerance = 0.05;
  std::vector<PremiseLevel> levels;
  nlohmann::json to_json() const;
};

struct MonotonicityReport {
  std::vector<double> grid;
  std::vector<double> accs;
  double spearman = 0.0;
  bool flat = false;  // accuracy constant over the grid, spearman reported as 0
  PremiseCheck premise;
  nlohmann::json to_json() const;
};

/// Mean accuracy of every query over `n_samples` sampled completions at coefficient `lambda`.
/// Sample j of a query uses seed derive_seed(params.seed, query_id, j).
double sampled_accuracy(toy::MergedModels& models, double lambda, std::span<const toy::QueryRecord> tasks,
                        std::size_t n_samples, const toy::GenerationParams& params);

PremiseCheck check_capability_premise(toy::MergedModels& models, std::span<const toy::QueryRecord> tasks,
                                      std::size_t n_samples, const toy::GenerationParams& params,
                                      double tolerance = 0.05);

/// Premise first, then accuracy along the ascending grid. A violated premise is reported in the
/// result rather than thrown.
MonotonicityReport check_monotonicity(toy::MergedModels& models, const std::vector<double>& grid,
                                      std::span<const toy::QueryRecord> tasks, std::size_t n_samples,
                                      const toy::GenerationParams& params);

/// Expected accuracy under exactly linear per-query success probabilities
/// p(lambda) = lambda * p_t + (1 - lambda) * p_i.
MonotonicityReport monotonicity_from_probabilities(const std::vector<double>& grid, std::span<const double> p_instruct,
                                                   std::span<const double> p_thinking);

/// Leading principal direction of the rows of `x` (centered internally) by power iteration on the
/// implicit covariance. Returns the unit direction; `eigenvalue` receives its variance.
/// nullopt when the centered data vanishes.
std::optional<Eigen::VectorXd> principal_component(const Eigen::MatrixXd& x, double tol = 1e-8,
                                                   double* eigenvalue = nullptr, int max_iter = 10000);

enum class ProbePosition {
  /// The think-open token when the input has one, else the last token.
  ThinkOpenOrLast,
  Last,
};

std::size_t probe_index(std::span<const toy::Token> input, ProbePosition rule);

struct ContinuityReport {
  std::vector<double> grid;
  std::vector<double> pc1_scores;
  double correlation_r = 0.0;
  /// ||h(l_k+1) - h(l_k)|| / (l_k+1 - l_k) for every adjacent pair.
  std::vector<double> lipschitz_ratios;
  double ratio_span = 0.0;  // max / min of lipschitz_ratios
  double explained_variance = 0.0;
  bool degenerate = false;
  nlohmann::json to_json() const;
};

/// Final-block states at the probe position of every input, concatenated per coefficient.
/// Throws ValidationError with fewer than 3 grid points or 2 probes.
ContinuityReport check_continuity(toy::MergedModels& models, const std::vector<double>& grid,
                                  const std::vector<toy::Tokens>& probe_inputs,
                                  ProbePosition rule = ProbePosition::ThinkOpenOrLast);

struct LmcReport {
  BarrierScan scan;
  double epsilon = 0.0;
  bool verdict = false;
  bool shared_lineage = false;
  std::vector<std::string> warnings;
  nlohmann::json to_json() const;
};

/// Barrier along the path; verdict = barrier <= fraction * worse endpoint loss.
/// Missing or unrelated lineage metadata only adds a warning.
LmcReport check_lmc(const NamedTensorArchive& instruct, const NamedTensorArchive& thinking,
                    const std::vector<double>& grid, const LossEvaluator& loss, double fraction = kLmcToleranceFraction);

}  // namespace interpkit
