// SPDX-License-Identifier: Apache-2.0
#include "interpkit/theory.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include <fmt/core.h>

#include "interpkit/error.hpp"
#include "interpkit/eval.hpp"
#include "interpkit/rng.hpp"
#include "interpkit/toy/generate.hpp"
#include "interpkit/toy/trainer.hpp"

namespace interpkit {

std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeError("pearson inputs differ in length");
  const auto n = static_cast<double>(x.size());
  if (x.size() < 2) return std::nullopt;
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeError("spearman inputs differ in length");
  const auto rx = average_ranks(x), ry = average_ranks(y);
  return pearson(rx, ry);
}

nlohmann::json PremiseCheck::to_json() const {
  nlohmann::json lv = nlohmann::json::array();
  for (const auto& l : levels)
    lv.push_back({{"level", l.level}, {"acc_instruct", l.acc_instruct}, {"acc_thinking", l.acc_thinking}});
  return {{"satisfied", satisfied}, {"tolerance", tolerance}, {"levels", lv}};
}

nlohmann::json MonotonicityReport::to_json() const {
  nlohmann::json pts = nlohmann::json::array();
  for (std::size_t i = 0; i < grid.size(); ++i) pts.push_back({{"lambda", grid[i]}, {"acc", accs[i]}});
  return {{"check", "monotonic"}, {"points", pts}, {"spearman", spearman}, {"flat", flat},
          {"premise", premise.to_json()}};
}

namespace {

std::size_t count_correct(const toy::Transformer& model, const toy::QueryRecord& q, std::size_t n_samples,
                          const toy::GenerationParams& params) {
  std::size_t correct = 0;
  for (std::size_t j = 0; j < n_samples; ++j) {
    toy::GenerationParams p = params;
    p.seed = derive_seed(params.seed, q.query_id, j);
    correct += answer_matches(toy::generate(model, q.prompt_tokens, p).completion, q.gold_answer) ? 1 : 0;
  }
  return correct;
}

void require_tasks(std::span<const toy::QueryRecord> tasks, std::size_t n_samples) {
  if (tasks.empty()) throw ValidationError("task set is empty");
  if (n_samples == 0) throw ValidationError("n_samples must be >= 1");
}

}  // namespace

double sampled_accuracy(toy::MergedModels& models, double lambda, std::span<const toy::QueryRecord> tasks,
                        std::size_t n_samples, const toy::GenerationParams& params) {
  require_tasks(tasks, n_samples);
  const auto model = models.at(lambda);
  std::size_t correct = 0;
  for (const auto& q : tasks) correct += count_correct(*model, q, n_samples, params);
  return static_cast<double>(correct) / static_cast<double>(tasks.size() * n_samples);
}

PremiseCheck check_capability_premise(toy::MergedModels& models, std::span<const toy::QueryRecord> tasks,
                                      std::size_t n_samples, const toy::GenerationParams& params,
                                      double tolerance) {
  require_tasks(tasks, n_samples);
  const auto mi = models.at(0.0), mt = models.at(1.0);
  struct Tally {
    std::size_t n = 0, ci = 0, ct = 0;
  };
  std::map<int, Tally> by_level;
  for (const auto& q : tasks) {
    auto& t = by_level[q.difficulty_level];
    t.n += n_samples;
    t.ci += count_correct(*mi, q, n_samples, params);
    t.ct += count_correct(*mt, q, n_samples, params);
  }
  PremiseCheck out;
  out.tolerance = tolerance;
  for (const auto& [level, t] : by_level) {
    const PremiseLevel pl{level, static_cast<double>(t.ci) / static_cast<double>(t.n),
                          static_cast<double>(t.ct) / static_cast<double>(t.n)};
    if (pl.acc_thinking < pl.acc_instruct - tolerance) out.satisfied = false;
    out.levels.push_back(pl);
  }
  return out;
}

namespace {

void finish_monotonicity(MonotonicityReport& rep) {
  const auto rho = spearman(rep.grid, rep.accs);
  rep.flat = !rho.has_value();
  rep.spearman = rho.value_or(0.0);
}

void require_ascending(const std::vector<double>& grid) {
  validate_grid(grid, false);
  if (grid.size() < 2) throw ValidationError("monotonicity needs at least 2 grid points");
}

}  // namespace

MonotonicityReport check_monotonicity(toy::MergedModels& models, const std::vector<double>& grid,
                                      std::span<const toy::QueryRecord> tasks, std::size_t n_samples,
                                      const toy::GenerationParams& params) {
  require_ascending(grid);
  MonotonicityReport rep;
  rep.premise = check_capability_premise(models, tasks, n_samples, params);
  rep.grid = grid;
  for (double l : grid) rep.accs.push_back(sampled_accuracy(models, l, tasks, n_samples, params));
  finish_monotonicity(rep);
  return rep;
}

MonotonicityReport monotonicity_from_probabilities(const std::vector<double>& grid, std::span<const double> p_instruct,
                                                   std::span<const double> p_thinking) {
  require_ascending(grid);
  if (p_instruct.size() != p_thinking.size() || p_instruct.empty())
    throw ShapeError("probability lists must be nonempty and of equal length");
  MonotonicityReport rep;
  rep.grid = grid;
  PremiseLevel pl;
  for (std::size_t q = 0; q < p_instruct.size(); ++q) {
    pl.acc_instruct += p_instruct[q];
    pl.acc_thinking += p_thinking[q];
    if (p_thinking[q] < p_instruct[q]) rep.premise.satisfied = false;
  }
  const auto n = static_cast<double>(p_instruct.size());
  pl.acc_instruct /= n;
  pl.acc_thinking /= n;
  rep.premise.tolerance = 0.0;
  rep.premise.levels.push_back(pl);
  for (double l : grid) {
    double acc = 0.0;
    for (std::size_t q = 0; q < p_instruct.size(); ++q) acc += l * p_thinking[q] + (1.0 - l) * p_instruct[q];
    rep.accs.push_back(acc / n);
  }
  finish_monotonicity(rep);
  return rep;
}

std::optional<Eigen::VectorXd> principal_component(const Eigen::MatrixXd& x, double tol, double* eigenvalue,
                                                   int max_iter) {
  if (x.rows() < 2 || x.cols() < 1) throw ValidationError("principal_component needs >= 2 rows");
  const Eigen::MatrixXd c = x.rowwise() - x.colwise().mean();
  const double scale = x.norm();
  if (c.norm() <= 1e-9 * std::max(scale, 1e-300)) return std::nullopt;
  // start from the row of largest norm: never orthogonal to the top direction when the data is nonzero
  Eigen::Index start = 0;
  c.rowwise().norm().maxCoeff(&start);
  Eigen::VectorXd v = c.row(start).transpose().normalized();
  double lambda = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    Eigen::VectorXd w = c.transpose() * (c * v) / static_cast<double>(x.rows() - 1);
    lambda = w.norm();
    if (lambda == 0.0) return std::nullopt;
    w /= lambda;
    const double diff = (w - v).norm();
    v = w;
    if (diff < tol) break;
  }
  if (eigenvalue) *eigenvalue = lambda;
  return v;
}

std::size_t probe_index(std::span<const toy::Token> input, ProbePosition rule) {
  if (input.empty()) throw InputError("probe input is empty");
  if (rule == ProbePosition::ThinkOpenOrLast) {
    const auto it = std::find(input.begin(), input.end(), toy::kThinkOpen);
    if (it != input.end()) return static_cast<std::size_t>(it - input.begin());
  }
  return input.size() - 1;
}

nlohmann::json ContinuityReport::to_json() const {
  return {{"check", "continuity"},
          {"grid", grid},
          {"pc1_scores", pc1_scores},
          {"correlation_r", correlation_r},
          {"lipschitz_ratios", lipschitz_ratios},
          {"ratio_span", ratio_span},
          {"explained_variance", explained_variance},
          {"degenerate", degenerate}};
}

ContinuityReport check_continuity(toy::MergedModels& models, const std::vector<double>& grid,
                                  const std::vector<toy::Tokens>& probe_inputs, ProbePosition rule) {
  validate_grid(grid, false);
  if (grid.size() < 3) throw ValidationError("continuity needs at least 3 grid points");
  if (probe_inputs.size() < 2) throw ValidationError("continuity needs at least 2 probe inputs");
  const auto d = static_cast<Eigen::Index>(models.at(0.0)->config().d_model);
  const auto n_probe = static_cast<Eigen::Index>(probe_inputs.size());
  Eigen::MatrixXd states(static_cast<Eigen::Index>(grid.size()), d * n_probe);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const auto model = models.at(grid[k]);
    for (Eigen::Index p = 0; p < n_probe; ++p) {
      const auto& input = probe_inputs[static_cast<std::size_t>(p)];
      const toy::RowMat h = model->final_hidden(input);
      const auto pos = static_cast<Eigen::Index>(probe_index(input, rule));
      states.block(static_cast<Eigen::Index>(k), p * d, 1, d) = h.row(pos);
    }
  }

  ContinuityReport rep;
  rep.grid = grid;
  for (std::size_t k = 0; k + 1 < grid.size(); ++k) {
    const double dist = (states.row(static_cast<Eigen::Index>(k + 1)) - states.row(static_cast<Eigen::Index>(k))).norm();
    rep.lipschitz_ratios.push_back(dist / (grid[k + 1] - grid[k]));
  }
  double eig = 0.0;
  const auto pc = principal_component(states, 1e-8, &eig);
  if (!pc) {
    rep.degenerate = true;
    rep.pc1_scores.assign(grid.size(), 0.0);
    return rep;
  }
  const Eigen::MatrixXd centered = states.rowwise() - states.colwise().mean();
  const Eigen::VectorXd scores = centered * *pc;
  rep.pc1_scores.assign(scores.data(), scores.data() + scores.size());
  const double total = centered.squaredNorm() / static_cast<double>(grid.size() - 1);
  rep.explained_variance = total > 0.0 ? eig / total : 0.0;
  rep.correlation_r = pearson(grid, rep.pc1_scores).value_or(0.0);
  const auto [mn, mx] = std::minmax_element(rep.lipschitz_ratios.begin(), rep.lipschitz_ratios.end());
  rep.ratio_span = *mn > 0.0 ? *mx / *mn : std::numeric_limits<double>::infinity();
  return rep;
}

nlohmann::json LmcReport::to_json() const {
  nlohmann::json j = scan.to_json();
  j["check"] = "lmc";
  j["epsilon"] = epsilon;
  j["verdict"] = verdict;
  j["shared_lineage"] = shared_lineage;
  j["warnings"] = warnings;
  return j;
}

LmcReport check_lmc(const NamedTensorArchive& instruct, const NamedTensorArchive& thinking,
                    const std::vector<double>& grid, const LossEvaluator& loss, double fraction) {
  LmcReport rep;
  const bool has_i = instruct.metadata_value("lineage.base_digest").has_value();
  const bool has_t = thinking.metadata_value("lineage.base_digest").has_value();
  if (!has_i || !has_t) rep.warnings.push_back("lineage metadata missing on at least one checkpoint");
  rep.shared_lineage = toy::share_lineage(instruct, thinking);
  if (has_i && has_t && !rep.shared_lineage) rep.warnings.push_back("checkpoints do not share a recorded base");
  rep.scan = scan_barrier(instruct, thinking, grid, loss);
  rep.epsilon = lmc_epsilon(rep.scan, fraction);
  rep.verdict = rep.scan.barrier_height <= rep.epsilon;
  return rep;
}

}  // namespace interpkit
