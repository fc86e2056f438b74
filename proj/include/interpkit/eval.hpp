// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "interpkit/toy/vocab.hpp"

namespace interpkit {

struct RunRecord {
  std::string query_id;
  std::string method;
  double lambda_used = 0.0;
  bool correct = false;
  std::size_t tokens = 0;
  bool contains_think_close = false;
  int difficulty_level = 0;  // 0 when unknown

  bool operator==(const RunRecord&) const = default;
};

void to_json(nlohmann::json& j, const RunRecord& r);
void from_json(const nlohmann::json& j, RunRecord& r);

std::string records_to_jsonl(std::span<const RunRecord> records);
std::vector<RunRecord> records_from_jsonl(std::string_view text);

struct CostAcc {
  double cost = 0.0;
  double acc = 0.0;
  auto operator<=>(const CostAcc&) const = default;
};

struct EvaluationReport {
  std::string method;
  std::size_t n = 0;
  double acc = 0.0;
  double tok_mean = 0.0;
  double cr_percent = 0.0;
  double think_ratio_percent = 0.0;
  double lambda_mean = 0.0;
  /// Frontier of the per-coefficient operating points inside this run.
  std::vector<CostAcc> pareto_points;

  nlohmann::json to_json() const;
};

/// 100 * tok_mean / baseline. Throws ArgumentError unless baseline > 0.
double compression_rate(double tok_mean, double thinking_baseline_tok);

/// Throws ArgumentError on empty records or a baseline <= 0.
EvaluationReport score_run(std::span<const RunRecord> records, double thinking_baseline_tok);

/// Non-dominated points, cost ascending, duplicates kept once. Throws ArgumentError when empty.
std::vector<CostAcc> pareto_frontier(std::span<const CostAcc> points);

/// a dominates b: cost <= and acc >=, one of them strict.
bool dominates(const CostAcc& a, const CostAcc& b);
/// cost <= and acc >= (equality allowed).
bool weakly_dominates(const CostAcc& a, const CostAcc& b);

/// Compares the span after the last answer marker (the whole completion when there is none)
/// with `gold`. Throws ArgumentError when gold is empty.
bool answer_matches(std::span<const toy::Token> completion, std::span<const toy::Token> gold);

}  // namespace interpkit
