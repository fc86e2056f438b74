// SPDX-License-Identifier: Apache-2.0
#include "interpkit/eval.hpp"

#include <algorithm>
#include <map>
#include <sstream>

#include <fmt/core.h>

#include "interpkit/error.hpp"

namespace interpkit {

void to_json(nlohmann::json& j, const RunRecord& r) {
  j = {{"query_id", r.query_id},     {"method", r.method}, {"lambda_used", r.lambda_used},
       {"correct", r.correct},       {"tokens", r.tokens}, {"contains_think_close", r.contains_think_close},
       {"difficulty_level", r.difficulty_level}};
}

void from_json(const nlohmann::json& j, RunRecord& r) {
  r.query_id = j.at("query_id").get<std::string>();
  r.method = j.value("method", std::string{});
  r.lambda_used = j.value("lambda_used", 0.0);
  r.correct = j.at("correct").get<bool>();
  r.tokens = j.at("tokens").get<std::size_t>();
  r.contains_think_close = j.value("contains_think_close", false);
  r.difficulty_level = j.value("difficulty_level", 0);
}

std::string records_to_jsonl(std::span<const RunRecord> records) {
  std::string out;
  for (const auto& r : records) out += nlohmann::json(r).dump() + "\n";
  return out;
}

std::vector<RunRecord> records_from_jsonl(std::string_view text) {
  std::vector<RunRecord> out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(nlohmann::json::parse(line).get<RunRecord>());
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(fmt::format("records line {}: {}", lineno, e.what()));
    }
  }
  return out;
}

nlohmann::json EvaluationReport::to_json() const {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : pareto_points) pts.push_back({{"tok_mean", p.cost}, {"acc", p.acc}});
  return {{"method", method},
          {"n", n},
          {"acc", acc},
          {"tok_mean", tok_mean},
          {"cr_percent", cr_percent},
          {"think_ratio_percent", think_ratio_percent},
          {"lambda_mean", lambda_mean},
          {"pareto_points", pts}};
}

double compression_rate(double tok_mean, double thinking_baseline_tok) {
  if (!(thinking_baseline_tok > 0.0))
    throw ArgumentError(fmt::format("thinking baseline tokens must be positive, got {}", thinking_baseline_tok));
  return 100.0 * tok_mean / thinking_baseline_tok;
}

EvaluationReport score_run(std::span<const RunRecord> records, double thinking_baseline_tok) {
  if (records.empty()) throw ArgumentError("no run records to score");
  if (!(thinking_baseline_tok > 0.0))
    throw ArgumentError(fmt::format("thinking baseline tokens must be positive, got {}", thinking_baseline_tok));
  EvaluationReport rep;
  rep.method = records.front().method;
  rep.n = records.size();
  // integer tallies keep the means independent of record order
  std::size_t correct = 0, tokens = 0, think = 0;
  struct Tally {
    std::size_t n = 0, correct = 0, tokens = 0;
  };
  std::map<double, Tally> by_lambda;
  double lambda_sum = 0.0;
  std::vector<double> lambdas;
  for (const auto& r : records) {
    correct += r.correct;
    tokens += r.tokens;
    think += r.contains_think_close;
    lambdas.push_back(r.lambda_used);
    auto& t = by_lambda[r.lambda_used];
    ++t.n;
    t.correct += r.correct;
    t.tokens += r.tokens;
  }
  std::sort(lambdas.begin(), lambdas.end());
  for (double l : lambdas) lambda_sum += l;
  const double n = static_cast<double>(records.size());
  rep.acc = static_cast<double>(correct) / n;
  rep.tok_mean = static_cast<double>(tokens) / n;
  rep.think_ratio_percent = 100.0 * static_cast<double>(think) / n;
  rep.cr_percent = compression_rate(rep.tok_mean, thinking_baseline_tok);
  rep.lambda_mean = lambda_sum / n;
  std::vector<CostAcc> points;
  for (const auto& [l, t] : by_lambda)
    points.push_back({static_cast<double>(t.tokens) / static_cast<double>(t.n),
                      static_cast<double>(t.correct) / static_cast<double>(t.n)});
  rep.pareto_points = pareto_frontier(points);
  return rep;
}

bool dominates(const CostAcc& a, const CostAcc& b) {
  return a.cost <= b.cost && a.acc >= b.acc && (a.cost < b.cost || a.acc > b.acc);
}

bool weakly_dominates(const CostAcc& a, const CostAcc& b) { return a.cost <= b.cost && a.acc >= b.acc; }

std::vector<CostAcc> pareto_frontier(std::span<const CostAcc> points) {
  if (points.empty()) throw ArgumentError("pareto_frontier needs at least one point");
  std::vector<CostAcc> sorted(points.begin(), points.end());
  // cost ascending, and within a cost the best accuracy first
  std::sort(sorted.begin(), sorted.end(), [](const CostAcc& a, const CostAcc& b) {
    return a.cost != b.cost ? a.cost < b.cost : a.acc > b.acc;
  });
  std::vector<CostAcc> out;
  for (const auto& p : sorted) {
    if (!out.empty() && p.acc <= out.back().acc) continue;
    out.push_back(p);
  }
  return out;
}

bool answer_matches(std::span<const toy::Token> completion, std::span<const toy::Token> gold) {
  if (gold.empty()) throw ArgumentError("gold answer is empty");
  auto span = completion;
  const auto it = std::find(completion.rbegin(), completion.rend(), toy::kAns);
  if (it != completion.rend()) span = completion.subspan(static_cast<std::size_t>(completion.rend() - it));
  return std::equal(span.begin(), span.end(), gold.begin(), gold.end());
}

}  // namespace interpkit
