// SPDX-License-Identifier: Apache-2.0
#include "interpkit/lambda_conf.hpp"

#include <cmath>

#include <fmt/core.h>

#include "interpkit/error.hpp"
#include "interpkit/toy/generate.hpp"

namespace interpkit {

void CalibrationParams::validate() const {
  if (!std::isfinite(mu)) throw ValidationError("mu must be finite");
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ValidationError(fmt::format("tau must be positive, got {}", tau));
}

void to_json(nlohmann::json& j, const CalibrationParams& c) { j = {{"mu", c.mu}, {"tau", c.tau}}; }

void from_json(const nlohmann::json& j, CalibrationParams& c) {
  c.mu = j.value("mu", 0.3);
  c.tau = j.value("tau", 0.3);
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

ReasoningIntensity calibrated_lambda(double s_final, const CalibrationParams& calib) {
  calib.validate();
  return ReasoningIntensity(std::clamp(sigmoid((s_final - calib.mu) / calib.tau), 0.0, 1.0));
}

double geometric_mean_confidence(std::span<const double> max_probs) {
  if (max_probs.empty()) throw ConfidenceUndefinedError("no answer tokens to score");
  double log_sum = 0.0;
  for (double p : max_probs) {
    if (!(p > 0.0 && p <= 1.0)) throw ValidationError(fmt::format("max-probability {} outside (0, 1]", p));
    log_sum += std::log(p);
  }
  return std::min(1.0, std::exp(log_sum / static_cast<double>(max_probs.size())));
}

double extract_confidence(const toy::Transformer& model, const toy::QueryRecord& query,
                          std::span<const toy::Token> inducer, const toy::GenerationParams& params) {
  if (inducer.empty()) throw ValidationError("confidence probe needs a nonempty inducer");
  toy::Tokens probe = query.prompt_tokens;
  probe.insert(probe.end(), inducer.begin(), inducer.end());
  toy::GenerationParams greedy;
  greedy.mode = toy::DecodeMode::Argmax;
  greedy.max_new_tokens = params.max_new_tokens;
  const toy::Generation g = toy::generate(model, probe, greedy);
  if (g.completion.empty())
    throw ConfidenceUndefinedError(fmt::format("query {}: no answer tokens after the inducer", query.query_id));
  // the trailing entry, when present, belongs to the end-token step
  return geometric_mean_confidence(std::span(g.stepwise_max_probs).first(g.completion.size()));
}

double extract_confidence(const NamedTensorArchive& model, const toy::QueryRecord& query,
                          std::span<const toy::Token> inducer, const toy::GenerationParams& params) {
  return extract_confidence(toy::Transformer::from_archive(model), query, inducer, params);
}

ConfidenceSignals fuse_signals(double c_i, double c_t, const CalibrationParams& calib) {
  if (!(c_i > 0.0 && c_i <= 1.0) || !(c_t > 0.0 && c_t <= 1.0))
    throw ValidationError(fmt::format("confidences must lie in (0, 1], got {} and {}", c_i, c_t));
  ConfidenceSignals s;
  s.c_instruct = c_i;
  s.c_thinking = c_t;
  s.s_ambi = 1.0 - (c_i + c_t) / 2.0;
  s.s_dis = std::abs(c_i - c_t);
  s.s_final = s.s_ambi + s.s_dis;
  s.lambda = calibrated_lambda(s.s_final, calib);
  return s;
}

ConfidenceSignals estimate_lambda_conf(const toy::Transformer& instruct, const toy::Transformer& thinking,
                                       const toy::QueryRecord& query, const CalibrationParams& calib,
                                       const toy::GenerationParams& params, std::span<const toy::Token> inducer) {
  const double c_i = extract_confidence(instruct, query, inducer, params);
  const double c_t = extract_confidence(thinking, query, inducer, params);
  return fuse_signals(c_i, c_t, calib);
}

ConfidenceSignals estimate_lambda_conf(const NamedTensorArchive& instruct, const NamedTensorArchive& thinking,
                                       const toy::QueryRecord& query, const CalibrationParams& calib,
                                       const toy::GenerationParams& params, std::span<const toy::Token> inducer) {
  require_aligned(instruct, thinking);
  return estimate_lambda_conf(toy::Transformer::from_archive(instruct), toy::Transformer::from_archive(thinking),
                              query, calib, params, inducer);
}

}  // namespace interpkit
