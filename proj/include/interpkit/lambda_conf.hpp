// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>

#include <nlohmann/json.hpp>

#include "interpkit/archive.hpp"
#include "interpkit/interp.hpp"
#include "interpkit/toy/config.hpp"
#include "interpkit/toy/transformer.hpp"

namespace interpkit {

struct CalibrationParams {
  double mu = 0.3;
  double tau = 0.3;

  void validate() const;  // throws ValidationError unless tau > 0 and both finite
};

void to_json(nlohmann::json& j, const CalibrationParams& c);
void from_json(const nlohmann::json& j, CalibrationParams& c);

struct ConfidenceSignals {
  double c_instruct = 1.0;
  double c_thinking = 1.0;
  double s_ambi = 0.0;  // 1 - (c_i + c_t) / 2
  double s_dis = 0.0;   // |c_i - c_t|
  double s_final = 0.0;
  ReasoningIntensity lambda{0.5};
};

/// Logistic function, evaluated without overflow for large |x|.
double sigmoid(double x);

/// sigmoid((s_final - mu) / tau)
ReasoningIntensity calibrated_lambda(double s_final, const CalibrationParams& calib);

/// exp(mean(log p)) over the per-token max probabilities.
/// Throws ConfidenceUndefinedError on an empty trace, ValidationError on values outside (0, 1].
double geometric_mean_confidence(std::span<const double> max_probs);

/// Greedy decode of prompt + inducer; confidence over the answer tokens emitted before the end token.
/// Only max_new_tokens is taken from `params`.
double extract_confidence(const toy::Transformer& model, const toy::QueryRecord& query,
                          std::span<const toy::Token> inducer, const toy::GenerationParams& params);
double extract_confidence(const NamedTensorArchive& model, const toy::QueryRecord& query,
                          std::span<const toy::Token> inducer, const toy::GenerationParams& params);

/// Throws ValidationError unless both confidences lie in (0, 1].
ConfidenceSignals fuse_signals(double c_i, double c_t, const CalibrationParams& calib);

inline const toy::Tokens kDefaultInducer{toy::kAns};

ConfidenceSignals estimate_lambda_conf(const toy::Transformer& instruct, const toy::Transformer& thinking,
                                       const toy::QueryRecord& query, const CalibrationParams& calib,
                                       const toy::GenerationParams& params,
                                       std::span<const toy::Token> inducer = kDefaultInducer);
/// Throws on misaligned archives.
ConfidenceSignals estimate_lambda_conf(const NamedTensorArchive& instruct, const NamedTensorArchive& thinking,
                                       const toy::QueryRecord& query, const CalibrationParams& calib,
                                       const toy::GenerationParams& params,
                                       std::span<const toy::Token> inducer = kDefaultInducer);

}  // namespace interpkit
