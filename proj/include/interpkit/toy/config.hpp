// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "interpkit/toy/vocab.hpp"

namespace interpkit::toy {

struct ModelConfig {
  int vocab_size = kVocabSize;
  int d_model = 64;
  int n_heads = 4;
  int n_layers = 2;
  int max_seq_len = 32;
  std::string activation = "gelu";

  int d_head() const { return d_model / n_heads; }
  int d_ff() const { return 4 * d_model; }

  /// Throws ConfigError unless every count is >= 1, heads divide d_model and activation is gelu.
  void validate() const;

  std::map<std::string, std::string> to_metadata() const;
  static ModelConfig from_metadata(const std::map<std::string, std::string>& meta);

  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

enum class DecodeMode { Sample, Argmax };

struct GenerationParams {
  double temperature = 0.6;
  double top_p = 0.95;
  int max_new_tokens = 24;
  std::uint64_t seed = 0;
  /// Argmax is the temperature -> 0 limit.
  DecodeMode mode = DecodeMode::Sample;

  void validate() const;  // throws ValidationError
};

void to_json(nlohmann::json& j, const GenerationParams& p);
void from_json(const nlohmann::json& j, GenerationParams& p);

struct QueryRecord {
  std::string query_id;
  Tokens prompt_tokens;
  Tokens gold_answer;
  int difficulty_level = 1;
  /// Intermediate steps written between think-open and think-close in thinking traces.
  Tokens reasoning_tokens;

  bool operator==(const QueryRecord&) const = default;
};

void to_json(nlohmann::json& j, const QueryRecord& q);
void from_json(const nlohmann::json& j, QueryRecord& q);

}  // namespace interpkit::toy
