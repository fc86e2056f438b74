// SPDX-License-Identifier: Apache-2.0
#include "interpkit/toy/config.hpp"

#include <fmt/core.h>

#include "interpkit/error.hpp"

namespace interpkit::toy {

std::string token_name(Token t) {
  if (is_digit(t)) return std::to_string(t);
  switch (t) {
    case kPad: return "_";
    case kBos: return "<s>";
    case kEq: return "=";
    case kPlus: return "+";
    case kThinkOpen: return "<think>";
    case kThinkClose: return "</think>";
    case kAns: return "ANS";
    case kEos: return "</s>";
    case kRate: return "RATE";
    default: return fmt::format("<{}>", t);
  }
}

std::string format_tokens(std::span<const Token> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += token_name(tokens[i]);
  }
  return out;
}

void ModelConfig::validate() const {
  if (vocab_size < 1 || d_model < 1 || n_heads < 1 || n_layers < 1 || max_seq_len < 1)
    throw ConfigError(fmt::format("model counts must be >= 1 (vocab={}, d_model={}, heads={}, layers={}, seq={})",
                                  vocab_size, d_model, n_heads, n_layers, max_seq_len));
  if (d_model % n_heads != 0)
    throw ConfigError(fmt::format("d_model {} not divisible by n_heads {}", d_model, n_heads));
  if (activation != "gelu") throw ConfigError(fmt::format("unsupported activation '{}'", activation));
}

std::map<std::string, std::string> ModelConfig::to_metadata() const {
  return {{"config.vocab_size", std::to_string(vocab_size)},
          {"config.d_model", std::to_string(d_model)},
          {"config.n_heads", std::to_string(n_heads)},
          {"config.n_layers", std::to_string(n_layers)},
          {"config.max_seq_len", std::to_string(max_seq_len)},
          {"config.activation", activation}};
}

ModelConfig ModelConfig::from_metadata(const std::map<std::string, std::string>& meta) {
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = meta.find(key);
    if (it == meta.end()) throw ConfigError(fmt::format("archive metadata lacks '{}'", key));
    return it->second;
  };
  auto count = [&](const std::string& key) {
    try {
      return std::stoi(get(key));
    } catch (const std::logic_error&) {
      throw ConfigError(fmt::format("metadata '{}' is not an integer", key));
    }
  };
  ModelConfig c;
  c.vocab_size = count("config.vocab_size");
  c.d_model = count("config.d_model");
  c.n_heads = count("config.n_heads");
  c.n_layers = count("config.n_layers");
  c.max_seq_len = count("config.max_seq_len");
  c.activation = get("config.activation");
  c.validate();
  return c;
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"vocab_size", c.vocab_size}, {"d_model", c.d_model},         {"n_heads", c.n_heads},
       {"n_layers", c.n_layers},     {"max_seq_len", c.max_seq_len}, {"activation", c.activation}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.vocab_size = j.value("vocab_size", kVocabSize);
  c.d_model = j.value("d_model", 64);
  c.n_heads = j.value("n_heads", 4);
  c.n_layers = j.value("n_layers", 2);
  c.max_seq_len = j.value("max_seq_len", 32);
  c.activation = j.value("activation", std::string("gelu"));
}

void GenerationParams::validate() const {
  if (!(temperature > 0.0)) throw ValidationError(fmt::format("temperature must be > 0, got {}", temperature));
  if (!(top_p > 0.0 && top_p <= 1.0)) throw ValidationError(fmt::format("top_p must be in (0,1], got {}", top_p));
  if (max_new_tokens < 0) throw ValidationError("max_new_tokens must be >= 0");
}

void to_json(nlohmann::json& j, const GenerationParams& p) {
  j = {{"temperature", p.temperature},
       {"top_p", p.top_p},
       {"max_new_tokens", p.max_new_tokens},
       {"seed", p.seed},
       {"mode", p.mode == DecodeMode::Argmax ? "argmax" : "sample"}};
}

void from_json(const nlohmann::json& j, GenerationParams& p) {
  p.temperature = j.value("temperature", 0.6);
  p.top_p = j.value("top_p", 0.95);
  p.max_new_tokens = j.value("max_new_tokens", 24);
  p.seed = j.value("seed", std::uint64_t{0});
  p.mode = j.value("mode", std::string("sample")) == "argmax" ? DecodeMode::Argmax : DecodeMode::Sample;
}

void to_json(nlohmann::json& j, const QueryRecord& q) {
  j = {{"query_id", q.query_id},
       {"prompt_tokens", q.prompt_tokens},
       {"gold_answer", q.gold_answer},
       {"difficulty_level", q.difficulty_level},
       {"reasoning_tokens", q.reasoning_tokens}};
}

void from_json(const nlohmann::json& j, QueryRecord& q) {
  q.query_id = j.at("query_id").get<std::string>();
  q.prompt_tokens = j.at("prompt_tokens").get<Tokens>();
  q.gold_answer = j.at("gold_answer").get<Tokens>();
  q.difficulty_level = j.value("difficulty_level", 1);
  q.reasoning_tokens = j.value("reasoning_tokens", Tokens{});
}

}  // namespace interpkit::toy
