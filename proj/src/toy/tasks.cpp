// SPDX-License-Identifier: Apache-2.0
#include "interpkit/toy/tasks.hpp"

#include <cmath>
#include <sstream>

#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include "interpkit/digest.hpp"
#include "interpkit/error.hpp"
#include "interpkit/rng.hpp"

namespace interpkit::toy {

TaskFamily parse_task_family(std::string_view name) {
  if (name == "modular-add") return TaskFamily::ModularAdd;
  if (name == "multi-digit-add") return TaskFamily::MultiDigitAdd;
  throw ValidationError(fmt::format("unknown task family '{}'", name));
}

std::string_view task_family_name(TaskFamily family) {
  return family == TaskFamily::ModularAdd ? "modular-add" : "multi-digit-add";
}

namespace {

Tokens digits_of(long value, int width = 0) {
  Tokens out;
  do {
    out.insert(out.begin(), static_cast<Token>(value % 10));
    value /= 10;
  } while (value > 0);
  while (static_cast<int>(out.size()) < width) out.insert(out.begin(), 0);
  return out;
}

QueryRecord modular_add(int level, int levels, Rng& rng) {
  const int operands = level + 1;
  const int slots = levels + 1;
  std::uniform_int_distribution<int> digit(0, 9);
  QueryRecord q;
  q.difficulty_level = level;
  q.prompt_tokens.push_back(kBos);
  int running = 0;
  for (int j = 0; j < slots; ++j) {
    if (j < operands) {
      const int a = digit(rng);
      q.prompt_tokens.push_back(a);
      running = (running + a) % 10;
      q.reasoning_tokens.push_back(running);
    } else {
      q.prompt_tokens.push_back(kPad);
    }
  }
  q.prompt_tokens.push_back(kEq);
  q.gold_answer = {running};
  return q;
}

QueryRecord multi_digit_add(int level, Rng& rng) {
  const long lo = level == 1 ? 0 : static_cast<long>(std::pow(10, level - 1));
  const long hi = static_cast<long>(std::pow(10, level)) - 1;
  std::uniform_int_distribution<long> operand(lo, hi);
  const long a = operand(rng);
  const long b = operand(rng);
  QueryRecord q;
  q.difficulty_level = level;
  q.prompt_tokens.push_back(kBos);
  for (Token t : digits_of(a)) q.prompt_tokens.push_back(t);
  q.prompt_tokens.push_back(kPlus);
  for (Token t : digits_of(b)) q.prompt_tokens.push_back(t);
  q.prompt_tokens.push_back(kEq);
  q.gold_answer = digits_of(a + b);
  const Tokens da = digits_of(a, level), db = digits_of(b, level);
  int carry = 0;
  for (int i = level - 1; i >= 0; --i) {
    const int s = da[static_cast<std::size_t>(i)] + db[static_cast<std::size_t>(i)] + carry;
    carry = s / 10;
    q.reasoning_tokens.push_back(s % 10);
    q.reasoning_tokens.push_back(carry);
  }
  return q;
}

}  // namespace

std::vector<QueryRecord> make_synthetic_tasks(TaskFamily family, int difficulty_levels, int per_level,
                                              std::uint64_t seed, std::string_view id_prefix) {
  if (difficulty_levels < 1 || per_level < 1) throw ValidationError("difficulty_levels and per_level must be >= 1");
  std::vector<QueryRecord> out;
  for (int level = 1; level <= difficulty_levels; ++level) {
    Rng rng(derive_seed(seed, task_family_name(family), static_cast<std::uint64_t>(level)));
    for (int i = 0; i < per_level; ++i) {
      QueryRecord q = family == TaskFamily::ModularAdd ? modular_add(level, difficulty_levels, rng)
                                                       : multi_digit_add(level, rng);
      q.query_id = fmt::format("{}-L{}-{:04d}", id_prefix, level, i);
      out.push_back(std::move(q));
    }
  }
  return out;
}

Tokens instruct_completion(const QueryRecord& q) {
  Tokens t{kAns};
  t.insert(t.end(), q.gold_answer.begin(), q.gold_answer.end());
  t.push_back(kEos);
  return t;
}

Tokens thinking_completion(const QueryRecord& q) {
  Tokens t{kThinkOpen};
  t.insert(t.end(), q.reasoning_tokens.begin(), q.reasoning_tokens.end());
  t.push_back(kThinkClose);
  t.push_back(kAns);
  t.insert(t.end(), q.gold_answer.begin(), q.gold_answer.end());
  t.push_back(kEos);
  return t;
}

TrainingExample make_trace(const QueryRecord& q, TraceStyle style) {
  TrainingExample ex;
  ex.tokens = q.prompt_tokens;
  ex.target_begin = q.prompt_tokens.size();
  const Tokens c = style == TraceStyle::Instruct ? instruct_completion(q) : thinking_completion(q);
  ex.tokens.insert(ex.tokens.end(), c.begin(), c.end());
  return ex;
}

int RatingScheme::rating_for(int level) const {
  if (max_level <= 1) return 1;
  const double frac = static_cast<double>(std::clamp(level, 1, max_level) - 1) / (max_level - 1);
  return 1 + static_cast<int>(std::lround(8.0 * frac));
}

Tokens RatingTemplate::render(const QueryRecord& q) const {
  Tokens t = prefix;
  t.insert(t.end(), q.prompt_tokens.begin(), q.prompt_tokens.end());
  t.insert(t.end(), suffix.begin(), suffix.end());
  return t;
}

TrainingExample make_rating_trace(const QueryRecord& q, const RatingScheme& scheme, const RatingTemplate& tmpl) {
  TrainingExample ex;
  ex.tokens = tmpl.render(q);
  ex.target_begin = ex.tokens.size();
  ex.tokens.push_back(scheme.rating_for(q.difficulty_level));
  ex.tokens.push_back(kEos);
  return ex;
}

std::string corpus_to_jsonl(const std::vector<QueryRecord>& corpus) {
  std::string out;
  for (const auto& q : corpus) out += nlohmann::json(q).dump() + "\n";
  return out;
}

std::vector<QueryRecord> corpus_from_jsonl(std::string_view text) {
  std::vector<QueryRecord> out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(nlohmann::json::parse(line).get<QueryRecord>());
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(fmt::format("corpus line {}: {}", lineno, e.what()));
    }
  }
  return out;
}

void save_corpus(const std::vector<QueryRecord>& corpus, const std::filesystem::path& path) {
  write_file(path, corpus_to_jsonl(corpus));
}

std::vector<QueryRecord> load_corpus(const std::filesystem::path& path) {
  return corpus_from_jsonl(read_file(path));
}

}  // namespace interpkit::toy
