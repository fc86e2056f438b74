// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "interpkit/toy/config.hpp"
#include "interpkit/toy/transformer.hpp"

namespace interpkit::toy {

/// modular-add: level L sums L + 1 digits mod 10, operands in fixed slots padded to
///   the widest level; reasoning writes the running sums.
/// multi-digit-add: level L adds two L-digit numbers; reasoning writes (digit, carry)
///   pairs least significant first.
enum class TaskFamily { ModularAdd, MultiDigitAdd };

TaskFamily parse_task_family(std::string_view name);  // "modular-add" | "multi-digit-add"
std::string_view task_family_name(TaskFamily family);

/// `per_level` records for each level 1..difficulty_levels, level-major. Same seed, same corpus.
std::vector<QueryRecord> make_synthetic_tasks(TaskFamily family, int difficulty_levels, int per_level,
                                              std::uint64_t seed, std::string_view id_prefix = "q");

enum class TraceStyle { Instruct, Thinking };

/// prompt ANS answer EOS
Tokens instruct_completion(const QueryRecord& q);
/// prompt <think> reasoning </think> ANS answer EOS
Tokens thinking_completion(const QueryRecord& q);
TrainingExample make_trace(const QueryRecord& q, TraceStyle style);

/// Maps difficulty levels onto a 1..9 rating the instruct model learns to emit after kRate.
struct RatingScheme {
  int max_level = 3;
  int rating_for(int level) const;
};

/// Prompt for the difficulty-rating probe: prefix + problem + suffix.
struct RatingTemplate {
  Tokens prefix;
  Tokens suffix{kRate};
  Tokens render(const QueryRecord& q) const;
};

TrainingExample make_rating_trace(const QueryRecord& q, const RatingScheme& scheme,
                                  const RatingTemplate& tmpl = {});

/// JSON-lines, one record per line.
std::string corpus_to_jsonl(const std::vector<QueryRecord>& corpus);
std::vector<QueryRecord> corpus_from_jsonl(std::string_view text);
void save_corpus(const std::vector<QueryRecord>& corpus, const std::filesystem::path& path);
std::vector<QueryRecord> load_corpus(const std::filesystem::path& path);

}  // namespace interpkit::toy
