// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>
#include <vector>

namespace interpkit::toy {

using Token = int;
using Tokens = std::vector<Token>;

// Ids 0..9 are the decimal digits.
inline constexpr Token kPad = 10;
inline constexpr Token kBos = 11;
inline constexpr Token kEq = 12;
inline constexpr Token kPlus = 13;
inline constexpr Token kThinkOpen = 14;
inline constexpr Token kThinkClose = 15;
/// Answer-inducing marker; the toy stand-in for a "final answer is" prompt.
inline constexpr Token kAns = 16;
inline constexpr Token kEos = 17;
/// Asks the model to rate the difficulty of the preceding problem.
inline constexpr Token kRate = 18;
inline constexpr int kVocabSize = 19;

inline bool is_digit(Token t) { return t >= 0 && t <= 9; }

std::string token_name(Token t);
std::string format_tokens(std::span<const Token> tokens);

}  // namespace interpkit::toy
