// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "interpkit/rng.hpp"
#include "interpkit/toy/config.hpp"
#include "interpkit/toy/transformer.hpp"

namespace interpkit::toy {

struct Generation {
  /// Emitted tokens, excluding the end token that stopped decoding.
  Tokens completion;
  /// Max of the untempered next-token distribution at each step, taken before the token is chosen.
  /// One entry per decoding step, so it is one longer than `completion` when decoding hit the end token.
  std::vector<double> stepwise_max_probs;
  bool stopped_on_eos = false;
};

/// Index chosen from `probs` by nucleus sampling: the smallest prefix (by descending
/// probability) whose mass reaches `top_p`, renormalized. top_p == 1 keeps the full distribution.
int sample_top_p(const RowVec& probs, double top_p, Rng& rng);

/// Decodes from `prompt` until kEos or max_new_tokens. Deterministic for a fixed params.seed.
/// Throws InputError on an empty prompt, ValidationError on invalid params.
Generation generate(const Transformer& model, std::span<const Token> prompt, const GenerationParams& params);

}  // namespace interpkit::toy
