// SPDX-License-Identifier: Apache-2.0
#include "interpkit/toy/generate.hpp"

#include <algorithm>
#include <numeric>

#include "interpkit/error.hpp"

namespace interpkit::toy {

int sample_top_p(const RowVec& probs, double top_p, Rng& rng) {
  const auto n = static_cast<int>(probs.size());
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  // Stable ordering keeps ties deterministic (lower id first).
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return probs(a) > probs(b); });

  std::size_t keep = order.size();
  if (top_p < 1.0) {
    double mass = 0.0;
    for (std::size_t i = 0; i < order.size(); ++i) {
      mass += probs(order[i]);
      if (mass >= top_p) {
        keep = i + 1;
        break;
      }
    }
  }
  double total = 0.0;
  for (std::size_t i = 0; i < keep; ++i) total += probs(order[i]);
  const double u = uniform01(rng) * total;
  double acc = 0.0;
  for (std::size_t i = 0; i < keep; ++i) {
    acc += probs(order[i]);
    if (u < acc) return order[i];
  }
  return order[keep - 1];
}

Generation generate(const Transformer& model, std::span<const Token> prompt, const GenerationParams& params) {
  if (prompt.empty()) throw InputError("generation needs a nonempty prompt");
  params.validate();
  Generation out;
  if (params.max_new_tokens == 0) return out;

  Rng rng(params.seed);
  DecodeState state = model.start_decode();
  RowVec logits;
  for (Token t : prompt) logits = model.decode_step(state, t);

  const int limit = model.config().max_seq_len;
  for (int step = 0; step < params.max_new_tokens; ++step) {
    const RowVec raw = softmax(logits);
    out.stepwise_max_probs.push_back(raw.maxCoeff());
    Token next = 0;
    if (params.mode == DecodeMode::Argmax) {
      Eigen::Index arg = 0;
      raw.maxCoeff(&arg);
      next = static_cast<Token>(arg);
    } else {
      next = sample_top_p(softmax(logits / params.temperature), params.top_p, rng);
    }
    if (next == kEos) {
      out.stopped_on_eos = true;
      break;
    }
    out.completion.push_back(next);
    if (state.position >= limit) break;
    logits = model.decode_step(state, next);
  }
  return out;
}

}  // namespace interpkit::toy
