// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>

#include "interpkit/interp.hpp"
#include "interpkit/toy/transformer.hpp"

namespace interpkit::toy {

/// Ready-to-run merges of one instruct/thinking pair, memoized per rounded coefficient.
/// Safe to share across threads.
class MergedModels {
 public:
  /// Throws the alignment errors of require_aligned.
  MergedModels(std::shared_ptr<const NamedTensorArchive> instruct, std::shared_ptr<const NamedTensorArchive> thinking);
  MergedModels(const NamedTensorArchive& instruct, const NamedTensorArchive& thinking);

  std::shared_ptr<const Transformer> at(ReasoningIntensity lambda);
  std::shared_ptr<const Transformer> at(double lambda) { return at(ReasoningIntensity(lambda)); }

  const NamedTensorArchive& instruct() const { return *instruct_; }
  const NamedTensorArchive& thinking() const { return *thinking_; }
  std::size_t cached() const { return cache_.size(); }

 private:
  std::shared_ptr<const NamedTensorArchive> instruct_, thinking_;
  LambdaCache<Transformer> cache_;
};

}  // namespace interpkit::toy
