// SPDX-License-Identifier: Apache-2.0
#include "interpkit/toy/merged.hpp"

namespace interpkit::toy {

MergedModels::MergedModels(std::shared_ptr<const NamedTensorArchive> instruct,
                           std::shared_ptr<const NamedTensorArchive> thinking)
    : instruct_(std::move(instruct)),
      thinking_(std::move(thinking)),
      cache_([this](ReasoningIntensity lambda) {
        return Transformer::from_archive(interpolate(*instruct_, *thinking_, lambda));
      }) {
  require_aligned(*instruct_, *thinking_);
}

MergedModels::MergedModels(const NamedTensorArchive& instruct, const NamedTensorArchive& thinking)
    : MergedModels(std::make_shared<const NamedTensorArchive>(instruct),
                   std::make_shared<const NamedTensorArchive>(thinking)) {}

std::shared_ptr<const Transformer> MergedModels::at(ReasoningIntensity lambda) { return cache_.get(lambda); }

}  // namespace interpkit::toy
