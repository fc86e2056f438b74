// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string_view>
#include <vector>

#include "interpkit/archive.hpp"
#include "interpkit/toy/tasks.hpp"
#include "interpkit/toy/transformer.hpp"

namespace interpkit::toy {

/// Mixed trains on both trace styles of every record, used for the shared base.
enum class TrainStyle { Instruct, Thinking, Mixed };

TrainStyle parse_train_style(std::string_view name);
std::string_view train_style_name(TrainStyle style);

enum class Optimizer { Sgd, Adam };

Optimizer parse_optimizer(std::string_view name);
std::string_view optimizer_name(Optimizer opt);

struct TrainOptions {
  TrainStyle style = TrainStyle::Instruct;
  int epochs = 1;
  double lr = 0.1;
  std::uint64_t seed = 0;
  int batch_size = 32;
  /// Stops after this many updates even mid-epoch.
  std::optional<int> max_steps;
  Optimizer optimizer = Optimizer::Sgd;
  /// Global gradient-norm clip; 0 disables.
  double clip_norm = 1.0;
  /// Share of records that also contribute a difficulty-rating trace.
  double rating_fraction = 0.0;
  RatingScheme rating;
  /// Called after every update with (step, batch loss).
  std::function<void(int, double)> on_step;

  void validate() const;  // throws ValidationError
};

/// Training sequences for one pass over the corpus, in corpus order.
std::vector<TrainingExample> build_examples(const std::vector<QueryRecord>& corpus, const TrainOptions& options);

/// Mini-batch cross-entropy training on completion tokens. Result metadata records the base
/// digest under "lineage.base_digest". epochs == 0 returns `base` unchanged.
/// Throws ValidationError on an empty corpus, TrainingError (naming the epoch) on a NaN loss.
NamedTensorArchive train(const NamedTensorArchive& base, const std::vector<QueryRecord>& corpus,
                         const TrainOptions& options);

/// Convenience overload matching the minimal parameter set.
NamedTensorArchive train(const NamedTensorArchive& base, const std::vector<QueryRecord>& corpus, TrainStyle style,
                         int epochs, double lr, std::uint64_t seed);

/// Mean completion-token cross-entropy of `model` on the corpus rendered in `style`.
double corpus_loss(const Transformer& model, const std::vector<QueryRecord>& corpus, TrainStyle style);

/// True when both archives record the same training base or one is the other's base.
bool share_lineage(const NamedTensorArchive& a, const NamedTensorArchive& b);

}  // namespace interpkit::toy
