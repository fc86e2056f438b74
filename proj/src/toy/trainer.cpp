// SPDX-License-Identifier: Apache-2.0
#include "interpkit/toy/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>

#include <fmt/core.h>

#include "interpkit/error.hpp"
#include "interpkit/rng.hpp"

namespace interpkit::toy {

TrainStyle parse_train_style(std::string_view name) {
  if (name == "instruct") return TrainStyle::Instruct;
  if (name == "thinking") return TrainStyle::Thinking;
  if (name == "mixed") return TrainStyle::Mixed;
  throw ValidationError(fmt::format("unknown training style '{}'", name));
}

std::string_view train_style_name(TrainStyle style) {
  switch (style) {
    case TrainStyle::Instruct: return "instruct";
    case TrainStyle::Thinking: return "thinking";
    case TrainStyle::Mixed: return "mixed";
  }
  return "?";
}

Optimizer parse_optimizer(std::string_view name) {
  if (name == "sgd") return Optimizer::Sgd;
  if (name == "adam") return Optimizer::Adam;
  throw ValidationError(fmt::format("unknown optimizer '{}'", name));
}

std::string_view optimizer_name(Optimizer opt) { return opt == Optimizer::Sgd ? "sgd" : "adam"; }

void TrainOptions::validate() const {
  if (epochs < 0) throw ValidationError("epochs must be >= 0");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ValidationError("lr must be positive");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (max_steps && *max_steps < 0) throw ValidationError("max_steps must be >= 0");
  if (clip_norm < 0.0) throw ValidationError("clip_norm must be >= 0");
  if (rating_fraction < 0.0 || rating_fraction > 1.0) throw ValidationError("rating_fraction must lie in [0, 1]");
}

std::vector<TrainingExample> build_examples(const std::vector<QueryRecord>& corpus, const TrainOptions& options) {
  std::vector<TrainingExample> out;
  const double f = options.rating_fraction;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& q = corpus[i];
    if (options.style != TrainStyle::Thinking) out.push_back(make_trace(q, TraceStyle::Instruct));
    if (options.style != TrainStyle::Instruct) out.push_back(make_trace(q, TraceStyle::Thinking));
    // evenly spread: record i carries a rating trace when the running quota ticks over
    if (f > 0.0 && std::floor(static_cast<double>(i + 1) * f) > std::floor(static_cast<double>(i) * f))
      out.push_back(make_rating_trace(q, options.rating));
  }
  return out;
}

namespace {

std::vector<std::span<double>> flat_views(Params& p) {
  std::vector<std::span<double>> views;
  p.visit([&](const std::string&, auto& dense) {
    views.emplace_back(dense.data(), static_cast<std::size_t>(dense.size()));
  });
  return views;
}

class AdamState {
 public:
  explicit AdamState(const ModelConfig& config) : m_(Params::zeros(config)), v_(Params::zeros(config)) {}

  void step(Params& params, Params& grad, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, t_);
    const double c2 = 1.0 - std::pow(kBeta2, t_);
    auto pv = flat_views(params), gv = flat_views(grad), mv = flat_views(m_), vv = flat_views(v_);
    for (std::size_t k = 0; k < pv.size(); ++k) {
      for (std::size_t i = 0; i < pv[k].size(); ++i) {
        const double g = gv[k][i];
        mv[k][i] = kBeta1 * mv[k][i] + (1.0 - kBeta1) * g;
        vv[k][i] = kBeta2 * vv[k][i] + (1.0 - kBeta2) * g * g;
        pv[k][i] -= lr * (mv[k][i] / c1) / (std::sqrt(vv[k][i] / c2) + kEps);
      }
    }
  }

 private:
  static constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  Params m_, v_;
  int t_ = 0;
};

}  // namespace

NamedTensorArchive train(const NamedTensorArchive& base, const std::vector<QueryRecord>& corpus,
                         const TrainOptions& options) {
  options.validate();
  if (corpus.empty()) throw ValidationError("training corpus is empty");
  if (options.epochs == 0 || (options.max_steps && *options.max_steps == 0)) return base;

  const Transformer start = Transformer::from_archive(base);
  const ModelConfig config = start.config();
  Params params = start.params();
  std::vector<TrainingExample> examples = build_examples(corpus, options);
  for (const auto& ex : examples)
    if (ex.tokens.size() > static_cast<std::size_t>(config.max_seq_len))
      throw ValidationError(fmt::format("trace of {} tokens exceeds max_seq_len {}", ex.tokens.size(),
                                        config.max_seq_len));

  Rng rng(derive_seed(options.seed, "train"));
  std::optional<AdamState> adam;
  if (options.optimizer == Optimizer::Adam) adam.emplace(config);
  Params grad = Params::zeros(config);
  std::vector<std::size_t> order(examples.size());
  std::vector<TrainingExample> batch;
  int steps = 0;
  bool done = false;

  for (int epoch = 0; epoch < options.epochs && !done; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < order.size() && !done; b += static_cast<std::size_t>(options.batch_size)) {
      batch.clear();
      const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(options.batch_size));
      for (std::size_t i = b; i < e; ++i) batch.push_back(examples[order[i]]);

      const Transformer model(config, params);
      const double loss = model.loss_and_gradient(batch, grad);
      if (!std::isfinite(loss)) throw TrainingError(fmt::format("loss diverged at epoch {} (step {})", epoch, steps));
      if (options.clip_norm > 0.0) {
        const double norm = std::sqrt(grad.squared_norm());
        if (norm > options.clip_norm) grad.scale(options.clip_norm / norm);
      }
      if (adam)
        adam->step(params, grad, options.lr);
      else
        params.axpy(-options.lr, grad);
      ++steps;
      if (options.on_step) options.on_step(steps, loss);
      if (options.max_steps && steps >= *options.max_steps) done = true;
    }
  }

  NamedTensorArchive out = Transformer(config, std::move(params)).to_archive(base.dtype().value_or(DType::F64));
  for (const auto& [k, v] : base.metadata()) out.set_metadata(k, v);
  out.set_metadata("lineage.base_digest", archive_digest(base));
  out.set_metadata("train.style", std::string(train_style_name(options.style)));
  out.set_metadata("train.optimizer", std::string(optimizer_name(options.optimizer)));
  out.set_metadata("train.seed", std::to_string(options.seed));
  out.set_metadata("train.steps", std::to_string(steps));
  out.set_metadata("train.lr", fmt::format("{}", options.lr));
  return out;
}

NamedTensorArchive train(const NamedTensorArchive& base, const std::vector<QueryRecord>& corpus, TrainStyle style,
                         int epochs, double lr, std::uint64_t seed) {
  TrainOptions options;
  options.style = style;
  options.epochs = epochs;
  options.lr = lr;
  options.seed = seed;
  return train(base, corpus, options);
}

double corpus_loss(const Transformer& model, const std::vector<QueryRecord>& corpus, TrainStyle style) {
  TrainOptions options;
  options.style = style;
  const auto examples = build_examples(corpus, options);
  if (examples.empty()) throw ValidationError("loss corpus is empty");
  return model.loss(examples);
}

bool share_lineage(const NamedTensorArchive& a, const NamedTensorArchive& b) {
  const auto ba = a.metadata_value("lineage.base_digest");
  const auto bb = b.metadata_value("lineage.base_digest");
  if (ba && bb && *ba == *bb) return true;
  if (ba && *ba == archive_digest(b)) return true;
  if (bb && *bb == archive_digest(a)) return true;
  return false;
}

}  // namespace interpkit::toy
