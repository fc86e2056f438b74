// SPDX-License-Identifier: Apache-2.0
#include "interpkit/lambda_train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/core.h>

#include "interpkit/error.hpp"
#include "interpkit/eval.hpp"
#include "interpkit/lambda_conf.hpp"
#include "interpkit/rng.hpp"
#include "interpkit/toy/generate.hpp"

namespace interpkit {

std::vector<double> default_lambda_grid() { return {0.0, 0.3, 0.5, 0.7, 1.0}; }

std::vector<PolicyPerformanceTuple> profile_query(const toy::QueryRecord& query, toy::MergedModels& models,
                                                  const std::vector<double>& grid, std::size_t n_samples,
                                                  const toy::GenerationParams& params) {
  if (grid.empty()) throw ValidationError("profiling grid is empty");
  if (n_samples == 0) throw ValidationError("n_samples must be >= 1");
  params.validate();
  std::vector<PolicyPerformanceTuple> out;
  for (double l : grid) {
    const ReasoningIntensity lambda(l);
    PolicyPerformanceTuple t{lambda, 0.0, 0.0, n_samples};
    try {
      const auto model = models.at(lambda);
      std::size_t correct = 0, tokens = 0;
      for (std::size_t j = 0; j < n_samples; ++j) {
        toy::GenerationParams p = params;
        p.seed = derive_seed(params.seed, query.query_id, j);
        const auto g = toy::generate(*model, query.prompt_tokens, p);
        correct += answer_matches(g.completion, query.gold_answer) ? 1 : 0;
        tokens += g.completion.size();
      }
      t.acc = static_cast<double>(correct) / static_cast<double>(n_samples);
      t.cost = static_cast<double>(tokens) / static_cast<double>(n_samples);
    } catch (const Error& e) {
      throw ProfilingError(fmt::format("query {} at lambda {}: {}", query.query_id, l, e.what()));
    }
    out.push_back(t);
  }
  return out;
}

std::vector<PolicyPerformanceTuple> profile_query(const toy::QueryRecord& query, const NamedTensorArchive& instruct,
                                                  const NamedTensorArchive& thinking, const std::vector<double>& grid,
                                                  std::size_t n_samples, const toy::GenerationParams& params) {
  toy::MergedModels models(instruct, thinking);
  return profile_query(query, models, grid, n_samples, params);
}

ReasoningIntensity target_lambda(std::span<const PolicyPerformanceTuple> tuples) {
  if (tuples.empty()) throw ValidationError("target_lambda needs at least one tuple");
  double best = -1.0;
  for (const auto& t : tuples) best = std::max(best, t.acc);
  std::optional<ReasoningIntensity> lambda;
  for (const auto& t : tuples)
    if (t.acc == best && (!lambda || t.lambda < *lambda)) lambda = t.lambda;
  return *lambda;
}

Features query_embedding(const toy::Transformer& model, const toy::QueryRecord& query) {
  const toy::RowMat h = model.final_hidden(query.prompt_tokens);
  const toy::RowVec mean = h.colwise().mean();
  return Features(mean.data(), mean.data() + mean.size());
}

void MlpTrainOptions::validate() const {
  if (epochs < 0) throw ValidationError("epochs must be >= 0");
  if (!(lr > 0.0)) throw ValidationError("lr must be positive");
  if (hidden == 0 || batch_size == 0) throw ValidationError("hidden and batch_size must be >= 1");
}

double RouterModel::predict(std::span<const double> features) const { return sigmoid(net.forward(features)); }

double router_loss(const RouterModel& router, std::span<const RouterSample> data, std::span<double> grad) {
  if (data.empty()) throw ValidationError("router dataset is empty");
  const double n = static_cast<double>(data.size());
  double sum = 0.0;
  for (const auto& [x, y] : data) {
    const double p = router.predict(x);
    sum += (p - y) * (p - y);
    if (!grad.empty()) router.net.backward(x, 2.0 * (p - y) * p * (1.0 - p) / n, grad);
  }
  return sum / n;
}

namespace {

template <class Sample, class LossFn>
void fit(Mlp& net, std::vector<Sample> data, const MlpTrainOptions& options, std::string_view what, LossFn&& loss) {
  Rng rng(derive_seed(options.seed, what));
  AdamOptimizer adam(net.params().size(), options.lr);
  std::vector<double> grad(net.params().size());
  std::vector<Sample> batch;
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(data.begin(), data.end(), rng);
    for (std::size_t b = 0; b < data.size(); b += options.batch_size) {
      const auto e = std::min(data.size(), b + options.batch_size);
      std::fill(grad.begin(), grad.end(), 0.0);
      const double l = loss(std::span<const Sample>(data.data() + b, e - b), std::span<double>(grad));
      if (!std::isfinite(l)) throw TrainingError(fmt::format("{} loss diverged at epoch {}", what, epoch));
      adam.step(net.params(), grad);
    }
  }
}

}  // namespace

RouterModel train_router(const std::vector<RouterSample>& data, const MlpTrainOptions& options) {
  options.validate();
  if (data.empty()) throw ValidationError("router dataset is empty");
  RouterModel router{Mlp::init(data.front().first.size(), options.hidden, derive_seed(options.seed, "router"))};
  std::vector<Features> xs;
  for (const auto& [x, y] : data) {
    if (!(y >= 0.0 && y <= 1.0)) throw ValidationError(fmt::format("router target {} outside [0, 1]", y));
    xs.push_back(x);
  }
  router.net.fit_standardization(xs);
  fit(router.net, data, options, "router",
      [&](std::span<const RouterSample> b, std::span<double> g) { return router_loss(router, b, g); });
  return router;
}

void to_json(nlohmann::json& j, const PreferencePair& p) {
  j = {{"query_id", p.query_id}, {"lambda_chosen", p.lambda_chosen.value()}, {"lambda_rejected", p.lambda_rejected.value()}};
}

void from_json(const nlohmann::json& j, PreferencePair& p) {
  p.query_id = j.at("query_id").get<std::string>();
  p.lambda_chosen = ReasoningIntensity(j.at("lambda_chosen").get<double>());
  p.lambda_rejected = ReasoningIntensity(j.at("lambda_rejected").get<double>());
  if (p.lambda_chosen == p.lambda_rejected) throw ValidationError("preference pair with chosen == rejected");
}

bool preferred(const PolicyPerformanceTuple& a, const PolicyPerformanceTuple& b, double delta_acc) {
  if (a.acc > b.acc + delta_acc) return true;
  return std::abs(a.acc - b.acc) <= delta_acc && a.cost < b.cost;
}

std::vector<PreferencePair> build_preferences(const std::map<std::string, std::vector<PolicyPerformanceTuple>>& tuples,
                                              double delta_acc) {
  if (!(delta_acc >= 0.0)) throw ValidationError("delta_acc must be >= 0");
  std::vector<PreferencePair> out;
  for (const auto& [id, ts] : tuples) {
    for (std::size_t i = 0; i < ts.size(); ++i) {
      for (std::size_t j = i + 1; j < ts.size(); ++j) {
        if (ts[i].lambda == ts[j].lambda) continue;
        if (preferred(ts[i], ts[j], delta_acc))
          out.push_back({id, ts[i].lambda, ts[j].lambda});
        else if (preferred(ts[j], ts[i], delta_acc))
          out.push_back({id, ts[j].lambda, ts[i].lambda});
      }
    }
  }
  return out;
}

double RewardModel::score(std::span<const double> embedding, double lambda) const {
  Features x(embedding.begin(), embedding.end());
  x.push_back(lambda);
  return net.forward(x);
}

double preference_loss(const RewardModel& reward, std::span<const PreferencePair> pairs,
                       const EmbeddingMap& embeddings, std::span<double> grad) {
  if (pairs.empty()) throw ValidationError("no preference pairs");
  const double n = static_cast<double>(pairs.size());
  double sum = 0.0;
  Features xc, xr;
  for (const auto& p : pairs) {
    auto it = embeddings.find(p.query_id);
    if (it == embeddings.end()) throw ValidationError(fmt::format("no embedding for query {}", p.query_id));
    xc = it->second;
    xc.push_back(p.lambda_chosen.value());
    xr = it->second;
    xr.push_back(p.lambda_rejected.value());
    const double d = reward.net.forward(xc) - reward.net.forward(xr);
    // -log sigmoid(d), stable for both signs
    sum += d >= 0.0 ? std::log1p(std::exp(-d)) : -d + std::log1p(std::exp(d));
    if (!grad.empty()) {
      const double g = -(1.0 - sigmoid(d)) / n;
      reward.net.backward(xc, g, grad);
      reward.net.backward(xr, -g, grad);
    }
  }
  return sum / n;
}

RewardModel train_reward(const std::vector<PreferencePair>& pairs, const EmbeddingMap& embeddings,
                         const MlpTrainOptions& options) {
  options.validate();
  if (pairs.empty()) throw ValidationError("no preference pairs");
  std::vector<Features> rows;
  for (const auto& p : pairs) {
    auto it = embeddings.find(p.query_id);
    if (it == embeddings.end()) throw ValidationError(fmt::format("no embedding for query {}", p.query_id));
    for (double l : {p.lambda_chosen.value(), p.lambda_rejected.value()}) {
      rows.push_back(it->second);
      rows.back().push_back(l);
    }
  }
  RewardModel reward{Mlp::init(rows.front().size(), options.hidden, derive_seed(options.seed, "reward"))};
  reward.net.fit_standardization(rows);
  fit(reward.net, pairs, options, "reward", [&](std::span<const PreferencePair> b, std::span<double> g) {
    return preference_loss(reward, b, embeddings, g);
  });
  return reward;
}

ReasoningIntensity estimate_lambda_pref(const RewardModel& reward, std::span<const double> embedding,
                                        const std::vector<double>& grid) {
  if (grid.empty()) throw ValidationError("preference grid is empty");
  std::vector<double> sorted = grid;
  std::sort(sorted.begin(), sorted.end());
  double best_lambda = sorted.front();
  double best = reward.score(embedding, best_lambda);
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    const double s = reward.score(embedding, sorted[i]);
    if (s > best) {
      best = s;
      best_lambda = sorted[i];
    }
  }
  return ReasoningIntensity(best_lambda);
}

int parse_rating(std::span<const toy::Token> completion, int scale_max) {
  int value = 0;
  std::size_t digits = 0;
  for (toy::Token t : completion) {
    if (!toy::is_digit(t)) break;
    value = value * 10 + t;
    if (++digits > 2) break;
  }
  if (digits == 0 || digits > 2 || value < 1 || value > scale_max)
    throw RatingParseError(fmt::format("no rating in 1..{} at the start of '{}'", scale_max,
                                       toy::format_tokens(completion)));
  return value;
}

ReasoningIntensity estimate_lambda_prompt(const toy::Transformer& instruct, const toy::QueryRecord& query,
                                          const toy::RatingTemplate& rating_prompt, int scale_max) {
  if (scale_max != 9 && scale_max != 10) throw ValidationError("scale_max must be 9 or 10");
  toy::GenerationParams greedy;
  greedy.mode = toy::DecodeMode::Argmax;
  greedy.max_new_tokens = 3;
  const auto g = toy::generate(instruct, rating_prompt.render(query), greedy);
  const int r = parse_rating(g.completion, scale_max);
  return ReasoningIntensity(static_cast<double>(r - 1) / (scale_max - 1));
}

}  // namespace interpkit
