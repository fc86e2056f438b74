// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "interpkit/archive.hpp"
#include "interpkit/interp.hpp"
#include "interpkit/mlp.hpp"
#include "interpkit/toy/config.hpp"
#include "interpkit/toy/merged.hpp"
#include "interpkit/toy/tasks.hpp"

namespace interpkit {

struct PolicyPerformanceTuple {
  ReasoningIntensity lambda{0.0};
  double acc = 0.0;   // fraction of samples judged correct
  double cost = 0.0;  // mean completion tokens
  std::size_t samples = 0;
};

/// Default coefficient grid for profiling and preference scoring.
std::vector<double> default_lambda_grid();

/// Samples `n_samples` completions of the merge at every grid point. Sample j of a query uses
/// seed derive_seed(params.seed, query_id, j) at every coefficient.
/// Throws ValidationError on a bad grid or n_samples == 0, ProfilingError naming the coefficient
/// when generation fails.
std::vector<PolicyPerformanceTuple> profile_query(const toy::QueryRecord& query, toy::MergedModels& models,
                                                  const std::vector<double>& grid, std::size_t n_samples,
                                                  const toy::GenerationParams& params);
std::vector<PolicyPerformanceTuple> profile_query(const toy::QueryRecord& query, const NamedTensorArchive& instruct,
                                                  const NamedTensorArchive& thinking, const std::vector<double>& grid,
                                                  std::size_t n_samples, const toy::GenerationParams& params);

/// Smallest coefficient reaching the best accuracy. Throws ValidationError when empty.
ReasoningIntensity target_lambda(std::span<const PolicyPerformanceTuple> tuples);

/// Mean-pooled final-block hidden state of `model` over the prompt.
Features query_embedding(const toy::Transformer& model, const toy::QueryRecord& query);

struct MlpTrainOptions {
  int epochs = 200;
  double lr = 0.01;
  std::uint64_t seed = 0;
  std::size_t hidden = 32;
  std::size_t batch_size = 32;

  void validate() const;
};

/// sigmoid(MLP(embedding)) in [0, 1].
struct RouterModel {
  Mlp net;

  double predict(std::span<const double> features) const;
  NamedTensorArchive to_archive() const { return net.to_archive("router"); }
  static RouterModel from_archive(const NamedTensorArchive& a) { return {Mlp::from_archive(a, "router")}; }
};

using RouterSample = std::pair<Features, double>;

/// Mean squared error; when `grad` is given, adds its gradient with respect to net.params().
double router_loss(const RouterModel& router, std::span<const RouterSample> data, std::span<double> grad = {});

/// Adam on MSE. Throws ValidationError on empty data, TrainingError on a NaN loss.
RouterModel train_router(const std::vector<RouterSample>& data, const MlpTrainOptions& options);

struct PreferencePair {
  std::string query_id;
  ReasoningIntensity lambda_chosen{0.0};
  ReasoningIntensity lambda_rejected{0.0};
  bool operator==(const PreferencePair&) const = default;
};

void to_json(nlohmann::json& j, const PreferencePair& p);
void from_json(const nlohmann::json& j, PreferencePair& p);

/// True when tuple a is preferred over b: accuracy beyond the tolerance wins, otherwise a
/// near-tie in accuracy is broken by strictly lower cost.
bool preferred(const PolicyPerformanceTuple& a, const PolicyPerformanceTuple& b, double delta_acc);

/// Every ordered pair within each query for which one side is preferred; undecided pairs are dropped.
/// Output order: query id, then tuple index order. Throws ValidationError on a negative tolerance.
std::vector<PreferencePair> build_preferences(const std::map<std::string, std::vector<PolicyPerformanceTuple>>& tuples,
                                              double delta_acc = 0.05);

/// MLP over [embedding ; lambda], unbounded scalar score.
struct RewardModel {
  Mlp net;

  double score(std::span<const double> embedding, double lambda) const;
  NamedTensorArchive to_archive() const { return net.to_archive("reward"); }
  static RewardModel from_archive(const NamedTensorArchive& a) { return {Mlp::from_archive(a, "reward")}; }
};

using EmbeddingMap = std::map<std::string, Features>;

/// Mean of -log sigmoid(R(q, chosen) - R(q, rejected)); adds the gradient when `grad` is given.
double preference_loss(const RewardModel& reward, std::span<const PreferencePair> pairs,
                       const EmbeddingMap& embeddings, std::span<double> grad = {});

/// Throws ValidationError on empty pairs or a query without embedding, TrainingError on NaN.
RewardModel train_reward(const std::vector<PreferencePair>& pairs, const EmbeddingMap& embeddings,
                         const MlpTrainOptions& options);

/// Grid member with the highest score, ties to the smallest coefficient.
ReasoningIntensity estimate_lambda_pref(const RewardModel& reward, std::span<const double> embedding,
                                        const std::vector<double>& grid);

/// Rating r in [1, scale_max] from the leading digits of `completion`;
/// throws RatingParseError otherwise.
int parse_rating(std::span<const toy::Token> completion, int scale_max);

/// (r - 1) / (scale_max - 1) for the rating the instruct model emits, decoded greedily.
/// Throws ValidationError unless scale_max is 9 or 10, RatingParseError on an unusable reply.
ReasoningIntensity estimate_lambda_prompt(const toy::Transformer& instruct, const toy::QueryRecord& query,
                                          const toy::RatingTemplate& rating_prompt, int scale_max = 10);

}  // namespace interpkit
