// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "interpkit/archive.hpp"
#include "interpkit/eval.hpp"
#include "interpkit/lambda_conf.hpp"
#include "interpkit/lambda_train.hpp"
#include "interpkit/toy/config.hpp"
#include "interpkit/toy/merged.hpp"
#include "interpkit/toy/tasks.hpp"
#include "interpkit/toy/trainer.hpp"

namespace interpkit {

inline constexpr const char* kToolkitVersion = "0.1.0";

/// Recipe for the synthetic instruct/thinking pair: shared base trained on both trace styles,
/// then one short fine-tune per style.
struct ToySuiteConfig {
  toy::TaskFamily family = toy::TaskFamily::ModularAdd;
  int levels = 4;
  int train_per_level = 1000;
  int eval_per_level = 50;
  int profile_per_level = 40;
  toy::ModelConfig model;
  int batch_size = 32;
  int base_steps = 3000;
  double base_lr = 1.0;
  int finetune_steps = 200;
  double instruct_lr = 0.1;
  double thinking_lr = 0.6;
  double rating_fraction = 0.25;
  /// Fine-tune the thinking model from the instruct model instead of the base.
  bool thinking_from_instruct = false;

  void validate() const;
};

void to_json(nlohmann::json& j, const ToySuiteConfig& c);
void from_json(const nlohmann::json& j, ToySuiteConfig& c);

struct ToyPair {
  NamedTensorArchive base, instruct, thinking;
};

/// All randomness derives from `seed` through the substreams "init", "base", "instruct", "thinking".
ToyPair train_toy_pair(const ToySuiteConfig& suite, const std::vector<toy::QueryRecord>& train_set,
                       std::uint64_t seed);

/// Training, evaluation and profiling sets, from substreams "data.train", "data.eval", "data.profile".
struct ToyData {
  std::vector<toy::QueryRecord> train, eval, profile;
};
ToyData make_toy_data(const ToySuiteConfig& suite, std::uint64_t seed);

struct RunConfig {
  std::uint64_t seed = 7;
  std::vector<double> grid = default_lambda_grid();
  CalibrationParams calibration;
  toy::GenerationParams gen;
  /// Optional inputs: instruct, thinking, eval_queries, profile_queries.
  std::map<std::string, std::string> paths;
  std::size_t n_samples = 8;
  double delta_acc = 0.05;
  /// Subset of fixed, conf, pred, pref, prompt.
  std::vector<std::string> methods{"fixed", "conf", "pred", "pref", "prompt"};
  ToySuiteConfig toy;
  MlpTrainOptions router{300, 0.01, 0, 32, 32};
  MlpTrainOptions reward{60, 0.01, 0, 32, 64};
  int rating_scale_max = 10;
  /// Estimate used when the prompt baseline cannot parse a rating.
  double prompt_fallback_lambda = 0.5;
  std::size_t jobs = 1;

  /// Throws ValidationError (grid, counts, methods) or IoError (unresolvable path).
  void validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);
RunConfig load_run_config(const std::filesystem::path& path);

/// sha256 of the canonical JSON of the config minus `jobs`, which never changes results.
std::string config_hash(const RunConfig& config);

/// name -> sha256 for every file written, plus inputs read.
struct Manifest {
  std::string command;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> inputs;
  std::map<std::string, std::string> outputs;
  nlohmann::json to_json() const;
};

/// Writes `bytes` to dir/name and records its digest.
void write_artifact(const std::filesystem::path& dir, const std::string& name, const std::string& bytes,
                    Manifest& manifest);

struct MethodResult {
  std::string name;  // conf, pred, ..., fixed-0.50
  EvaluationReport report;
  std::vector<RunRecord> records;
};

struct PipelineResult {
  std::vector<MethodResult> methods;
  std::vector<std::pair<std::string, ConfidenceSignals>> signals;  // query id -> conf signals
  double thinking_baseline_tok = 0.0;
  Manifest manifest;

  const MethodResult* find(const std::string& name) const;
};

/// Fixed-coefficient method name, e.g. fixed-0.50.
std::string fixed_method_name(double lambda);

/// Trains or loads the pair, estimates a coefficient per query for every method, generates
/// n_samples completions of the merge, scores them and writes manifest.json, report.<method>.json,
/// records.<method>.jsonl, pareto.csv and signals.csv under out_dir. Trained checkpoints land in
/// out_dir/models. Throws StageError naming the failed stage.
PipelineResult run_pipeline(const RunConfig& config, const std::filesystem::path& out_dir);

/// CSV with header method,tok_mean,acc,on_frontier.
std::string pareto_csv(const std::vector<MethodResult>& methods);
/// CSV with header query_id,c_i,c_t,s_ambi,s_dis,s_final,lambda.
std::string signals_csv(const std::vector<std::pair<std::string, ConfidenceSignals>>& signals);
/// CSV with header query_id,lambda,acc,cost.
std::string profiles_csv(const std::map<std::string, std::vector<PolicyPerformanceTuple>>& profiles);

/// Shortest round-trip decimal form, used in every CSV.
std::string format_number(double v);

}  // namespace interpkit
