// SPDX-License-Identifier: Apache-2.0
#include "interpkit/pipeline.hpp"

#include <algorithm>
#include <climits>
#include <set>

#include <fmt/core.h>

#include "interpkit/digest.hpp"
#include "interpkit/error.hpp"
#include "interpkit/parallel.hpp"
#include "interpkit/rng.hpp"
#include "interpkit/toy/generate.hpp"

namespace interpkit {

using nlohmann::json;

void ToySuiteConfig::validate() const {
  model.validate();
  if (levels < 1 || train_per_level < 1 || eval_per_level < 1 || profile_per_level < 1)
    throw ValidationError("toy task counts must be >= 1");
  if (batch_size < 1 || base_steps < 0 || finetune_steps < 0) throw ValidationError("toy step counts must be >= 0");
  if (!(base_lr > 0.0) || !(instruct_lr > 0.0) || !(thinking_lr > 0.0)) throw ValidationError("toy learning rates must be positive");
  if (rating_fraction < 0.0 || rating_fraction > 1.0) throw ValidationError("rating_fraction must lie in [0, 1]");
}

void to_json(json& j, const ToySuiteConfig& c) {
  j = {{"family", std::string(toy::task_family_name(c.family))},
       {"levels", c.levels},
       {"train_per_level", c.train_per_level},
       {"eval_per_level", c.eval_per_level},
       {"profile_per_level", c.profile_per_level},
       {"model", c.model},
       {"batch_size", c.batch_size},
       {"base_steps", c.base_steps},
       {"base_lr", c.base_lr},
       {"finetune_steps", c.finetune_steps},
       {"instruct_lr", c.instruct_lr},
       {"thinking_lr", c.thinking_lr},
       {"rating_fraction", c.rating_fraction},
       {"thinking_from_instruct", c.thinking_from_instruct}};
}

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> known, std::string_view where) {
  if (!j.is_object()) throw ValidationError(fmt::format("{} must be a JSON object", where));
  const std::set<std::string> names(known.begin(), known.end());
  for (const auto& [k, v] : j.items())
    if (!names.count(k)) throw ValidationError(fmt::format("unknown key '{}' in {}", k, where));
}

}  // namespace

void from_json(const json& j, ToySuiteConfig& c) {
  reject_unknown(j,
                 {"family", "levels", "train_per_level", "eval_per_level", "profile_per_level", "model", "batch_size",
                  "base_steps", "base_lr", "finetune_steps", "instruct_lr", "thinking_lr", "rating_fraction",
                  "thinking_from_instruct"},
                 "toy config");
  const ToySuiteConfig d;
  c.family = toy::parse_task_family(j.value("family", std::string(toy::task_family_name(d.family))));
  c.levels = j.value("levels", d.levels);
  c.train_per_level = j.value("train_per_level", d.train_per_level);
  c.eval_per_level = j.value("eval_per_level", d.eval_per_level);
  c.profile_per_level = j.value("profile_per_level", d.profile_per_level);
  c.model = j.contains("model") ? j.at("model").get<toy::ModelConfig>() : d.model;
  c.batch_size = j.value("batch_size", d.batch_size);
  c.base_steps = j.value("base_steps", d.base_steps);
  c.base_lr = j.value("base_lr", d.base_lr);
  c.finetune_steps = j.value("finetune_steps", d.finetune_steps);
  c.instruct_lr = j.value("instruct_lr", d.instruct_lr);
  c.thinking_lr = j.value("thinking_lr", d.thinking_lr);
  c.rating_fraction = j.value("rating_fraction", d.rating_fraction);
  c.thinking_from_instruct = j.value("thinking_from_instruct", d.thinking_from_instruct);
}

ToyData make_toy_data(const ToySuiteConfig& suite, std::uint64_t seed) {
  suite.validate();
  return {toy::make_synthetic_tasks(suite.family, suite.levels, suite.train_per_level, derive_seed(seed, "data.train"),
                                    "train"),
          toy::make_synthetic_tasks(suite.family, suite.levels, suite.eval_per_level, derive_seed(seed, "data.eval"),
                                    "eval"),
          toy::make_synthetic_tasks(suite.family, suite.levels, suite.profile_per_level,
                                    derive_seed(seed, "data.profile"), "profile")};
}

ToyPair train_toy_pair(const ToySuiteConfig& suite, const std::vector<toy::QueryRecord>& train_set,
                       std::uint64_t seed) {
  suite.validate();
  toy::TrainOptions opt;
  opt.epochs = INT_MAX;
  opt.batch_size = suite.batch_size;
  opt.rating.max_level = suite.levels;

  ToyPair pair;
  opt.style = toy::TrainStyle::Mixed;
  opt.max_steps = suite.base_steps;
  opt.lr = suite.base_lr;
  opt.seed = derive_seed(seed, "base");
  opt.rating_fraction = suite.rating_fraction;
  pair.base = toy::train(toy::init_model(suite.model, derive_seed(seed, "init")), train_set, opt);

  opt.max_steps = suite.finetune_steps;
  opt.lr = suite.instruct_lr;
  opt.style = toy::TrainStyle::Instruct;
  opt.seed = derive_seed(seed, "instruct");
  pair.instruct = toy::train(pair.base, train_set, opt);

  opt.style = toy::TrainStyle::Thinking;
  opt.lr = suite.thinking_lr;
  opt.seed = derive_seed(seed, "thinking");
  opt.rating_fraction = 0.0;
  pair.thinking = toy::train(suite.thinking_from_instruct ? pair.instruct : pair.base, train_set, opt);
  return pair;
}

namespace {

json mlp_options_json(const MlpTrainOptions& o) {
  return {{"epochs", o.epochs}, {"lr", o.lr}, {"hidden", o.hidden}, {"batch_size", o.batch_size}};
}

MlpTrainOptions mlp_options_from(const json& j, MlpTrainOptions o, std::string_view where) {
  reject_unknown(j, {"epochs", "lr", "hidden", "batch_size"}, where);
  o.epochs = j.value("epochs", o.epochs);
  o.lr = j.value("lr", o.lr);
  o.hidden = j.value("hidden", o.hidden);
  o.batch_size = j.value("batch_size", o.batch_size);
  return o;
}

const std::set<std::string> kMethods{"fixed", "conf", "pred", "pref", "prompt"};
const std::set<std::string> kPathKeys{"instruct", "thinking", "eval_queries", "profile_queries"};

}  // namespace

void RunConfig::validate() const {
  validate_grid(grid, false);
  calibration.validate();
  gen.validate();
  toy.validate();
  if (n_samples == 0) throw ValidationError("n_samples must be >= 1");
  if (!(delta_acc >= 0.0)) throw ValidationError("delta_acc must be >= 0");
  if (methods.empty()) throw ValidationError("no methods selected");
  for (const auto& m : methods)
    if (!kMethods.count(m)) throw ValidationError(fmt::format("unknown method '{}'", m));
  router.validate();
  reward.validate();
  if (rating_scale_max != 9 && rating_scale_max != 10) throw ValidationError("rating_scale_max must be 9 or 10");
  (void)ReasoningIntensity(prompt_fallback_lambda);
  if (jobs == 0) throw ValidationError("jobs must be >= 1");
  for (const auto& [k, p] : paths) {
    if (!kPathKeys.count(k)) throw ValidationError(fmt::format("unknown path key '{}'", k));
    if (!std::filesystem::exists(p)) throw IoError(fmt::format("path '{}' ({}) does not exist", p, k));
  }
  if (paths.count("instruct") != paths.count("thinking"))
    throw ValidationError("paths must name both instruct and thinking checkpoints or neither");
}

void to_json(json& j, const RunConfig& c) {
  json gen = c.gen;
  gen.erase("seed");  // generation seeds derive from the root seed
  j = {{"seed", c.seed},
       {"grid", c.grid},
       {"calibration", c.calibration},
       {"gen", gen},
       {"paths", c.paths},
       {"n_samples", c.n_samples},
       {"delta_acc", c.delta_acc},
       {"methods", c.methods},
       {"toy", c.toy},
       {"router", mlp_options_json(c.router)},
       {"reward", mlp_options_json(c.reward)},
       {"rating_scale_max", c.rating_scale_max},
       {"prompt_fallback_lambda", c.prompt_fallback_lambda},
       {"jobs", c.jobs}};
}

void from_json(const json& j, RunConfig& c) {
  reject_unknown(j,
                 {"seed", "grid", "calibration", "gen", "paths", "n_samples", "delta_acc", "methods", "toy", "router",
                  "reward", "rating_scale_max", "prompt_fallback_lambda", "jobs"},
                 "run config");
  const RunConfig d;
  c.seed = j.value("seed", d.seed);
  c.grid = j.value("grid", d.grid);
  c.calibration = j.contains("calibration") ? j.at("calibration").get<CalibrationParams>() : d.calibration;
  c.gen = j.contains("gen") ? j.at("gen").get<toy::GenerationParams>() : d.gen;
  c.paths = j.value("paths", d.paths);
  c.n_samples = j.value("n_samples", d.n_samples);
  c.delta_acc = j.value("delta_acc", d.delta_acc);
  c.methods = j.value("methods", d.methods);
  c.toy = j.contains("toy") ? j.at("toy").get<ToySuiteConfig>() : d.toy;
  c.router = j.contains("router") ? mlp_options_from(j.at("router"), d.router, "router config") : d.router;
  c.reward = j.contains("reward") ? mlp_options_from(j.at("reward"), d.reward, "reward config") : d.reward;
  c.rating_scale_max = j.value("rating_scale_max", d.rating_scale_max);
  c.prompt_fallback_lambda = j.value("prompt_fallback_lambda", d.prompt_fallback_lambda);
  c.jobs = j.value("jobs", d.jobs);
}

RunConfig load_run_config(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text).get<RunConfig>();
  } catch (const json::exception& e) {
    throw ValidationError(fmt::format("config {}: {}", path.string(), e.what()));
  }
}

std::string config_hash(const RunConfig& config) {
  json j = config;
  j.erase("jobs");
  return sha256_hex(j.dump());
}

json Manifest::to_json() const {
  return {{"toolkit_version", kToolkitVersion}, {"command", command}, {"config_hash", config_hash},
          {"seed", seed},                       {"inputs", inputs},   {"outputs", outputs}};
}

void write_artifact(const std::filesystem::path& dir, const std::string& name, const std::string& bytes,
                    Manifest& manifest) {
  write_file(dir / name, bytes);
  manifest.outputs[name] = sha256_hex(bytes);
}

const MethodResult* PipelineResult::find(const std::string& name) const {
  for (const auto& m : methods)
    if (m.name == name) return &m;
  return nullptr;
}

std::string fixed_method_name(double lambda) { return fmt::format("fixed-{:.2f}", lambda); }

std::string format_number(double v) { return fmt::format("{}", v); }

std::string pareto_csv(const std::vector<MethodResult>& methods) {
  std::vector<CostAcc> pts;
  for (const auto& m : methods) pts.push_back({m.report.tok_mean, m.report.acc});
  const auto frontier = pts.empty() ? std::vector<CostAcc>{} : pareto_frontier(pts);
  std::string out = "method,tok_mean,acc,on_frontier\n";
  for (std::size_t i = 0; i < methods.size(); ++i) {
    const bool on = std::find(frontier.begin(), frontier.end(), pts[i]) != frontier.end();
    out += fmt::format("{},{},{},{}\n", methods[i].name, format_number(pts[i].cost), format_number(pts[i].acc),
                       on ? 1 : 0);
  }
  return out;
}

std::string signals_csv(const std::vector<std::pair<std::string, ConfidenceSignals>>& signals) {
  std::string out = "query_id,c_i,c_t,s_ambi,s_dis,s_final,lambda\n";
  for (const auto& [id, s] : signals)
    out += fmt::format("{},{},{},{},{},{},{}\n", id, format_number(s.c_instruct), format_number(s.c_thinking),
                       format_number(s.s_ambi), format_number(s.s_dis), format_number(s.s_final),
                       format_number(s.lambda.value()));
  return out;
}

std::string profiles_csv(const std::map<std::string, std::vector<PolicyPerformanceTuple>>& profiles) {
  std::string out = "query_id,lambda,acc,cost\n";
  for (const auto& [id, ts] : profiles)
    for (const auto& t : ts)
      out += fmt::format("{},{},{},{}\n", id, format_number(t.lambda.value()), format_number(t.acc),
                         format_number(t.cost));
  return out;
}

namespace {

template <class Fn>
auto stage(std::string_view name, Fn&& fn) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(fmt::format("stage '{}': {}", name, e.what()));
  }
}

/// Runs fn(i) for every query, tagging failures with the stage and query id.
template <class Fn>
void per_query(std::string_view name, const std::vector<toy::QueryRecord>& queries, std::size_t jobs, Fn&& fn) {
  parallel_for(queries.size(), jobs, [&](std::size_t i) {
    try {
      fn(i);
    } catch (const Error& e) {
      throw StageError(fmt::format("stage '{}', query {}: {}", name, queries[i].query_id, e.what()));
    }
  });
}

class Evaluator {
 public:
  Evaluator(toy::MergedModels& models, const std::vector<toy::QueryRecord>& queries, const RunConfig& config)
      : models_(models), queries_(queries), config_(config) {
    gen_ = config.gen;
    gen_.seed = derive_seed(config.seed, "generate");
  }

  std::vector<RunRecord> run(const std::string& method, const std::vector<double>& lambdas) const {
    std::vector<std::vector<RunRecord>> per(queries_.size());
    per_query(method, queries_, config_.jobs, [&](std::size_t i) {
      const auto& q = queries_[i];
      const ReasoningIntensity lambda = ReasoningIntensity(lambdas[i]).rounded(2);
      const auto model = models_.at(lambda);
      for (std::size_t j = 0; j < config_.n_samples; ++j) {
        toy::GenerationParams p = gen_;
        p.seed = derive_seed(gen_.seed, q.query_id, j);
        const auto g = toy::generate(*model, q.prompt_tokens, p);
        per[i].push_back({q.query_id, method, lambda.value(), answer_matches(g.completion, q.gold_answer),
                          g.completion.size(),
                          std::find(g.completion.begin(), g.completion.end(), toy::kThinkClose) != g.completion.end(),
                          q.difficulty_level});
      }
    });
    std::vector<RunRecord> out;
    for (auto& v : per) out.insert(out.end(), v.begin(), v.end());
    return out;
  }

 private:
  toy::MergedModels& models_;
  const std::vector<toy::QueryRecord>& queries_;
  const RunConfig& config_;
  toy::GenerationParams gen_;
};

std::string dump(const json& j) { return j.dump(2) + "\n"; }

}  // namespace

PipelineResult run_pipeline(const RunConfig& config, const std::filesystem::path& out_dir) {
  config.validate();
  std::filesystem::create_directories(out_dir);
  PipelineResult result;
  Manifest& manifest = result.manifest;
  manifest.command = "pipeline";
  manifest.seed = config.seed;
  manifest.config_hash = config_hash(config);
  auto has = [&](const std::string& m) { return std::find(config.methods.begin(), config.methods.end(), m) != config.methods.end(); };
  auto input = [&](const std::string& key) {
    const auto& p = config.paths.at(key);
    manifest.inputs[key] = sha256_file(p);
    return p;
  };

  // data
  ToyData data = stage("data", [&] {
    ToyData d = make_toy_data(config.toy, config.seed);
    if (config.paths.count("eval_queries")) d.eval = toy::load_corpus(input("eval_queries"));
    if (config.paths.count("profile_queries")) d.profile = toy::load_corpus(input("profile_queries"));
    if (d.eval.empty()) throw ValidationError("evaluation query set is empty");
    return d;
  });

  // models
  auto [instruct, thinking] = stage("models", [&] {
    if (config.paths.count("instruct"))
      return std::pair{load_archive(input("instruct")), load_archive(input("thinking"))};
    ToyPair pair = train_toy_pair(config.toy, data.train, derive_seed(config.seed, "train"));
    write_artifact(out_dir, "models/base.ika", serialize_archive(pair.base), manifest);
    write_artifact(out_dir, "models/instruct.ika", serialize_archive(pair.instruct), manifest);
    write_artifact(out_dir, "models/thinking.ika", serialize_archive(pair.thinking), manifest);
    return std::pair{std::move(pair.instruct), std::move(pair.thinking)};
  });
  auto owned = stage("merge", [&] { return std::make_unique<toy::MergedModels>(instruct, thinking); });
  toy::MergedModels& models = *owned;
  const auto instruct_model = models.at(0.0);
  const auto thinking_model = models.at(1.0);
  const Evaluator evaluator(models, data.eval, config);
  const std::size_t n_eval = data.eval.size();

  // the thinking endpoint defines the compression-rate baseline
  const auto baseline_records = evaluator.run(fixed_method_name(1.0), std::vector<double>(n_eval, 1.0));
  result.thinking_baseline_tok = stage("baseline", [&] {
    const auto rep = score_run(baseline_records, 1.0);
    if (!(rep.tok_mean > 0.0)) throw ValidationError("thinking endpoint produced no tokens");
    return rep.tok_mean;
  });

  auto add_method = [&](const std::string& name, const std::vector<double>& lambdas) {
    MethodResult m;
    m.name = name;
    m.records = name == fixed_method_name(1.0) ? baseline_records : evaluator.run(name, lambdas);
    m.report = stage(name, [&] { return score_run(m.records, result.thinking_baseline_tok); });
    m.report.method = name;
    result.methods.push_back(std::move(m));
  };

  if (has("fixed"))
    for (double l : config.grid) add_method(fixed_method_name(l), std::vector<double>(n_eval, l));

  if (has("conf")) {
    std::vector<ConfidenceSignals> sig(n_eval);
    toy::GenerationParams probe = config.gen;
    per_query("conf", data.eval, config.jobs, [&](std::size_t i) {
      sig[i] = estimate_lambda_conf(*instruct_model, *thinking_model, data.eval[i], config.calibration, probe);
    });
    std::vector<double> lambdas;
    for (std::size_t i = 0; i < n_eval; ++i) {
      result.signals.emplace_back(data.eval[i].query_id, sig[i]);
      lambdas.push_back(sig[i].lambda.value());
    }
    add_method("conf", lambdas);
    write_artifact(out_dir, "signals.csv", signals_csv(result.signals), manifest);
  }

  if (has("pred") || has("pref")) {
    const auto& prof = data.profile;
    std::vector<std::vector<PolicyPerformanceTuple>> tuples(prof.size());
    std::vector<Features> prof_emb(prof.size());
    toy::GenerationParams pg = config.gen;
    pg.seed = derive_seed(config.seed, "profile");
    per_query("profile", prof, config.jobs, [&](std::size_t i) {
      tuples[i] = profile_query(prof[i], models, config.grid, config.n_samples, pg);
      prof_emb[i] = query_embedding(*instruct_model, prof[i]);
    });
    std::map<std::string, std::vector<PolicyPerformanceTuple>> by_query;
    EmbeddingMap emb_map;
    for (std::size_t i = 0; i < prof.size(); ++i) {
      by_query[prof[i].query_id] = tuples[i];
      emb_map[prof[i].query_id] = prof_emb[i];
    }
    write_artifact(out_dir, "profiles.csv", profiles_csv(by_query), manifest);

    std::vector<Features> eval_emb(n_eval);
    per_query("embed", data.eval, config.jobs,
              [&](std::size_t i) { eval_emb[i] = query_embedding(*instruct_model, data.eval[i]); });

    if (has("pred")) {
      const RouterModel router = stage("train-router", [&] {
        std::vector<RouterSample> ds;
        for (std::size_t i = 0; i < prof.size(); ++i) ds.emplace_back(prof_emb[i], target_lambda(tuples[i]).value());
        MlpTrainOptions o = config.router;
        o.seed = derive_seed(config.seed, "router");
        return train_router(ds, o);
      });
      write_artifact(out_dir, "router.ika", serialize_archive(router.to_archive()), manifest);
      std::vector<double> lambdas;
      for (const auto& e : eval_emb) lambdas.push_back(router.predict(e));
      add_method("pred", lambdas);
    }
    if (has("pref")) {
      const auto pairs = build_preferences(by_query, config.delta_acc);
      std::string jsonl;
      for (const auto& p : pairs) jsonl += json(p).dump() + "\n";
      write_artifact(out_dir, "preferences.jsonl", jsonl, manifest);
      const RewardModel reward = stage("train-reward", [&] {
        MlpTrainOptions o = config.reward;
        o.seed = derive_seed(config.seed, "reward");
        return train_reward(pairs, emb_map, o);
      });
      write_artifact(out_dir, "reward.ika", serialize_archive(reward.to_archive()), manifest);
      std::vector<double> lambdas;
      for (const auto& e : eval_emb) lambdas.push_back(estimate_lambda_pref(reward, e, config.grid).value());
      add_method("pref", lambdas);
    }
  }

  if (has("prompt")) {
    std::vector<double> lambdas(n_eval);
    per_query("prompt", data.eval, config.jobs, [&](std::size_t i) {
      try {
        lambdas[i] = estimate_lambda_prompt(*instruct_model, data.eval[i], toy::RatingTemplate{},
                                            config.rating_scale_max)
                         .value();
      } catch (const RatingParseError&) {
        lambdas[i] = config.prompt_fallback_lambda;
      }
    });
    add_method("prompt", lambdas);
  }

  for (const auto& m : result.methods) {
    json rep = m.report.to_json();
    rep["baseline_tok"] = result.thinking_baseline_tok;
    write_artifact(out_dir, "report." + m.name + ".json", dump(rep), manifest);
    write_artifact(out_dir, "records." + m.name + ".jsonl", records_to_jsonl(m.records), manifest);
  }
  write_artifact(out_dir, "pareto.csv", pareto_csv(result.methods), manifest);
  json mj = manifest.to_json();
  mj["config"] = config;
  mj["config"].erase("jobs");
  write_file(out_dir / "manifest.json", dump(mj));
  return result;
}

}  // namespace interpkit
