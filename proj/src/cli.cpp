// SPDX-License-Identifier: Apache-2.0
#include "interpkit/cli.hpp"

#include <charconv>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include "interpkit/archive.hpp"
#include "interpkit/digest.hpp"
#include "interpkit/error.hpp"
#include "interpkit/eval.hpp"
#include "interpkit/interp.hpp"
#include "interpkit/lambda_conf.hpp"
#include "interpkit/lambda_train.hpp"
#include "interpkit/parallel.hpp"
#include "interpkit/pipeline.hpp"
#include "interpkit/theory.hpp"
#include "interpkit/toy/generate.hpp"
#include "interpkit/toy/merged.hpp"
#include "interpkit/toy/tasks.hpp"
#include "interpkit/toy/trainer.hpp"

namespace interpkit {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

/// Bad option combination detected after parsing; exits like a parse error.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Records the inputs and outputs of a single-output command and writes <out>.manifest.json.
class CommandManifest {
 public:
  CommandManifest(std::string command, json args, std::uint64_t seed) : args_(std::move(args)) {
    m_.command = std::move(command);
    m_.seed = seed;
    m_.config_hash = sha256_hex(args_.dump());
  }

  std::string input(const std::string& key, const std::string& path) {
    m_.inputs[key] = sha256_file(path);
    return path;
  }

  void write_output(const fs::path& out, const std::string& bytes) {
    write_file(out, bytes);
    m_.outputs[out.filename().string()] = sha256_hex(bytes);
    json j = m_.to_json();
    j["args"] = args_;
    write_file(fs::path(out.string() + ".manifest.json"), j.dump(2) + "\n");
  }

 private:
  json args_;
  Manifest m_;
};

std::vector<double> parse_grid_arg(const std::string& text) {
  // either a point count ("21") or a comma list ("0,0.5,1")
  if (text.find(',') == std::string::npos) {
    std::size_t n = 0;
    const auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), n);
    if (ec == std::errc{} && p == text.data() + text.size()) {
      if (n < 2) throw ValidationError("grid needs at least 2 points");
      return even_grid(n);
    }
  }
  std::vector<double> grid;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      grid.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ValidationError(fmt::format("bad grid entry '{}'", item));
    }
  }
  return grid;
}

toy::Tokens parse_tokens(const std::string& text) {
  toy::Tokens out;
  std::stringstream ss(text);
  std::string item;
  while (ss >> item) {
    for (char& c : item)
      if (c == ',') c = ' ';
    std::stringstream inner(item);
    int t = 0;
    while (inner >> t) out.push_back(t);
  }
  return out;
}

std::map<std::string, std::vector<PolicyPerformanceTuple>> read_profiles(const std::string& path) {
  std::stringstream in(read_file(path));
  std::string line;
  std::getline(in, line);
  if (line != "query_id,lambda,acc,cost") throw ValidationError(fmt::format("{}: not a profiles CSV", path));
  std::map<std::string, std::vector<PolicyPerformanceTuple>> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::string id, l, a, c;
    if (!std::getline(ls, id, ',') || !std::getline(ls, l, ',') || !std::getline(ls, a, ',') || !std::getline(ls, c))
      throw ValidationError(fmt::format("{} line {}: expected 4 columns", path, lineno));
    try {
      out[id].push_back({ReasoningIntensity(std::stod(l)), std::stod(a), std::stod(c), 0});
    } catch (const std::invalid_argument&) {
      throw ValidationError(fmt::format("{} line {}: bad number", path, lineno));
    }
  }
  return out;
}

EmbeddingMap embed_queries(const toy::Transformer& model, const std::vector<toy::QueryRecord>& queries) {
  EmbeddingMap out;
  for (const auto& q : queries) out[q.query_id] = query_embedding(model, q);
  return out;
}

toy::GenerationParams gen_from(double temperature, double top_p, int max_new, std::uint64_t seed, bool argmax) {
  toy::GenerationParams p;
  p.temperature = temperature;
  p.top_p = top_p;
  p.max_new_tokens = max_new;
  p.seed = seed;
  p.mode = argmax ? toy::DecodeMode::Argmax : toy::DecodeMode::Sample;
  p.validate();
  return p;
}

struct GenOpts {
  double temperature = 0.6;
  double top_p = 0.95;
  int max_new_tokens = 24;
  std::uint64_t seed = 0;
  bool argmax = false;

  void add(CLI::App* app) {
    app->add_option("--temperature", temperature, "sampling temperature")->capture_default_str();
    app->add_option("--top-p", top_p, "nucleus mass")->capture_default_str();
    app->add_option("--max-new-tokens", max_new_tokens, "decode budget")->capture_default_str();
    app->add_option("--seed", seed, "root seed")->capture_default_str();
    app->add_flag("--argmax", argmax, "greedy decoding");
  }
  toy::GenerationParams params() const { return gen_from(temperature, top_p, max_new_tokens, seed, argmax); }
  json to_json() const {
    return {{"temperature", temperature}, {"top_p", top_p}, {"max_new_tokens", max_new_tokens}, {"argmax", argmax}};
  }
};

}  // namespace

int run_command(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dynamic interpolation of instruct and thinking checkpoints, with toy models to test it on"};
  app.set_version_flag("--version", kToolkitVersion);
  app.require_subcommand(1);
  std::function<void()> action;

  // merge
  std::string instruct, thinking, out_path;
  double lambda = 0.0;
  auto* merge = app.add_subcommand("merge", "interpolate two aligned archives");
  merge->add_option("--instruct", instruct)->required();
  merge->add_option("--thinking", thinking)->required();
  merge->add_option("--lambda", lambda, "weight of the thinking archive")->required();
  merge->add_option("--out", out_path)->required();
  merge->callback([&] {
    action = [&] {
      const ReasoningIntensity l(lambda);
      CommandManifest cm("merge", {{"lambda", lambda}}, 0);
      const auto a = load_archive(cm.input("instruct", instruct));
      const auto b = load_archive(cm.input("thinking", thinking));
      cm.write_output(out_path, serialize_archive(interpolate(a, b, l)));
    };
  });

  // diagnose
  auto* diagnose = app.add_subcommand("diagnose", "per-layer cosine / L2 connectivity report");
  diagnose->add_option("--instruct", instruct)->required();
  diagnose->add_option("--thinking", thinking)->required();
  diagnose->add_option("--out", out_path)->required();
  diagnose->callback([&] {
    action = [&] {
      CommandManifest cm("diagnose", json::object(), 0);
      const auto a = load_archive(cm.input("instruct", instruct));
      const auto b = load_archive(cm.input("thinking", thinking));
      cm.write_output(out_path, diagnose_connectivity(a, b).to_json().dump(2) + "\n");
    };
  });

  // scan
  std::string grid_arg = "21", task_path, style_name = "mixed";
  auto* scan = app.add_subcommand("scan", "loss along the interpolation path");
  scan->add_option("--instruct", instruct)->required();
  scan->add_option("--thinking", thinking)->required();
  scan->add_option("--grid", grid_arg, "point count or comma list")->capture_default_str();
  scan->add_option("--task", task_path, "query corpus (JSON lines)")->required();
  scan->add_option("--style", style_name, "trace style of the loss: instruct|thinking|mixed")->capture_default_str();
  scan->add_option("--out", out_path)->required();
  scan->callback([&] {
    action = [&] {
      const auto grid = parse_grid_arg(grid_arg);
      const auto style = toy::parse_train_style(style_name);
      CommandManifest cm("scan", {{"grid", grid}, {"style", style_name}}, 0);
      const auto a = load_archive(cm.input("instruct", instruct));
      const auto b = load_archive(cm.input("thinking", thinking));
      const auto tasks = toy::load_corpus(cm.input("task", task_path));
      const auto result = scan_barrier(a, b, grid, [&](const NamedTensorArchive& m) {
        return toy::corpus_loss(toy::Transformer::from_archive(m), tasks, style);
      });
      cm.write_output(out_path, result.to_csv());
    };
  });

  // toy
  auto* toy_cmd = app.add_subcommand("toy", "toy transformer utilities");
  toy_cmd->require_subcommand(1);
  toy::ModelConfig mc;
  std::uint64_t seed = 0;
  auto* toy_init = toy_cmd->add_subcommand("init", "random initial weights");
  toy_init->add_option("--vocab-size", mc.vocab_size)->capture_default_str();
  toy_init->add_option("--d-model", mc.d_model)->capture_default_str();
  toy_init->add_option("--n-heads", mc.n_heads)->capture_default_str();
  toy_init->add_option("--n-layers", mc.n_layers)->capture_default_str();
  toy_init->add_option("--max-seq-len", mc.max_seq_len)->capture_default_str();
  toy_init->add_option("--seed", seed)->capture_default_str();
  toy_init->add_option("--out", out_path)->required();
  toy_init->callback([&] {
    action = [&] {
      CommandManifest cm("toy init", {{"config", mc}}, seed);
      cm.write_output(out_path, serialize_archive(toy::init_model(mc, seed)));
    };
  });

  std::string base_path, corpus_path, optimizer = "sgd";
  int epochs = 1, batch_size = 32, max_steps = -1, levels = 3;
  double lr = 0.1, rating_fraction = 0.0, clip = 1.0;
  auto* toy_train = toy_cmd->add_subcommand("train", "fine-tune on instruct, thinking or mixed traces");
  toy_train->add_option("--base", base_path)->required();
  toy_train->add_option("--corpus", corpus_path)->required();
  toy_train->add_option("--style", style_name)->required();
  toy_train->add_option("--epochs", epochs)->capture_default_str();
  toy_train->add_option("--lr", lr)->capture_default_str();
  toy_train->add_option("--seed", seed)->capture_default_str();
  toy_train->add_option("--batch-size", batch_size)->capture_default_str();
  toy_train->add_option("--max-steps", max_steps, "stop after this many updates (-1: no limit)")->capture_default_str();
  toy_train->add_option("--optimizer", optimizer, "sgd|adam")->capture_default_str();
  toy_train->add_option("--clip-norm", clip)->capture_default_str();
  toy_train->add_option("--rating-fraction", rating_fraction, "share of records adding a rating trace")
      ->capture_default_str();
  toy_train->add_option("--levels", levels, "highest difficulty level, for the rating scale")->capture_default_str();
  toy_train->add_option("--out", out_path)->required();
  toy_train->callback([&] {
    action = [&] {
      toy::TrainOptions o;
      o.style = toy::parse_train_style(style_name);
      o.epochs = epochs;
      o.lr = lr;
      o.seed = seed;
      o.batch_size = batch_size;
      if (max_steps >= 0) o.max_steps = max_steps;
      o.optimizer = toy::parse_optimizer(optimizer);
      o.clip_norm = clip;
      o.rating_fraction = rating_fraction;
      o.rating.max_level = levels;
      CommandManifest cm("toy train",
                         {{"style", style_name}, {"epochs", epochs}, {"lr", lr}, {"batch_size", batch_size},
                          {"max_steps", max_steps}, {"optimizer", optimizer}, {"clip_norm", clip},
                          {"rating_fraction", rating_fraction}, {"levels", levels}},
                         seed);
      const auto base = load_archive(cm.input("base", base_path));
      const auto corpus = toy::load_corpus(cm.input("corpus", corpus_path));
      cm.write_output(out_path, serialize_archive(toy::train(base, corpus, o)));
    };
  });

  std::string model_path, prompt_text, queries_path;
  GenOpts gen;
  auto* toy_gen = toy_cmd->add_subcommand("generate", "decode from a prompt or every query of a corpus");
  toy_gen->add_option("--model", model_path)->required();
  auto* prompt_opt = toy_gen->add_option("--prompt", prompt_text, "token ids separated by spaces or commas");
  toy_gen->add_option("--queries", queries_path, "query corpus (JSON lines)")->excludes(prompt_opt);
  gen.add(toy_gen);
  toy_gen->add_option("--out", out_path, "JSON lines output (stdout when omitted)");
  toy_gen->callback([&] {
    action = [&] {
      if (prompt_text.empty() && queries_path.empty()) throw UsageError("give --prompt or --queries");
      CommandManifest cm("toy generate", gen.to_json(), gen.seed);
      const auto model = toy::Transformer::from_archive(load_archive(cm.input("model", model_path)));
      std::vector<toy::QueryRecord> qs;
      if (!queries_path.empty())
        qs = toy::load_corpus(cm.input("queries", queries_path));
      else
        qs.push_back({"prompt", parse_tokens(prompt_text), {}, 1, {}});
      std::string lines;
      for (const auto& q : qs) {
        auto p = gen.params();
        p.seed = derive_seed(gen.seed, q.query_id);
        const auto g = toy::generate(model, q.prompt_tokens, p);
        lines += json{{"query_id", q.query_id},
                      {"completion", g.completion},
                      {"text", toy::format_tokens(g.completion)},
                      {"stepwise_max_probs", g.stepwise_max_probs},
                      {"stopped_on_eos", g.stopped_on_eos}}
                     .dump() +
                 "\n";
      }
      if (out_path.empty())
        out << lines;
      else
        cm.write_output(out_path, lines);
    };
  });

  std::string family = "modular-add";
  int per_level = 10;
  auto* toy_data = toy_cmd->add_subcommand("make-data", "synthetic arithmetic corpus");
  toy_data->add_option("--family", family, "modular-add|multi-digit-add")->capture_default_str();
  toy_data->add_option("--levels", levels)->capture_default_str();
  toy_data->add_option("--per-level", per_level)->capture_default_str();
  toy_data->add_option("--seed", seed)->capture_default_str();
  toy_data->add_option("--out", out_path)->required();
  toy_data->callback([&] {
    action = [&] {
      CommandManifest cm("toy make-data", {{"family", family}, {"levels", levels}, {"per_level", per_level}}, seed);
      const auto corpus = toy::make_synthetic_tasks(toy::parse_task_family(family), levels, per_level, seed);
      cm.write_output(out_path, toy::corpus_to_jsonl(corpus));
    };
  });

  // profile
  std::string grid_list = "0,0.3,0.5,0.7,1";
  std::size_t n_samples = 8, jobs = 1;
  auto* profile = app.add_subcommand("profile", "accuracy and cost of every query at every grid coefficient");
  profile->add_option("--instruct", instruct)->required();
  profile->add_option("--thinking", thinking)->required();
  profile->add_option("--queries", queries_path)->required();
  profile->add_option("--grid", grid_list)->capture_default_str();
  profile->add_option("--n-samples", n_samples)->capture_default_str();
  profile->add_option("--jobs", jobs)->capture_default_str();
  gen.add(profile);
  profile->add_option("--out", out_path)->required();
  profile->callback([&] {
    action = [&] {
      const auto grid = parse_grid_arg(grid_list);
      CommandManifest cm("profile", {{"grid", grid}, {"n_samples", n_samples}, {"gen", gen.to_json()}}, gen.seed);
      toy::MergedModels models(load_archive(cm.input("instruct", instruct)),
                               load_archive(cm.input("thinking", thinking)));
      const auto qs = toy::load_corpus(cm.input("queries", queries_path));
      std::vector<std::vector<PolicyPerformanceTuple>> tuples(qs.size());
      const auto params = gen.params();
      parallel_for(qs.size(), jobs, [&](std::size_t i) { tuples[i] = profile_query(qs[i], models, grid, n_samples, params); });
      std::map<std::string, std::vector<PolicyPerformanceTuple>> by;
      for (std::size_t i = 0; i < qs.size(); ++i) by[qs[i].query_id] = tuples[i];
      cm.write_output(out_path, profiles_csv(by));
    };
  });

  // train-router / train-reward
  std::string profiles_path, pairs_out;
  MlpTrainOptions mlp;
  double delta_acc = 0.05;
  auto add_mlp = [&](CLI::App* a) {
    a->add_option("--profiles", profiles_path, "profiles CSV")->required();
    a->add_option("--instruct", instruct, "instruct archive used for query embeddings")->required();
    a->add_option("--queries", queries_path, "the profiled queries")->required();
    a->add_option("--epochs", mlp.epochs)->capture_default_str();
    a->add_option("--lr", mlp.lr)->capture_default_str();
    a->add_option("--hidden", mlp.hidden)->capture_default_str();
    a->add_option("--batch-size", mlp.batch_size)->capture_default_str();
    a->add_option("--seed", mlp.seed)->capture_default_str();
    a->add_option("--out", out_path)->required();
  };
  auto mlp_json = [&] {
    return json{{"epochs", mlp.epochs}, {"lr", mlp.lr}, {"hidden", mlp.hidden}, {"batch_size", mlp.batch_size}};
  };
  auto* train_router_cmd = app.add_subcommand("train-router", "regress the best coefficient from query embeddings");
  add_mlp(train_router_cmd);
  train_router_cmd->callback([&] {
    action = [&] {
      CommandManifest cm("train-router", mlp_json(), mlp.seed);
      const auto profiles = read_profiles(cm.input("profiles", profiles_path));
      const auto model = toy::Transformer::from_archive(load_archive(cm.input("instruct", instruct)));
      const auto emb = embed_queries(model, toy::load_corpus(cm.input("queries", queries_path)));
      std::vector<RouterSample> ds;
      for (const auto& [id, ts] : profiles) {
        auto it = emb.find(id);
        if (it == emb.end()) throw ValidationError(fmt::format("profiled query {} not in --queries", id));
        ds.emplace_back(it->second, target_lambda(ts).value());
      }
      cm.write_output(out_path, serialize_archive(train_router(ds, mlp).to_archive()));
    };
  });
  auto* train_reward_cmd = app.add_subcommand("train-reward", "preference pairs and a pairwise reward model");
  add_mlp(train_reward_cmd);
  train_reward_cmd->add_option("--delta-acc", delta_acc)->capture_default_str();
  train_reward_cmd->add_option("--pairs-out", pairs_out, "also write the preference pairs (JSON lines)");
  train_reward_cmd->callback([&] {
    action = [&] {
      json args = mlp_json();
      args["delta_acc"] = delta_acc;
      CommandManifest cm("train-reward", args, mlp.seed);
      const auto profiles = read_profiles(cm.input("profiles", profiles_path));
      const auto model = toy::Transformer::from_archive(load_archive(cm.input("instruct", instruct)));
      const auto emb = embed_queries(model, toy::load_corpus(cm.input("queries", queries_path)));
      const auto pairs = build_preferences(profiles, delta_acc);
      if (!pairs_out.empty()) {
        std::string jsonl;
        for (const auto& p : pairs) jsonl += json(p).dump() + "\n";
        write_file(pairs_out, jsonl);
      }
      cm.write_output(out_path, serialize_archive(train_reward(pairs, emb, mlp).to_archive()));
    };
  });

  // estimate
  std::string method, router_path, reward_path;
  CalibrationParams calib;
  int scale_max = 10;
  double fallback = 0.5;
  auto* estimate = app.add_subcommand("estimate", "per-query reasoning intensity");
  estimate->add_option("--method", method, "conf|pred|pref|prompt")->required();
  estimate->add_option("--instruct", instruct)->required();
  estimate->add_option("--thinking", thinking, "required by conf");
  estimate->add_option("--queries", queries_path)->required();
  estimate->add_option("--router", router_path, "required by pred");
  estimate->add_option("--reward", reward_path, "required by pref");
  estimate->add_option("--grid", grid_list, "pref scoring grid")->capture_default_str();
  estimate->add_option("--mu", calib.mu)->capture_default_str();
  estimate->add_option("--tau", calib.tau)->capture_default_str();
  estimate->add_option("--scale-max", scale_max, "prompt rating scale")->capture_default_str();
  estimate->add_option("--fallback-lambda", fallback, "prompt estimate for an unparsable rating")->capture_default_str();
  estimate->add_option("--max-new-tokens", gen.max_new_tokens, "confidence probe budget")->capture_default_str();
  estimate->add_option("--out", out_path)->required();
  estimate->callback([&] {
    action = [&] {
      calib.validate();
      CommandManifest cm("estimate",
                         {{"method", method}, {"mu", calib.mu}, {"tau", calib.tau}, {"grid", grid_list},
                          {"scale_max", scale_max}, {"fallback", fallback}, {"max_new_tokens", gen.max_new_tokens}},
                         0);
      const auto im = toy::Transformer::from_archive(load_archive(cm.input("instruct", instruct)));
      const auto qs = toy::load_corpus(cm.input("queries", queries_path));
      std::string csv;
      if (method == "conf") {
        if (thinking.empty()) throw UsageError("--method conf needs --thinking");
        const auto ta = load_archive(cm.input("thinking", thinking));
        require_aligned(im.to_archive(), ta);
        const auto tm = toy::Transformer::from_archive(ta);
        std::vector<std::pair<std::string, ConfidenceSignals>> sig;
        for (const auto& q : qs) sig.emplace_back(q.query_id, estimate_lambda_conf(im, tm, q, calib, gen.params()));
        csv = signals_csv(sig);
      } else {
        csv = "query_id,lambda\n";
        std::optional<RouterModel> router;
        std::optional<RewardModel> reward;
        if (method == "pred") {
          if (router_path.empty()) throw UsageError("--method pred needs --router");
          router = RouterModel::from_archive(load_archive(cm.input("router", router_path)));
        } else if (method == "pref") {
          if (reward_path.empty()) throw UsageError("--method pref needs --reward");
          reward = RewardModel::from_archive(load_archive(cm.input("reward", reward_path)));
        } else if (method != "prompt") {
          throw UsageError(fmt::format("unknown method '{}'", method));
        }
        const auto grid = parse_grid_arg(grid_list);
        for (const auto& q : qs) {
          double l = 0.0;
          if (router) l = router->predict(query_embedding(im, q));
          else if (reward) l = estimate_lambda_pref(*reward, query_embedding(im, q), grid).value();
          else {
            try {
              l = estimate_lambda_prompt(im, q, toy::RatingTemplate{}, scale_max).value();
            } catch (const RatingParseError&) {
              l = fallback;
            }
          }
          csv += fmt::format("{},{}\n", q.query_id, format_number(l));
        }
      }
      cm.write_output(out_path, csv);
    };
  });

  // eval
  std::string records_path, pareto_out;
  double baseline_tok = 0.0;
  auto* eval_cmd = app.add_subcommand("eval", "score run records");
  eval_cmd->add_option("--records", records_path, "run records (JSON lines)")->required();
  eval_cmd->add_option("--baseline-tok", baseline_tok, "thinking model mean tokens")->required();
  eval_cmd->add_option("--pareto-out", pareto_out, "also write the frontier as CSV cost,acc");
  eval_cmd->add_option("--out", out_path)->required();
  eval_cmd->callback([&] {
    action = [&] {
      CommandManifest cm("eval", {{"baseline_tok", baseline_tok}}, 0);
      const auto records = records_from_jsonl(read_file(cm.input("records", records_path)));
      const auto rep = score_run(records, baseline_tok);
      if (!pareto_out.empty()) {
        std::string csv = "cost,acc\n";
        for (const auto& p : rep.pareto_points) csv += fmt::format("{},{}\n", format_number(p.cost), format_number(p.acc));
        write_file(pareto_out, csv);
      }
      cm.write_output(out_path, rep.to_json().dump(2) + "\n");
    };
  });

  // verify
  std::string check;
  auto* verify = app.add_subcommand("verify", "theory checks on a checkpoint pair");
  verify->add_option("--check", check, "lmc|monotonic|continuity")->required();
  verify->add_option("--instruct", instruct)->required();
  verify->add_option("--thinking", thinking)->required();
  verify->add_option("--queries", queries_path, "task set / probe prompts")->required();
  verify->add_option("--grid", grid_arg, "point count or comma list (default 21 / 5 / 11 by check)");
  verify->add_option("--n-samples", n_samples)->capture_default_str();
  gen.add(verify);
  verify->add_option("--out", out_path)->required();
  verify->callback([&] {
    action = [&] {
      const bool explicit_grid = verify->count("--grid") > 0;
      CommandManifest cm("verify", {{"check", check}, {"grid", explicit_grid ? grid_arg : ""}, {"n_samples", n_samples},
                                    {"gen", gen.to_json()}},
                         gen.seed);
      const auto a = load_archive(cm.input("instruct", instruct));
      const auto b = load_archive(cm.input("thinking", thinking));
      const auto qs = toy::load_corpus(cm.input("queries", queries_path));
      json report;
      if (check == "lmc") {
        const auto grid = explicit_grid ? parse_grid_arg(grid_arg) : even_grid(21);
        report = check_lmc(a, b, grid, [&](const NamedTensorArchive& m) {
                   return toy::corpus_loss(toy::Transformer::from_archive(m), qs, toy::TrainStyle::Mixed);
                 }).to_json();
      } else if (check == "monotonic") {
        toy::MergedModels models(a, b);
        const auto grid = explicit_grid ? parse_grid_arg(grid_arg) : default_lambda_grid();
        report = check_monotonicity(models, grid, qs, n_samples, gen.params()).to_json();
      } else if (check == "continuity") {
        toy::MergedModels models(a, b);
        const auto grid = explicit_grid ? parse_grid_arg(grid_arg) : even_grid(11);
        std::vector<toy::Tokens> probes;
        for (const auto& q : qs) {
          probes.push_back(q.prompt_tokens);
          probes.back().push_back(toy::kThinkOpen);
        }
        report = check_continuity(models, grid, probes).to_json();
      } else {
        throw UsageError(fmt::format("unknown check '{}'", check));
      }
      cm.write_output(out_path, report.dump(2) + "\n");
    };
  });

  // pipeline
  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed_override;
  auto* pipeline = app.add_subcommand("pipeline", "estimate, merge, generate and score every method");
  pipeline->add_option("--config", config_path, "run config JSON (defaults when omitted)");
  pipeline->add_option("--out-dir", out_dir)->required();
  pipeline->add_option("--seed", seed_override, "override the config seed");
  pipeline->add_option("--jobs", jobs, "worker threads")->capture_default_str();
  pipeline->callback([&] {
    action = [&] {
      RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
      if (seed_override) cfg.seed = *seed_override;
      if (pipeline->count("--jobs")) cfg.jobs = jobs;
      const auto result = run_pipeline(cfg, out_dir);
      for (const auto& m : result.methods)
        out << fmt::format("{:<12} acc={:.4f} tok={:.3f} cr={:.1f}% think={:.1f}%\n", m.name, m.report.acc,
                           m.report.tok_mean, m.report.cr_percent, m.report.think_ratio_percent);
    };
  });

  std::vector<std::string> args(argv.begin() + (argv.empty() ? 0 : 1), argv.end());
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << kToolkitVersion << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n";
    // help of the deepest selected subcommand
    const CLI::App* sub = &app;
    while (!sub->get_subcommands().empty()) sub = sub->get_subcommands().front();
    err << sub->help();
    return kExitUsage;
  }
  try {
    if (action) action();
  } catch (const UsageError& e) {
    err << json{{"error", "usage"}, {"message", e.what()}}.dump() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << json{{"error", "validation"}, {"message", e.what()}}.dump() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << json{{"error", "internal"}, {"message", e.what()}}.dump() << "\n";
    return kExitValidation;
  }
  return kExitOk;
}

}  // namespace interpkit
