// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "interpkit/error.hpp"
#include "interpkit/toy/generate.hpp"
#include "interpkit/toy/tasks.hpp"
#include "interpkit/toy/trainer.hpp"
#include "interpkit/toy/transformer.hpp"
#include "test_util.hpp"

using namespace interpkit;
using namespace interpkit::toy;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_layers = 2;
  c.max_seq_len = 24;
  return c;
}

std::vector<std::span<double>> views(Params& p) {
  std::vector<std::span<double>> v;
  p.visit([&](const std::string&, auto& d) { v.emplace_back(d.data(), static_cast<std::size_t>(d.size())); });
  return v;
}

double logit(const ForwardOutput& out, std::size_t t, int v, int vocab) {
  return out.logits.values()[t * static_cast<std::size_t>(vocab) + static_cast<std::size_t>(v)];
}

// Slot layout of modular-add prompts: BOS, K operand slots, EQ.
int operand_sum(const QueryRecord& q) {
  int s = 0;
  for (std::size_t i = 1; i + 1 < q.prompt_tokens.size(); ++i)
    if (is_digit(q.prompt_tokens[i])) s += q.prompt_tokens[i];
  return s;
}

// Integer value of digits in [b, e).
long digits_value(const Tokens& t, std::size_t b, std::size_t e) {
  long v = 0;
  for (std::size_t i = b; i < e; ++i) v = v * 10 + t[i];
  return v;
}

}  // namespace

TEST_CASE("initialization is deterministic per seed") {
  const auto c = small_config();
  CHECK(init_model(c, 1) == init_model(c, 1));
  const auto a = init_model(c, 1), b = init_model(c, 2);
  bool differs = false;
  for (const auto& [name, t] : a) differs |= !(t == b.at(name));
  CHECK(differs);
}

TEST_CASE("invalid configs are rejected") {
  auto c = small_config();
  c.n_layers = 0;
  CHECK_THROWS_AS(init_model(c, 1), ConfigError);
  c = small_config();
  c.n_heads = 3;
  CHECK_THROWS_AS(init_model(c, 1), ConfigError);
  c = small_config();
  c.activation = "relu";
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("archive round trip preserves the model") {
  const auto arch = init_model(small_config(), 4);
  const auto m = Transformer::from_archive(arch);
  CHECK(m.to_archive() == Transformer::from_archive(m.to_archive()).to_archive());
  CHECK(m.config() == small_config());
  const Tokens in{kBos, 1, 2, kEq};
  const auto a = m.forward(in), b = forward(arch, in);
  CHECK(a.logits == b.logits);
  CHECK(a.hidden_states.size() == 3);
}

TEST_CASE("zero weights with a head bias give the bias at every position") {
  const auto c = small_config();
  Params p = Params::zeros(c);
  for (int v = 0; v < c.vocab_size; ++v) p.head_b(v) = 0.1 * v - 0.7;
  const Transformer m(c, p);
  const Tokens in{kBos, 3, 4, 5, kEq, kAns};
  const auto out = m.forward(in);
  for (std::size_t t = 0; t < in.size(); ++t)
    for (int v = 0; v < c.vocab_size; ++v) CHECK(logit(out, t, v, c.vocab_size) == doctest::Approx(0.1 * v - 0.7));
}

TEST_CASE("softmax rows sum to one") {
  const auto m = Transformer::from_archive(init_model(small_config(), 5));
  const auto out = m.forward(Tokens{kBos, 1, 2, 3, kEq});
  const int vocab = m.config().vocab_size;
  for (std::size_t t = 0; t < 5; ++t) {
    RowVec row(vocab);
    for (int v = 0; v < vocab; ++v) row(v) = logit(out, t, v, vocab);
    CHECK(std::fabs(softmax(row).sum() - 1.0) < 1e-9);
  }
  RowVec big(3);
  big << 1000.0, 0.0, -1000.0;
  CHECK(softmax(big)(0) == doctest::Approx(1.0));
}

TEST_CASE("per-query logits do not depend on what else is evaluated") {
  const auto m = Transformer::from_archive(init_model(small_config(), 6));
  const auto qs = make_synthetic_tasks(TaskFamily::ModularAdd, 3, 3, 2);
  std::vector<Tensor> first;
  for (const auto& q : qs) first.push_back(m.forward(q.prompt_tokens).logits);
  for (std::size_t k = qs.size(); k-- > 0;) CHECK(m.forward(qs[k].prompt_tokens).logits == first[k]);
}

TEST_CASE("causal attention: a prefix's logits ignore later tokens") {
  const auto m = Transformer::from_archive(init_model(small_config(), 7));
  const Tokens a{kBos, 1, 2, 3, kEq}, b{kBos, 1, 2, 9, kAns};
  const auto oa = m.forward(a), ob = m.forward(b);
  for (int v = 0; v < m.config().vocab_size; ++v)
    for (std::size_t t = 0; t < 3; ++t)
      CHECK(logit(oa, t, v, m.config().vocab_size) == logit(ob, t, v, m.config().vocab_size));
}

TEST_CASE("forward rejects bad inputs") {
  const auto m = Transformer::from_archive(init_model(small_config(), 7));
  CHECK_THROWS_AS(m.forward(Tokens{}), InputError);
  CHECK_THROWS_AS(m.forward(Tokens{kBos, 99}), InputError);
  CHECK_THROWS_AS(m.forward(Tokens(25, 1)), InputError);
}

TEST_CASE("analytic gradient matches central differences") {
  const auto c = small_config();
  const auto m = Transformer::from_archive(init_model(c, 3));
  const auto corpus = make_synthetic_tasks(TaskFamily::ModularAdd, 3, 2, 1);
  TrainOptions o;
  o.style = TrainStyle::Mixed;
  o.rating_fraction = 0.5;
  const auto ex = build_examples(corpus, o);
  Params g = Params::zeros(c);
  m.loss_and_gradient(ex, g);
  Params p = m.params();
  auto pv = views(p);
  auto gv = views(g);
  double worst = 0.0;
  int checked = 0;
  const double h = 1e-5;
  for (std::size_t k = 0; k < pv.size(); ++k) {
    for (std::size_t i = 0; i < pv[k].size(); i += 11) {
      const double orig = pv[k][i];
      pv[k][i] = orig + h;
      const double lp = Transformer(c, p).loss(ex);
      pv[k][i] = orig - h;
      const double lm = Transformer(c, p).loss(ex);
      pv[k][i] = orig;
      const double fd = (lp - lm) / (2 * h), an = gv[k][i];
      const double denom = std::fabs(fd) + std::fabs(an);
      if (denom > 1e-7) worst = std::max(worst, std::fabs(fd - an) / denom);
      ++checked;
    }
  }
  CHECK(checked > 200);
  CHECK(worst < 1e-4);
}

TEST_CASE("incremental decoding reproduces the full forward pass") {
  const auto m = Transformer::from_archive(init_model(small_config(), 8));
  const auto q = make_synthetic_tasks(TaskFamily::ModularAdd, 3, 1, 4).back();
  const auto tokens = make_trace(q, TraceStyle::Thinking).tokens;
  const auto full = m.forward(tokens);
  auto state = m.start_decode();
  double worst = 0.0;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const RowVec lg = m.decode_step(state, tokens[t]);
    for (int v = 0; v < m.config().vocab_size; ++v)
      worst = std::max(worst, std::fabs(lg(v) - logit(full, t, v, m.config().vocab_size)));
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("argmax decoding equals greedy decoding through forward") {
  const auto m = Transformer::from_archive(init_model(small_config(), 9));
  const Tokens prompt{kBos, 2, 3, kEq};
  GenerationParams p;
  p.mode = DecodeMode::Argmax;
  p.max_new_tokens = 10;
  const auto g = generate(m, prompt, p);
  Tokens seq = prompt;
  Tokens greedy;
  for (int step = 0; step < 10; ++step) {
    const auto out = m.forward(seq);
    const int vocab = m.config().vocab_size;
    int best = 0;
    for (int v = 1; v < vocab; ++v)
      if (logit(out, seq.size() - 1, v, vocab) > logit(out, seq.size() - 1, best, vocab)) best = v;
    if (best == kEos) break;
    greedy.push_back(best);
    seq.push_back(best);
  }
  CHECK(g.completion == greedy);
  // any seed or temperature gives the same argmax path
  p.seed = 99;
  p.temperature = 2.0;
  CHECK(generate(m, prompt, p).completion == greedy);
}

TEST_CASE("generation edge cases and determinism") {
  const auto m = Transformer::from_archive(init_model(small_config(), 10));
  const Tokens prompt{kBos, 4, kEq};
  GenerationParams p;
  p.max_new_tokens = 0;
  const auto empty = generate(m, prompt, p);
  CHECK(empty.completion.empty());
  CHECK(empty.stepwise_max_probs.empty());
  p.max_new_tokens = 12;
  p.seed = 5;
  const auto a = generate(m, prompt, p), b = generate(m, prompt, p);
  CHECK(a.completion == b.completion);
  CHECK(a.stepwise_max_probs == b.stepwise_max_probs);
  CHECK(a.stepwise_max_probs.size() == a.completion.size() + (a.stopped_on_eos ? 1 : 0));
  CHECK_THROWS_AS(generate(m, Tokens{}, p), InputError);
  p.temperature = 0.0;
  CHECK_THROWS_AS(generate(m, prompt, p), ValidationError);
  p.temperature = 0.6;
  p.top_p = 1.5;
  CHECK_THROWS_AS(generate(m, prompt, p), ValidationError);
}

TEST_CASE("generation stops at the context limit") {
  auto c = small_config();
  c.max_seq_len = 6;
  const auto m = Transformer::from_archive(init_model(c, 1));
  GenerationParams p;
  p.max_new_tokens = 50;
  const auto g = generate(m, Tokens{kBos, 1, kEq}, p);
  CHECK(g.completion.size() <= 4);
}

TEST_CASE("top-p of one samples the full distribution") {
  RowVec probs(4);
  probs << 0.5, 0.3, 0.15, 0.05;
  Rng rng(3);
  std::vector<int> counts(4, 0);
  const int n = 200000;
  for (int k = 0; k < n; ++k) ++counts[sample_top_p(probs, 1.0, rng)];
  for (int v = 0; v < 4; ++v) CHECK(counts[v] / static_cast<double>(n) == doctest::Approx(probs(v)).epsilon(0.03));
}

TEST_CASE("top-p truncates to the smallest covering prefix") {
  RowVec probs(4);
  probs << 0.15, 0.5, 0.05, 0.3;
  Rng rng(4);
  std::vector<int> counts(4, 0);
  const int n = 100000;
  for (int k = 0; k < n; ++k) ++counts[sample_top_p(probs, 0.8, rng)];
  CHECK(counts[0] == 0);
  CHECK(counts[2] == 0);
  CHECK(counts[1] / static_cast<double>(n) == doctest::Approx(0.5 / 0.8).epsilon(0.02));
}

TEST_CASE("synthetic corpus structure") {
  const auto qs = make_synthetic_tasks(TaskFamily::ModularAdd, 3, 1, 0);
  REQUIRE(qs.size() == 3);
  CHECK(qs[0].difficulty_level == 1);
  CHECK(qs[1].difficulty_level == 2);
  CHECK(qs[2].difficulty_level == 3);
  CHECK(make_synthetic_tasks(TaskFamily::ModularAdd, 3, 5, 42) == make_synthetic_tasks(TaskFamily::ModularAdd, 3, 5, 42));
  CHECK_FALSE(make_synthetic_tasks(TaskFamily::ModularAdd, 3, 5, 42) ==
              make_synthetic_tasks(TaskFamily::ModularAdd, 3, 5, 43));
}

TEST_CASE("modular-add gold answers match integer arithmetic") {
  for (const auto& q : make_synthetic_tasks(TaskFamily::ModularAdd, 4, 50, 7)) {
    int digits = 0;
    for (Token t : q.prompt_tokens) digits += is_digit(t) ? 1 : 0;
    CHECK(digits == q.difficulty_level + 1);
    REQUIRE(q.gold_answer.size() == 1);
    CHECK(q.gold_answer[0] == operand_sum(q) % 10);
    CHECK(q.reasoning_tokens.back() == q.gold_answer[0]);
  }
}

TEST_CASE("multi-digit-add gold answers match integer arithmetic") {
  for (const auto& q : make_synthetic_tasks(TaskFamily::MultiDigitAdd, 3, 40, 7)) {
    const auto& p = q.prompt_tokens;
    REQUIRE(p.front() == kBos);
    REQUIRE(p.back() == kEq);
    const auto plus = static_cast<std::size_t>(std::find(p.begin(), p.end(), kPlus) - p.begin());
    const long a = digits_value(p, 1, plus), b = digits_value(p, plus + 1, p.size() - 1);
    CHECK(plus - 1 == static_cast<std::size_t>(q.difficulty_level));
    CHECK(digits_value(q.gold_answer, 0, q.gold_answer.size()) == a + b);
  }
}

TEST_CASE("trace layouts") {
  const auto q = make_synthetic_tasks(TaskFamily::ModularAdd, 2, 1, 3).back();
  const auto ins = instruct_completion(q);
  CHECK(ins == Tokens{kAns, q.gold_answer[0], kEos});
  const auto th = thinking_completion(q);
  CHECK(th.front() == kThinkOpen);
  CHECK(std::find(th.begin(), th.end(), kThinkClose) != th.end());
  CHECK(th[th.size() - 3] == kAns);
  const auto tr = make_trace(q, TraceStyle::Instruct);
  CHECK(tr.target_begin == q.prompt_tokens.size());
  RatingScheme scheme{4};
  CHECK(scheme.rating_for(1) == 1);
  CHECK(scheme.rating_for(4) == 9);
}

TEST_CASE("corpus JSON lines round trip and report bad lines") {
  testutil::TempDir dir("toy");
  const auto qs = make_synthetic_tasks(TaskFamily::MultiDigitAdd, 2, 3, 1);
  save_corpus(qs, dir / "q.jsonl");
  CHECK(load_corpus(dir / "q.jsonl") == qs);
  try {
    corpus_from_jsonl(corpus_to_jsonl(qs) + "{broken\n");
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("line 7") != std::string::npos);
  }
}

TEST_CASE("zero epochs return the base unchanged") {
  const auto base = init_model(small_config(), 11);
  const auto corpus = make_synthetic_tasks(TaskFamily::ModularAdd, 2, 4, 1);
  CHECK(train(base, corpus, TrainStyle::Instruct, 0, 0.1, 0) == base);
  TrainOptions o;
  o.max_steps = 0;
  CHECK(train(base, corpus, o) == base);
}

TEST_CASE("training lowers training loss and records lineage") {
  const auto base = init_model(small_config(), 12);
  const auto corpus = make_synthetic_tasks(TaskFamily::ModularAdd, 2, 16, 1);
  const double before = corpus_loss(Transformer::from_archive(base), corpus, TrainStyle::Thinking);
  TrainOptions o;
  o.style = TrainStyle::Thinking;
  o.epochs = 5;
  o.lr = 0.5;
  o.batch_size = 8;
  const auto trained = train(base, corpus, o);
  const double after = corpus_loss(Transformer::from_archive(trained), corpus, TrainStyle::Thinking);
  CHECK(after < before);
  CHECK(trained.metadata_value("lineage.base_digest") == archive_digest(base));
  CHECK(share_lineage(trained, base));
  CHECK(train(base, corpus, o) == trained);
  o.optimizer = Optimizer::Adam;
  o.lr = 0.01;
  const auto adam = train(base, corpus, o);
  CHECK(corpus_loss(Transformer::from_archive(adam), corpus, TrainStyle::Thinking) < before);
}

TEST_CASE("divergent training names the epoch") {
  const auto base = init_model(small_config(), 12);
  const auto corpus = make_synthetic_tasks(TaskFamily::ModularAdd, 2, 16, 1);
  TrainOptions o;
  o.epochs = 3;
  o.lr = 1e300;
  o.clip_norm = 0.0;
  try {
    train(base, corpus, o);
    FAIL("expected divergence");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("epoch") != std::string::npos);
  }
}

TEST_CASE("training option validation") {
  const auto base = init_model(small_config(), 1);
  TrainOptions o;
  CHECK_THROWS_AS(train(base, {}, o), ValidationError);
  o.lr = -1;
  CHECK_THROWS_AS(o.validate(), ValidationError);
  o = {};
  o.rating_fraction = 2;
  CHECK_THROWS_AS(o.validate(), ValidationError);
  CHECK_THROWS_AS(parse_train_style("both"), ValidationError);
  CHECK_THROWS_AS(parse_optimizer("rmsprop"), ValidationError);
}

TEST_CASE("mixed examples carry both styles and spread rating traces") {
  const auto corpus = make_synthetic_tasks(TaskFamily::ModularAdd, 2, 10, 1);
  TrainOptions o;
  o.style = TrainStyle::Mixed;
  o.rating_fraction = 0.25;
  const auto ex = build_examples(corpus, o);
  CHECK(ex.size() == 2 * corpus.size() + 5);
}
