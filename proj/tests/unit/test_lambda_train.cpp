// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "interpkit/error.hpp"
#include "interpkit/lambda_train.hpp"
#include "interpkit/mlp.hpp"
#include "interpkit/rng.hpp"
#include "interpkit/toy/merged.hpp"
#include "interpkit/toy/tasks.hpp"
#include "test_models.hpp"

using namespace interpkit;
using toy::Token;

namespace {

PolicyPerformanceTuple tuple(double l, double acc, double cost) { return {ReasoningIntensity(l), acc, cost, 8}; }

Features random_features(std::mt19937_64& rng, std::size_t d) {
  std::normal_distribution<double> n;
  Features f(d);
  for (auto& x : f) x = n(rng);
  return f;
}

toy::QueryRecord one_digit_query(Token gold) {
  toy::QueryRecord q;
  q.query_id = "q";
  q.prompt_tokens = {toy::kBos, 2, toy::kEq};
  q.gold_answer = {gold};
  q.difficulty_level = 1;
  return q;
}

/// Central-difference relative error of an analytic gradient over every parameter.
template <class LossFn>
double gradient_error(Mlp& net, LossFn&& loss) {
  std::vector<double> grad(net.params().size(), 0.0);
  loss(std::span<double>(grad));
  double worst = 0.0;
  const double h = 1e-6;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const double orig = net.params()[i];
    net.params()[i] = orig + h;
    const double lp = loss(std::span<double>{});
    net.params()[i] = orig - h;
    const double lm = loss(std::span<double>{});
    net.params()[i] = orig;
    const double fd = (lp - lm) / (2 * h);
    const double denom = std::fabs(fd) + std::fabs(grad[i]);
    if (denom > 1e-8) worst = std::max(worst, std::fabs(fd - grad[i]) / denom);
  }
  return worst;
}

}  // namespace

TEST_CASE("profiling a model that always answers correctly") {
  const auto m = testutil::scripted_model({{toy::kEq, toy::kAns}, {toy::kAns, 4}}).to_archive();
  toy::MergedModels models(m, m);
  const auto ts = profile_query(one_digit_query(4), models, default_lambda_grid(), 8, {});
  REQUIRE(ts.size() == 5);
  for (const auto& t : ts) {
    CHECK(t.acc == 1.0);
    CHECK(t.cost == 2.0);
    CHECK(t.samples == 8);
  }
  const auto wrong = profile_query(one_digit_query(5), m, m, {0.5}, 1, {});
  CHECK(wrong[0].acc == 0.0);
}

TEST_CASE("profiled accuracies lie on the sample grid") {
  // a weak head makes sampling genuinely random
  const auto m = testutil::scripted_model({{toy::kEq, toy::kAns}, {toy::kAns, 4}}, 1.0).to_archive();
  toy::MergedModels models(m, m);
  toy::GenerationParams g;
  g.temperature = 1.0;
  g.top_p = 1.0;
  g.max_new_tokens = 4;
  const auto ts = profile_query(one_digit_query(4), models, {0.0, 1.0}, 7, g);
  for (const auto& t : ts) {
    const double k = t.acc * 7;
    CHECK(std::fabs(k - std::round(k)) < 1e-12);
  }
  // common random numbers across coefficients: both ends sample the same model identically
  CHECK(ts[0].acc == ts[1].acc);
  CHECK(ts[0].cost == ts[1].cost);
  CHECK_THROWS_AS(profile_query(one_digit_query(4), models, {}, 1, g), ValidationError);
  CHECK_THROWS_AS(profile_query(one_digit_query(4), models, {0.5}, 0, g), ValidationError);
}

TEST_CASE("target lambda definition") {
  std::vector<PolicyPerformanceTuple> t{tuple(0, 0.5, 1), tuple(0.5, 0.9, 2), tuple(1, 0.9, 3)};
  CHECK(target_lambda(t).value() == 0.5);
  std::vector<PolicyPerformanceTuple> flat{tuple(0.3, 0.7, 1), tuple(0.0, 0.7, 1), tuple(1, 0.7, 1)};
  CHECK(target_lambda(flat).value() == 0.0);
  std::vector<PolicyPerformanceTuple> one{tuple(0.7, 0.2, 1)};
  CHECK(target_lambda(one).value() == 0.7);
  CHECK_THROWS_AS(target_lambda(std::vector<PolicyPerformanceTuple>{}), ValidationError);
}

TEST_CASE("target lambda ignores tuple order") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> acc(0, 4);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<PolicyPerformanceTuple> t;
    for (double l : default_lambda_grid()) t.push_back(tuple(l, acc(rng) / 4.0, l * 10));
    const double ref = target_lambda(t).value();
    std::shuffle(t.begin(), t.end(), rng);
    CHECK(target_lambda(t).value() == ref);
  }
}

TEST_CASE("preference criterion branches") {
  CHECK(preferred(tuple(0, 0.9, 5), tuple(1, 0.7, 1), 0.05));
  CHECK(preferred(tuple(0, 0.8, 100), tuple(1, 0.8, 200), 0.05));
  CHECK_FALSE(preferred(tuple(0, 0.8, 200), tuple(1, 0.8, 100), 0.05));
  CHECK_FALSE(preferred(tuple(0, 0.8, 100), tuple(1, 0.8, 100), 0.05));
  CHECK_FALSE(preferred(tuple(1, 0.8, 100), tuple(0, 0.8, 100), 0.05));
  std::map<std::string, std::vector<PolicyPerformanceTuple>> m{{"q", {tuple(0, 0.8, 100), tuple(1, 0.8, 100)}}};
  CHECK(build_preferences(m).empty());
  CHECK_THROWS_AS(build_preferences(m, -0.1), ValidationError);
}

TEST_CASE("emitted preferences are irreflexive, antisymmetric and consistent") {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> acc(0, 8), cost(1, 20);
  std::map<std::string, std::vector<PolicyPerformanceTuple>> m;
  for (int q = 0; q < 50; ++q) {
    auto& ts = m["q" + std::to_string(q)];
    for (double l : default_lambda_grid()) ts.push_back(tuple(l, acc(rng) / 8.0, cost(rng)));
  }
  const auto pairs = build_preferences(m, 0.05);
  std::set<std::tuple<std::string, double, double>> seen;
  for (const auto& p : pairs) {
    CHECK(p.lambda_chosen != p.lambda_rejected);
    seen.insert({p.query_id, p.lambda_chosen.value(), p.lambda_rejected.value()});
  }
  for (const auto& [id, c, r] : seen) CHECK(seen.count({id, r, c}) == 0);
  // transitivity of the accuracy-dominant branch
  for (const auto& [id, ts] : m)
    for (const auto& a : ts)
      for (const auto& b : ts)
        for (const auto& c : ts)
          if (a.acc > b.acc + 0.05 && b.acc > c.acc + 0.05) CHECK(preferred(a, c, 0.05));
}

TEST_CASE("router gradient matches central differences") {
  std::mt19937_64 rng(5);
  std::vector<RouterSample> data;
  std::uniform_real_distribution<double> u;
  for (int k = 0; k < 20; ++k) data.emplace_back(random_features(rng, 6), u(rng));
  RouterModel r{Mlp::init(6, 8, 1)};
  std::normal_distribution<double> n(0.0, 0.3);
  for (auto& w : r.net.params()) w += n(rng);  // move off the zero output layer
  const double err = gradient_error(r.net, [&](std::span<double> g) { return router_loss(r, data, g); });
  CHECK(err < 1e-4);
}

TEST_CASE("router with zero epochs equals its initialization") {
  std::mt19937_64 rng(6);
  std::vector<RouterSample> data;
  for (int k = 0; k < 10; ++k) data.emplace_back(random_features(rng, 4), 0.3);
  MlpTrainOptions o;
  o.epochs = 0;
  const auto r = train_router(data, o);
  const auto init = Mlp::init(4, o.hidden, derive_seed(o.seed, "router"));
  CHECK(std::equal(r.net.params().begin(), r.net.params().end(), init.params().begin()));
  CHECK(r.predict(data[0].first) == 0.5);
}

TEST_CASE("router learns a constant target") {
  std::mt19937_64 rng(7);
  for (double c : {0.1, 0.5, 0.85}) {
    std::vector<RouterSample> data;
    for (int k = 0; k < 64; ++k) data.emplace_back(random_features(rng, 8), c);
    MlpTrainOptions o;
    o.epochs = 200;
    const auto r = train_router(data, o);
    for (const auto& [x, y] : data) CHECK(std::fabs(r.predict(x) - c) <= 0.05);
  }
  CHECK_THROWS_AS(train_router({}, {}), ValidationError);
  CHECK_THROWS_AS(train_router({{Features{1.0}, 1.5}}, {}), ValidationError);
}

TEST_CASE("router archive round trip") {
  std::mt19937_64 rng(8);
  std::vector<RouterSample> data;
  for (int k = 0; k < 16; ++k) data.emplace_back(random_features(rng, 3), 0.7);
  MlpTrainOptions o;
  o.epochs = 5;
  const auto r = train_router(data, o);
  const auto back = RouterModel::from_archive(r.to_archive());
  CHECK(back.net == r.net);
  CHECK_THROWS_AS(RewardModel::from_archive(r.to_archive()), StructureError);
}

TEST_CASE("preference loss at a zero-output model is ln 2") {
  EmbeddingMap emb{{"q", {0.1, -0.2}}};
  std::vector<PreferencePair> pairs{{"q", ReasoningIntensity(0.5), ReasoningIntensity(0.0)}};
  RewardModel r{Mlp::init(3, 4, 0)};
  CHECK(preference_loss(r, pairs, emb) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("preference gradient matches central differences") {
  std::mt19937_64 rng(9);
  EmbeddingMap emb;
  std::vector<PreferencePair> pairs;
  const auto grid = default_lambda_grid();
  for (int q = 0; q < 10; ++q) {
    const std::string id = "q" + std::to_string(q);
    emb[id] = random_features(rng, 5);
    pairs.push_back({id, ReasoningIntensity(grid[q % 5]), ReasoningIntensity(grid[(q + 2) % 5])});
  }
  RewardModel r{Mlp::init(6, 8, 2)};
  std::normal_distribution<double> n(0.0, 0.3);
  for (auto& w : r.net.params()) w += n(rng);
  const double err = gradient_error(r.net, [&](std::span<double> g) { return preference_loss(r, pairs, emb, g); });
  CHECK(err < 1e-4);
}

TEST_CASE("a single pair becomes separable") {
  EmbeddingMap emb{{"q", {0.4, 0.1}}};
  std::vector<PreferencePair> pairs{{"q", ReasoningIntensity(0.7), ReasoningIntensity(0.3)}};
  MlpTrainOptions o;
  o.epochs = 50;
  const auto r = train_reward(pairs, emb, o);
  CHECK(r.score(emb["q"], 0.7) > r.score(emb["q"], 0.3));
}

TEST_CASE("flipping every pair reverses the learned order") {
  std::mt19937_64 rng(10);
  EmbeddingMap emb;
  std::vector<PreferencePair> pairs, flipped;
  const auto grid = default_lambda_grid();
  for (int q = 0; q < 40; ++q) {
    const std::string id = "q" + std::to_string(q);
    emb[id] = random_features(rng, 4);
    const int opt = q % 5;
    for (int a = 0; a < 5; ++a)
      for (int b = 0; b < 5; ++b)
        if (std::abs(a - opt) < std::abs(b - opt)) {
          pairs.push_back({id, ReasoningIntensity(grid[a]), ReasoningIntensity(grid[b])});
          flipped.push_back({id, ReasoningIntensity(grid[b]), ReasoningIntensity(grid[a])});
        }
  }
  MlpTrainOptions o;
  o.epochs = 30;
  const auto r = train_reward(pairs, emb, o), rf = train_reward(flipped, emb, o);
  int agree = 0, total = 0;
  for (const auto& p : pairs) {
    const auto& e = emb[p.query_id];
    const bool fwd = r.score(e, p.lambda_chosen.value()) > r.score(e, p.lambda_rejected.value());
    const bool rev = rf.score(e, p.lambda_chosen.value()) < rf.score(e, p.lambda_rejected.value());
    agree += (fwd && rev) ? 1 : 0;
    ++total;
  }
  CHECK(agree >= 0.9 * total);
}

TEST_CASE("preference estimate tie and monotone rules") {
  const auto grid = default_lambda_grid();
  RewardModel zero{Mlp::init(3, 4, 0)};
  CHECK(estimate_lambda_pref(zero, Features{0.2, 0.1}, grid).value() == 0.0);
  // output weight on the lambda feature only: score increases with lambda
  RewardModel up{Mlp::init(3, 1, 0)};
  auto p = up.net.params();
  std::fill(p.begin(), p.end(), 0.0);
  p[2] = 1.0;  // w1 for input 2 (lambda) into the single hidden unit
  p[4] = 1.0;  // w2
  CHECK(estimate_lambda_pref(up, Features{0.2, 0.1}, grid).value() == 1.0);
  CHECK(estimate_lambda_pref(up, Features{0.2, 0.1}, {1.0, 0.0, 0.5}).value() == 1.0);
  CHECK_THROWS_AS(estimate_lambda_pref(up, Features{0.2, 0.1}, {}), ValidationError);
}

TEST_CASE("preference estimate is invariant to increasing transforms of the score") {
  // a peaked reward: the hidden unit is tanh(-(lambda - c)^2)-like via two units
  RewardModel r{Mlp::init(2, 2, 0)};
  auto p = r.net.params();
  std::fill(p.begin(), p.end(), 0.0);
  // layout: w1 [in=2 x h=2], b1 [2], w2 [2], b2
  p[1] = 0.0;
  p[2] = 3.0;  // feature lambda -> unit 0
  p[3] = -3.0; // feature lambda -> unit 1
  p[4] = -1.8;
  p[5] = 2.1;
  p[6] = 1.0;
  p[7] = 1.0;
  const auto grid = default_lambda_grid();
  const double base = estimate_lambda_pref(r, Features{0.0}, grid).value();
  RewardModel scaled = r;
  auto q = scaled.net.params();
  q[6] *= 7.0;
  q[7] *= 7.0;
  q[8] += 3.0;
  CHECK(estimate_lambda_pref(scaled, Features{0.0}, grid).value() == base);
}

TEST_CASE("preference pairs rejecting identical coefficients on load") {
  nlohmann::json j = {{"query_id", "q"}, {"lambda_chosen", 0.5}, {"lambda_rejected", 0.5}};
  CHECK_THROWS_AS(j.get<PreferencePair>(), ValidationError);
  PreferencePair p{"q", ReasoningIntensity(0.3), ReasoningIntensity(0.7)};
  CHECK(nlohmann::json(p).get<PreferencePair>() == p);
}

TEST_CASE("rating parser") {
  CHECK(parse_rating(std::vector<Token>{7, toy::kEos}, 10) == 7);
  CHECK(parse_rating(std::vector<Token>{1, 0}, 10) == 10);
  CHECK_THROWS_AS(parse_rating(std::vector<Token>{1, 0}, 9), RatingParseError);
  CHECK_THROWS_AS(parse_rating(std::vector<Token>{0}, 10), RatingParseError);
  CHECK_THROWS_AS(parse_rating(std::vector<Token>{toy::kAns, 3}, 10), RatingParseError);
  CHECK_THROWS_AS(parse_rating(std::vector<Token>{1, 2, 3}, 10), RatingParseError);
}

TEST_CASE("prompt estimate maps ratings onto the unit interval") {
  const auto q = one_digit_query(2);
  const toy::RatingTemplate tmpl;
  auto rate = [&](std::map<Token, Token> script, int scale) {
    return estimate_lambda_prompt(testutil::scripted_model(script), q, tmpl, scale).value();
  };
  CHECK(rate({{toy::kRate, 1}}, 10) == 0.0);
  CHECK(rate({{toy::kRate, 1}, {1, 0}}, 10) == 1.0);
  CHECK(rate({{toy::kRate, 5}}, 9) == 0.5);
  CHECK_THROWS_AS(rate({{toy::kRate, 5}}, 7), ValidationError);
  CHECK_THROWS_AS(rate({{toy::kRate, toy::kAns}}, 10), RatingParseError);
}

TEST_CASE("query embedding is the mean final hidden state") {
  const auto m = testutil::scripted_model({});
  const auto q = one_digit_query(2);
  const auto e = query_embedding(m, q);
  const auto h = m.final_hidden(q.prompt_tokens);
  REQUIRE(e.size() == static_cast<std::size_t>(m.config().d_model));
  for (std::size_t k = 0; k < e.size(); ++k) {
    double s = 0;
    for (Eigen::Index r = 0; r < h.rows(); ++r) s += h(r, static_cast<Eigen::Index>(k));
    CHECK(e[k] == doctest::Approx(s / static_cast<double>(h.rows())));
  }
}
