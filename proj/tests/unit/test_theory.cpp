// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <random>

#include <Eigen/Eigenvalues>

#include "interpkit/error.hpp"
#include "interpkit/theory.hpp"
#include "interpkit/toy/merged.hpp"
#include "interpkit/toy/tasks.hpp"
#include "interpkit/toy/trainer.hpp"
#include "test_models.hpp"

using namespace interpkit;
using toy::Token;

namespace {

toy::QueryRecord query(std::string id, Token gold, int level) {
  toy::QueryRecord q;
  q.query_id = std::move(id);
  q.prompt_tokens = {toy::kBos, 1, toy::kEq};
  q.gold_answer = {gold};
  q.difficulty_level = level;
  return q;
}

toy::GenerationParams greedy() {
  toy::GenerationParams g;
  g.mode = toy::DecodeMode::Argmax;
  g.max_new_tokens = 4;
  return g;
}

}  // namespace

TEST_CASE("correlations against reference values") {
  const std::vector<double> x{1, 2, 3, 4, 5}, y{2, 4, 5, 4, 5};
  CHECK(*pearson(x, y) == doctest::Approx(0.7745966692414834).epsilon(1e-12));
  CHECK(*spearman(x, y) == doctest::Approx(0.7378647873726218).epsilon(1e-12));
  const std::vector<double> a{0.1, 0.4, 0.35, 0.8, 0.0, 0.6}, b{3, 1, 2, 2, 5, 0};
  CHECK(*pearson(a, b) == doctest::Approx(-0.7267410016576362).epsilon(1e-12));
  CHECK(*spearman(a, b) == doctest::Approx(-0.753702346348183).epsilon(1e-12));
  const std::vector<double> flat{1, 1, 1, 1, 1};
  CHECK_FALSE(pearson(x, flat).has_value());
  CHECK_FALSE(spearman(flat, y).has_value());
}

TEST_CASE("pearson is invariant under affine rescaling up to sign") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  std::vector<double> x(30), y(30);
  for (std::size_t i = 0; i < 30; ++i) {
    x[i] = n(rng);
    y[i] = 0.5 * x[i] + n(rng);
  }
  const double r = *pearson(x, y);
  std::vector<double> ys(y), yn(y);
  for (auto& v : ys) v = 3.0 * v + 7.0;
  for (auto& v : yn) v = -2.0 * v + 1.0;
  CHECK(*pearson(x, ys) == doctest::Approx(r).epsilon(1e-12));
  CHECK(*pearson(x, yn) == doctest::Approx(-r).epsilon(1e-12));
}

TEST_CASE("power iteration matches a dense eigensolver on 5x5 covariances") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::MatrixXd mix(5, 5);
    for (Eigen::Index i = 0; i < 25; ++i) mix.data()[i] = n(rng);
    Eigen::MatrixXd x(40, 5);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
    x = x * mix;
    const Eigen::MatrixXd c = x.rowwise() - x.colwise().mean();
    const Eigen::MatrixXd cov = c.transpose() * c / static_cast<double>(x.rows() - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    const Eigen::VectorXd ref = es.eigenvectors().col(4);
    const double ref_eig = es.eigenvalues()(4);
    if (es.eigenvalues()(3) > 0.9 * ref_eig) continue;  // near-degenerate top pair
    double eig = 0.0;
    const auto v = principal_component(x, 1e-12, &eig);
    REQUIRE(v.has_value());
    CHECK(std::fabs(std::fabs(v->dot(ref)) - 1.0) < 1e-6);
    CHECK(eig == doctest::Approx(ref_eig).epsilon(1e-6));
  }
}

TEST_CASE("principal component of constant rows is undefined") {
  Eigen::MatrixXd x(4, 3);
  x.rowwise() = Eigen::RowVector3d(1.0, 2.0, 3.0);
  CHECK_FALSE(principal_component(x).has_value());
}

TEST_CASE("exactly linear probabilities give strictly increasing accuracy") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 0.9);
  std::vector<double> pi(50), pt(50);
  for (std::size_t i = 0; i < 50; ++i) {
    pi[i] = u(rng);
    pt[i] = pi[i] + 0.05 + u(rng) * (0.95 - pi[i]) / 0.9;
    pt[i] = std::min(pt[i], 1.0);
  }
  const auto rep = monotonicity_from_probabilities({0.0, 0.3, 0.5, 0.7, 1.0}, pi, pt);
  for (std::size_t k = 1; k < rep.accs.size(); ++k) CHECK(rep.accs[k] > rep.accs[k - 1]);
  CHECK(rep.spearman == 1.0);
  CHECK_FALSE(rep.flat);
  CHECK(rep.premise.satisfied);
  // equal probabilities are flat
  const auto same = monotonicity_from_probabilities({0.0, 0.5, 1.0}, pi, pi);
  CHECK(same.flat);
  CHECK(same.spearman == 0.0);
}

TEST_CASE("identical checkpoints give a flat monotonicity report") {
  const auto m = testutil::scripted_model({{toy::kEq, toy::kAns}, {toy::kAns, 3}}).to_archive();
  toy::MergedModels models(m, m);
  std::vector<toy::QueryRecord> tasks{query("a", 3, 1), query("b", 4, 2)};
  const auto rep = check_monotonicity(models, {0.0, 0.5, 1.0}, tasks, 2, greedy());
  CHECK(rep.flat);
  CHECK(rep.spearman == 0.0);
  CHECK(rep.accs == std::vector<double>{0.5, 0.5, 0.5});
  CHECK(rep.premise.satisfied);
}

TEST_CASE("capability premise follows per-level accuracy") {
  const auto right = testutil::scripted_model({{toy::kEq, toy::kAns}, {toy::kAns, 3}}).to_archive();
  const auto wrong = testutil::scripted_model({{toy::kEq, toy::kAns}, {toy::kAns, 5}}).to_archive();
  std::vector<toy::QueryRecord> tasks{query("a", 3, 1), query("b", 3, 2)};
  toy::MergedModels good(wrong, right), bad(right, wrong);
  const auto ok = check_capability_premise(good, tasks, 1, greedy());
  CHECK(ok.satisfied);
  REQUIRE(ok.levels.size() == 2);
  CHECK(ok.levels[0].acc_instruct == 0.0);
  CHECK(ok.levels[0].acc_thinking == 1.0);
  CHECK_FALSE(check_capability_premise(bad, tasks, 1, greedy()).satisfied);
  const auto rep = check_monotonicity(bad, {0.0, 1.0}, tasks, 1, greedy());
  CHECK_FALSE(rep.premise.satisfied);
}

TEST_CASE("probe position rule") {
  const std::vector<Token> with{toy::kBos, 1, toy::kEq, toy::kThinkOpen, 1}, without{toy::kBos, 1, toy::kEq};
  CHECK(probe_index(with, ProbePosition::ThinkOpenOrLast) == 3);
  CHECK(probe_index(with, ProbePosition::Last) == 4);
  CHECK(probe_index(without, ProbePosition::ThinkOpenOrLast) == 2);
  CHECK_THROWS_AS(probe_index(std::vector<Token>{}, ProbePosition::Last), InputError);
}

TEST_CASE("continuity on identical checkpoints is degenerate") {
  const auto m = toy::init_model(toy::ModelConfig{}, 3);
  toy::MergedModels models(m, m);
  const std::vector<toy::Tokens> probes{{toy::kBos, 1, toy::kEq, toy::kThinkOpen}, {toy::kBos, 2, toy::kEq, toy::kThinkOpen}};
  const auto rep = check_continuity(models, {0.0, 0.5, 1.0}, probes);
  CHECK(rep.degenerate);
  CHECK_THROWS_AS(check_continuity(models, {0.0, 1.0}, probes), ValidationError);
  CHECK_THROWS_AS(check_continuity(models, {0.0, 0.5, 1.0}, {probes[0]}), ValidationError);
}

TEST_CASE("continuity on a random pair tracks the coefficient") {
  const auto a = toy::init_model(toy::ModelConfig{}, 3), b = toy::init_model(toy::ModelConfig{}, 4);
  toy::MergedModels models(a, b);
  std::vector<toy::Tokens> probes;
  for (Token d = 0; d < 6; ++d) probes.push_back({toy::kBos, d, toy::kEq, toy::kThinkOpen});
  const auto rep = check_continuity(models, even_grid(11), probes);
  CHECK_FALSE(rep.degenerate);
  CHECK(rep.lipschitz_ratios.size() == 10);
  CHECK(std::fabs(rep.correlation_r) > 0.5);
  CHECK(rep.explained_variance > 0.0);
  CHECK(rep.explained_variance <= 1.0);
}

TEST_CASE("identical endpoints are trivially connected") {
  const auto m = toy::init_model(toy::ModelConfig{}, 5);
  const auto tasks = toy::make_synthetic_tasks(toy::TaskFamily::ModularAdd, 2, 3, 1);
  const auto rep = check_lmc(m, m, even_grid(5), [&](const NamedTensorArchive& x) {
    return toy::corpus_loss(toy::Transformer::from_archive(x), tasks, toy::TrainStyle::Mixed);
  });
  CHECK(rep.scan.barrier_height == 0.0);
  CHECK(rep.verdict);
  CHECK_FALSE(rep.shared_lineage);
  CHECK_FALSE(rep.warnings.empty());
}

TEST_CASE("lmc verdict uses the tolerance fraction") {
  const auto a = toy::init_model(toy::ModelConfig{}, 1), b = toy::init_model(toy::ModelConfig{}, 2);
  // bump of 0.15 over an endpoint loss of 1
  auto loss = [](const NamedTensorArchive& m) {
    const double l = std::stod(*m.metadata_value("merge.lambda"));
    return 1.0 + 0.6 * l * (1.0 - l);
  };
  const auto grid = std::vector<double>{0.0, 0.5, 1.0};
  CHECK_FALSE(check_lmc(a, b, grid, loss).verdict);
  CHECK(check_lmc(a, b, grid, loss, 0.2).verdict);
  CHECK(check_lmc(a, b, grid, loss).scan.barrier_height == doctest::Approx(0.15));
}
