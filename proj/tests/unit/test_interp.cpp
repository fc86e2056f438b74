// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <atomic>
#include <cmath>
#include <map>
#include <random>
#include <thread>

#include "interpkit/error.hpp"
#include "interpkit/interp.hpp"
#include "test_util.hpp"

using namespace interpkit;

namespace {

double ulp_of(double x) {
  const double a = std::fabs(x);
  return std::nextafter(a, INFINITY) - a;
}

NamedTensorArchive single(std::vector<double> v) {
  NamedTensorArchive a;
  const Shape shape{v.size()};
  a.insert("w", Tensor(shape, std::move(v)));
  return a;
}

}  // namespace

TEST_CASE("endpoints are bit exact") {
  for (auto dtype : {DType::F64, DType::F32}) {
    const auto i = testutil::random_archive(1, 10, dtype), t = testutil::random_archive(2, 10, dtype);
    const auto m0 = interpolate(i, t, ReasoningIntensity(0.0));
    const auto m1 = interpolate(i, t, ReasoningIntensity(1.0));
    for (const auto& [name, tensor] : i) CHECK(m0.at(name) == tensor);
    for (const auto& [name, tensor] : t) CHECK(m1.at(name) == tensor);
  }
}

TEST_CASE("midpoint arithmetic") {
  const auto m = interpolate(single({0, 2}), single({4, 2}), ReasoningIntensity(0.5));
  CHECK(m.at("w")[0] == 2.0);
  CHECK(m.at("w")[1] == 2.0);
}

TEST_CASE("reasoning intensity bounds") {
  CHECK_THROWS_AS(ReasoningIntensity(1.2), ValidationError);
  CHECK_THROWS_AS(ReasoningIntensity(-0.01), ValidationError);
  CHECK_THROWS_AS(ReasoningIntensity(std::nan("")), ValidationError);
  CHECK(ReasoningIntensity(0.456).rounded(2).value() == 0.46);
  CHECK(ReasoningIntensity(0.999).rounded(2).value() == 1.0);
}

TEST_CASE("swapped arguments at 1 - lambda agree within one input ulp") {
  const auto i = testutil::random_archive(3), t = testutil::random_archive(4);
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const double l = u(rng);
    const auto a = interpolate(i, t, ReasoningIntensity(l));
    const auto b = interpolate(t, i, ReasoningIntensity(1.0 - l));
    for (const auto& [name, ta] : a) {
      const Tensor& tb = b.at(name);
      for (std::size_t k = 0; k < ta.numel(); ++k) {
        const double scale = std::max(std::fabs(i.at(name)[k]), std::fabs(t.at(name)[k]));
        CHECK(std::fabs(ta[k] - tb[k]) <= ulp_of(scale));
      }
    }
  }
  // dyadic coefficients make 1 - lambda exact, so the swap is exact too
  for (double l : {0.25, 0.5, 0.375}) {
    const auto a = interpolate(i, t, ReasoningIntensity(l));
    const auto b = interpolate(t, i, ReasoningIntensity(1.0 - l));
    for (const auto& [name, ta] : a) CHECK(ta == b.at(name));
  }
}

TEST_CASE("every merged scalar lies between its inputs") {
  const auto i = testutil::random_archive(5), t = testutil::random_archive(6);
  for (double l : {0.1, 0.3, 0.5, 0.9, 0.999}) {
    const auto m = interpolate(i, t, ReasoningIntensity(l));
    for (const auto& [name, tm] : m)
      for (std::size_t k = 0; k < tm.numel(); ++k) {
        CHECK(tm[k] >= std::min(i.at(name)[k], t.at(name)[k]));
        CHECK(tm[k] <= std::max(i.at(name)[k], t.at(name)[k]));
      }
  }
}

TEST_CASE("misaligned archives are rejected") {
  auto a = testutil::random_archive(1, 3);
  auto b = testutil::random_archive(2, 4);
  CHECK_THROWS_AS(interpolate(a, b, ReasoningIntensity(0.5)), StructureError);
  NamedTensorArchive c, d;
  c.insert("w", Tensor({2}, {1, 2}));
  d.insert("w", Tensor({1, 2}, {1, 2}));
  CHECK_THROWS_AS(interpolate(c, d, ReasoningIntensity(0.5)), ShapeError);
  NamedTensorArchive e;
  e.insert("w", Tensor({2}, {1, 2}, DType::F32));
  CHECK_THROWS_AS(interpolate(c, e, ReasoningIntensity(0.5)), ValidationError);
}

TEST_CASE("merge result does not depend on evaluation order") {
  const auto i = testutil::random_archive(7), t = testutil::random_archive(8);
  const auto ref = interpolate(i, t, ReasoningIntensity(0.37));
  std::vector<NamedTensorArchive> results(4);
  {
    std::vector<std::jthread> threads;
    for (int k = 0; k < 4; ++k)
      threads.emplace_back([&, k] { results[k] = interpolate(i, t, ReasoningIntensity(0.37)); });
  }
  for (const auto& r : results) CHECK(r == ref);
}

TEST_CASE("connectivity of identical and scaled archives") {
  const auto i = testutil::random_archive(9);
  const auto same = diagnose_connectivity(i, i);
  for (const auto& layer : same.per_layer) {
    REQUIRE(layer.cosine.has_value());
    CHECK(*layer.cosine == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(layer.l2 == 0.0);
  }
  NamedTensorArchive doubled;
  for (const auto& [name, tensor] : i) {
    std::vector<double> v(tensor.values().begin(), tensor.values().end());
    for (auto& x : v) x *= 2.0;
    doubled.insert(name, Tensor(tensor.shape(), v));
  }
  const auto scaled = diagnose_connectivity(i, doubled);
  for (const auto& layer : scaled.per_layer) {
    CHECK(*layer.cosine == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(layer.l2 == doctest::Approx(l2_norm(i.at(layer.name))).epsilon(1e-14));
  }
}

TEST_CASE("connectivity is symmetric and flags zero tensors") {
  auto a = testutil::random_archive(10, 4), b = testutil::random_archive(11, 4);
  const auto ab = diagnose_connectivity(a, b), ba = diagnose_connectivity(b, a);
  REQUIRE(ab.per_layer.size() == ba.per_layer.size());
  for (std::size_t k = 0; k < ab.per_layer.size(); ++k) {
    CHECK(*ab.per_layer[k].cosine == doctest::Approx(*ba.per_layer[k].cosine).epsilon(1e-15));
    CHECK(ab.per_layer[k].l2 == doctest::Approx(ba.per_layer[k].l2).epsilon(1e-15));
  }
  CHECK(ab.min_cosine == ba.min_cosine);

  NamedTensorArchive z1, z2;
  z1.insert("w", Tensor::zeros({3}));
  z2.insert("w", Tensor({3}, {1, 2, 3}));
  const auto r = diagnose_connectivity(z1, z2);
  CHECK_FALSE(r.per_layer[0].cosine.has_value());
  CHECK(r.undefined_cosines == 1);
}

TEST_CASE("layer names are ordered numerically") {
  CHECK(layer_order_less("blocks.2.w", "blocks.10.w"));
  CHECK_FALSE(layer_order_less("blocks.10.w", "blocks.2.w"));
  CHECK(layer_order_less("a", "b"));
}

TEST_CASE("barrier of a constant evaluator is zero") {
  const auto i = testutil::random_archive(1, 2), t = testutil::random_archive(2, 2);
  const auto scan = scan_barrier(i, t, even_grid(21), [](const NamedTensorArchive&) { return 1.5; });
  CHECK(scan.grid.size() == 21);
  CHECK(scan.barrier_height == 0.0);
}

TEST_CASE("barrier arithmetic on read-back losses") {
  const auto i = testutil::random_archive(1, 2), t = testutil::random_archive(2, 2);
  const std::map<std::string, double> losses{{"0", 1.0}, {"0.5", 3.0}, {"1", 2.0}};
  const auto scan = scan_barrier(i, t, {0.0, 0.5, 1.0}, [&](const NamedTensorArchive& m) {
    return losses.at(*m.metadata_value("merge.lambda"));
  });
  CHECK(scan.barrier_height == 1.0);
  CHECK(scan.max_endpoint_loss() == 2.0);
  CHECK(lmc_epsilon(scan) == doctest::Approx(0.2));
  CHECK(scan.to_csv() == "lambda,loss\n0,1\n0.5,3\n1,2\n");
}

TEST_CASE("grid validation") {
  CHECK(even_grid(5) == std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0});
  CHECK(even_grid(21)[20] == 1.0);
  CHECK_THROWS_AS(even_grid(1), ValidationError);
  CHECK_THROWS_AS(validate_grid({0.5, 0.2}, false), ValidationError);
  CHECK_THROWS_AS(validate_grid({0.0, 1.2}, false), ValidationError);
  CHECK_THROWS_AS(validate_grid({0.2, 1.0}, true), ValidationError);
  CHECK_NOTHROW(validate_grid({0.2, 0.4}, false));
}

TEST_CASE("merge cache keys on the coefficient rounded to two decimals") {
  auto i = std::make_shared<const NamedTensorArchive>(testutil::random_archive(1, 2));
  auto t = std::make_shared<const NamedTensorArchive>(testutil::random_archive(2, 2));
  MergeCache cache(i, t);
  const auto a = cache.get(ReasoningIntensity(0.301));
  const auto b = cache.get(ReasoningIntensity(0.299));
  CHECK(a == b);
  CHECK(cache.size() == 1);
  CHECK(*a == interpolate(*i, *t, ReasoningIntensity(0.3)));
  for (int k = 0; k <= 200; ++k) cache.get(ReasoningIntensity(k / 200.0));
  CHECK(cache.size() == 101);
}

TEST_CASE("lambda cache is safe under concurrent access") {
  std::atomic<int> calls{0}, wrong{0};
  LambdaCache<double> cache([&](ReasoningIntensity l) {
    ++calls;
    return l.value();
  });
  {
    std::vector<std::jthread> threads;
    for (int k = 0; k < 4; ++k)
      threads.emplace_back([&] {
        for (int j = 0; j <= 100; ++j)
          if (*cache.get(ReasoningIntensity(j / 100.0)) != j / 100.0) ++wrong;
      });
  }
  CHECK(wrong.load() == 0);
  CHECK(cache.size() == 101);
  CHECK(calls.load() >= 101);
}
