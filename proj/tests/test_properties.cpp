// Seeded randomized invariants. Each suite draws its own instances from the
// generators; the loops here vary the step count.

#include <gtest/gtest.h>

#include <set>

#include "rbsde/reports.hpp"
#include "rbsde/suites.hpp"

using namespace rbsde;

namespace {

void expect_suite(const std::string& name, int instances, int steps, std::uint64_t seed = 1234) {
  const SuiteResult r = find_suite(name)({seed, instances, steps, std::nullopt});
  std::string detail;
  for (const auto& [k, v] : r.metrics) detail += k + "=" + fmt(v) + " ";
  EXPECT_TRUE(r.passed) << name << " K=" << steps << ": " << detail;
  EXPECT_EQ(r.instances, instances);
}

}  // namespace

TEST(Properties, Comparison) {
  for (int K = 1; K <= 5; ++K) expect_suite("comparison", 30, K);
}

TEST(Properties, Skorokhod) {
  for (int K = 1; K <= 7; ++K) expect_suite("skorokhod", K <= 5 ? 20 : 3, K);
}

TEST(Properties, Orthogonality) {
  for (int K = 1; K <= 5; ++K) expect_suite("orthogonality", 20, K);
}

TEST(Properties, RefOperator) {
  for (int K = 1; K <= 5; ++K) expect_suite("refop", 20, K);
}

TEST(Properties, Supermartingale) {
  for (int K = 1; K <= 4; ++K) expect_suite("supermartingale", K <= 2 ? 10 : 20, K);
}

TEST(Properties, EpsilonOptimal) {
  for (int K = 1; K <= 5; ++K) expect_suite("epsilon_optimal", 20, K);
}

TEST(Properties, OptimalRule) {
  for (int K = 1; K <= 5; ++K) expect_suite("optimal_rule", 20, K);
}

TEST(Properties, Snell) {
  for (int K = 1; K <= 4; ++K) expect_suite("snell", 10, K);
}

TEST(Properties, OracleSmall) {
  expect_suite("oracle", 30, 1);
  expect_suite("oracle", 30, 2);
}

TEST(Properties, Estimates) {
  expect_suite("estimates", 40, 4);
}

TEST(Properties, SolutionShape) {
  for (int i = 0; i < 100; ++i) {
    Sampler s(instance_seed(99, 0, static_cast<std::uint64_t>(i)));
    const Instance in = random_instance(s, {1 + s.pick(5), ObstacleShape::Arbitrary, true});
    const RbsdeSolution sol = solve_rbsde(in.lattice, in.obstacle, in.driver);
    for_each_node(in.lattice, [&](const NodeId& n) { ASSERT_GE(sol.y[n], in.obstacle[n]); });
    for (int k = 0; k < in.lattice.steps(); ++k) {
      for (std::uint64_t p = 0; p < layer_size(k); ++p) {
        ASSERT_GE(sol.y.main(k, p), sol.y.post(k, p));
        ASSERT_GE(sol.a(k, p), 0.0);
        ASSERT_GE(sol.c(k, p), 0.0);
      }
    }
  }
}

TEST(Properties, SuitesAreReproducible) {
  for (const auto& [name, fn] : suite_registry()) {
    const SuiteResult a = fn({7, 5, 2, std::nullopt});
    const SuiteResult b = fn({7, 5, 2, std::nullopt});
    ASSERT_EQ(a.metrics.size(), b.metrics.size()) << name;
    for (std::size_t i = 0; i < a.metrics.size(); ++i) EXPECT_EQ(fmt(a.metrics[i].second), fmt(b.metrics[i].second)) << name;
  }
}

TEST(Properties, InstanceSeedsAreDistinct) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t tag = 0; tag < 12; ++tag) {
    for (std::uint64_t i = 0; i < 200; ++i) seen.insert(instance_seed(42, tag, i));
  }
  EXPECT_EQ(seen.size(), 12u * 200u);
}
