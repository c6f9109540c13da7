#include <gtest/gtest.h>

#include "oracles.hpp"
#include "rbsde/generators.hpp"

using namespace rbsde;

namespace {

Lattice grid(int steps, double lambda = 0.5) { return Lattice(GridSpec{steps, 1.0, lambda}); }

AdaptedProcess random_process(Sampler& s, const Lattice& l) {
  AdaptedProcess out(l, 0.0);
  for_each_node(l, [&](const NodeId& n) { out[n] = s.uniform(-1.0, 1.0); });
  return out;
}

StoppingRule random_rule(Sampler& s, const Lattice& l, double p = 0.3) {
  StoppingRule r(l);
  for_each_node(l, [&](const NodeId& n) {
    if (s.coin(p)) r.set(n);
  });
  return canonicalize(l, r);
}

}  // namespace

TEST(OneStep, ZeroDriverOnConstant) {
  const Lattice l = grid(2);
  const OneStep st = onestep_implicit(l, {0.4, 0.4, 0.4, 0.4}, zero_driver(), 0.0);
  EXPECT_DOUBLE_EQ(st.y, 0.4);
  EXPECT_DOUBLE_EQ(st.z, 0.0);
  EXPECT_DOUBLE_EQ(st.kappa, 0.0);
  for (double h : st.h) EXPECT_DOUBLE_EQ(h, 0.0);
}

TEST(OneStep, DiscountingExample) {
  const Lattice l = grid(2);  // dt = 0.5
  const OneStep st = onestep_implicit(l, {1.0, 1.0, 1.0, 1.0}, linear_driver(0.1), 0.0);
  EXPECT_NEAR(st.y, 1.0 / 1.05, 1e-12);
}

TEST(OneStep, MatchesBisection) {
  Sampler s(21);
  for (int i = 0; i < 300; ++i) {
    const Lattice l(random_grid(s, 1 + s.pick(4)));
    const Instance in = random_instance(s, {l.steps(), ObstacleShape::Arbitrary, true});
    Quad next{};
    for (double& v : next) v = s.uniform(-2.0, 2.0);
    const double t = in.lattice.time(s.pick(in.lattice.steps()));
    const OneStep st = onestep_implicit(in.lattice, next, in.driver, t);
    const oracle::Moments m = oracle::branch_moments(in.lattice, next);
    EXPECT_NEAR(st.y, oracle::bisect_step(m.mean, m.z, m.kappa, in.driver, t, in.lattice.dt()), 1e-10);
  }
}

TEST(OneStep, IndependentOfInitialGuess) {
  const Lattice l = grid(3, 0.9);
  const Driver f = linear_driver({0.4, 0.2, -0.3, 0.1}, l.intensity());
  const Quad next{0.3, -0.7, 1.2, 0.05};
  const double a = onestep_implicit(l, next, f, 0.0).y;
  for (double g : {-5.0, 0.0, 3.0, 40.0}) EXPECT_NEAR(onestep_implicit(l, next, f, 0.0, g).y, a, 1e-11);
}

TEST(OneStep, NoContraction) {
  const Lattice l(GridSpec{1, 1.0, 0.5});
  try {
    onestep_implicit(l, {0, 0, 0, 0}, linear_driver(2.0), 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NoContraction);
  }
}

TEST(OneStep, NonConvergenceOnMisdeclaredDriver) {
  const Lattice l = grid(2);
  Driver f;
  f.name = "jumpy";
  f.lipschitz = 0.1;  // declared, but f jumps by 4 at y = 0.5
  f.eval = [](double, double y, double, double) { return y < 0.5 ? 2.0 : -2.0; };
  try {
    onestep_implicit(l, {0, 0, 0, 0}, f, 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonConvergence);
  }
}

TEST(SolveBsde, StopAtRootAndAtTerminal) {
  Sampler s(3);
  const Lattice l = grid(2, 0.8);
  const AdaptedProcess xi = random_process(s, l);
  const BsdeSolution now = solve_bsde(l, xi, rule_at(l, {0, Phase::Main}), zero_driver());
  EXPECT_DOUBLE_EQ(now.x.main(0, 0), xi.main(0, 0));
  const BsdeSolution late = solve_bsde(l, xi, zero_driver());
  double mean = 0.0;
  for (std::uint64_t p = 0; p < 16; ++p) mean += l.path_probability(2, p) * xi.main(2, p);
  EXPECT_NEAR(late.x.main(0, 0), mean, 1e-15);
}

TEST(SolveBsde, MatchesRecursiveEvaluator) {
  Sampler s(4);
  for (int i = 0; i < 60; ++i) {
    const Instance in = random_instance(s, {1 + s.pick(3), ObstacleShape::Arbitrary, true});
    const StoppingRule tau = random_rule(s, in.lattice);
    const BsdeSolution sol = solve_bsde(in.lattice, in.obstacle.values, tau, in.driver);
    oracle::StopSet stops;
    for (const NodeId& n : hit_nodes(in.lattice, tau)) stops.insert(oracle::key(n.step, n.phase, n.path));
    const double ref = oracle::recursive_value(
        in.lattice, [&](const NodeId& n) { return in.obstacle[n]; }, stops, in.driver, 0, Phase::Main, 0);
    EXPECT_NEAR(sol.x.main(0, 0), ref, 1e-10) << in.driver.name;
  }
}

TEST(EfExpectation, IdentityWhenSigmaEqualsTau) {
  Sampler s(6);
  const Instance in = random_instance(s, {3, ObstacleShape::Arbitrary, true});
  const StoppingRule tau = random_rule(s, in.lattice);
  const AdaptedProcess ef = ef_conditional_expectation(in.lattice, tau, tau, in.obstacle.values, in.driver);
  for (const NodeId& n : hit_nodes(in.lattice, tau)) EXPECT_DOUBLE_EQ(ef[n], in.obstacle[n]);
}

TEST(EfExpectation, TowerProperty) {
  Sampler s(7);
  for (int i = 0; i < 40; ++i) {
    const Instance in = random_instance(s, {1 + s.pick(3), ObstacleShape::Arbitrary, true});
    const Lattice& l = in.lattice;
    const StoppingRule tau = random_rule(s, l, 0.2);
    const StoppingRule sigma = rule_min(l, random_rule(s, l, 0.3), tau);
    const StoppingRule root = rule_at(l, {0, Phase::Main});
    const AdaptedProcess inner = ef_conditional_expectation(l, sigma, tau, in.obstacle.values, in.driver);
    const double nested = ef_conditional_expectation(l, root, sigma, inner, in.driver).main(0, 0);
    const double direct = ef_conditional_expectation(l, root, tau, in.obstacle.values, in.driver).main(0, 0);
    EXPECT_NEAR(nested, direct, 1e-11);
  }
}

TEST(EfExpectation, RejectsBadOrdering) {
  const Lattice l = grid(2);
  const AdaptedProcess zeta(l, 1.0);
  try {
    ef_conditional_expectation(l, rule_at(l, {2, Phase::Main}), rule_at(l, {1, Phase::Post}), zeta, zero_driver());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BadOrdering);
  }
}

TEST(Monotonicity, Examples) {
  const double lambda = 0.7;
  const MonotonicityReport none = check_monotonicity(linear_driver({0.3, 0.2, 0.0, 0.0}, lambda), lambda);
  EXPECT_TRUE(none.passes);
  EXPECT_NEAR(none.min_slope, 0.0, 1e-12);
  const MonotonicityReport edge = check_monotonicity(linear_driver({0.0, 0.0, -lambda, 0.0}, lambda), lambda);
  EXPECT_TRUE(edge.passes);
  EXPECT_NEAR(edge.min_slope, -1.0, 1e-12);
  const MonotonicityReport bad = check_monotonicity(linear_driver({0.0, 0.0, -2.0 * lambda, 0.0}, lambda), lambda);
  EXPECT_FALSE(bad.passes);
  EXPECT_NEAR(bad.min_slope, -2.0, 1e-12);
}

TEST(Lipschitz, DeclaredConstantsHold) {
  Sampler s(8);
  for (int i = 0; i < 40; ++i) {
    const Instance in = random_instance(s, {2, ObstacleShape::Arbitrary, true});
    EXPECT_TRUE(spot_check_lipschitz(in.driver, in.lattice.intensity()).passes) << in.driver.name;
  }
}

TEST(Comparison, UnreflectedBsde) {
  Sampler s(10);
  for (int i = 0; i < 100; ++i) {
    const Instance in = random_instance(s, {1 + s.pick(4), ObstacleShape::Arbitrary, true});
    const Obstacle upper = lift_obstacle(s, in.lattice, in.obstacle);
    const Driver f2 = lift_driver(s, in.driver);
    const BsdeSolution a = solve_bsde(in.lattice, in.obstacle.values, in.driver);
    const BsdeSolution b = solve_bsde(in.lattice, upper.values, f2);
    for_each_node(in.lattice, [&](const NodeId& n) { EXPECT_LE(a.x[n], b.x[n] + 1e-10); });
  }
}

TEST(Martingale, ZeroDriverKeepsExpectation) {
  Sampler s(11);
  const Lattice l = grid(4, 0.9);
  const AdaptedProcess xi = random_process(s, l);
  const BsdeSolution sol = solve_bsde(l, xi, zero_driver());
  double mean = 0.0;
  for (std::uint64_t p = 0; p < layer_size(4); ++p) mean += l.path_probability(4, p) * xi.main(4, p);
  EXPECT_NEAR(sol.x.main(0, 0), mean, 1e-14);
  for (int k = 0; k < 4; ++k) {
    double layer_mean = 0.0;
    for (std::uint64_t p = 0; p < layer_size(k); ++p) layer_mean += l.path_probability(k, p) * sol.x.post(k, p);
    EXPECT_NEAR(layer_mean, mean, 1e-14);
  }
}
