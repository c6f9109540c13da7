#pragma once

// Randomized property suites. Each suite draws its own seeded instances,
// measures the relevant quantities and reports them together with a
// pass/fail verdict at its tolerance.

#include <algorithm>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "rbsde/generators.hpp"
#include "rbsde/stopping.hpp"

namespace rbsde {

struct SuiteParams {
  std::uint64_t seed = 42;
  int instances = 20;
  int steps = 2;
  std::optional<double> tolerance;
};

struct SuiteResult {
  std::string name;
  bool passed = true;
  int instances = 0;
  int failures = 0;
  std::vector<std::pair<std::string, double>> metrics;
  std::vector<std::pair<std::string, std::uint64_t>> histogram;

  void metric(const std::string& key, double value) { metrics.emplace_back(key, value); }
  double get(const std::string& key) const {
    for (const auto& [k, v] : metrics) {
      if (k == key) return v;
    }
    return std::numeric_limits<double>::quiet_NaN();
  }
};

/// splitmix64 of (seed, tag, index): independent streams per suite and instance.
inline std::uint64_t instance_seed(std::uint64_t seed, std::uint64_t tag, std::uint64_t index) {
  auto mix = [](std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  };
  return mix(mix(mix(seed) ^ tag) ^ index);
}

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double max_abs_diff(const Lattice& lattice, const AdaptedProcess& a, const AdaptedProcess& b) {
  double m = 0.0;
  for_each_node(lattice, [&](const NodeId& n) { m = std::max(m, std::abs(a[n] - b[n])); });
  return m;
}

/// max over nodes of (a - b).
inline double max_excess(const Lattice& lattice, const AdaptedProcess& a, const AdaptedProcess& b) {
  double m = -std::numeric_limits<double>::infinity();
  for_each_node(lattice, [&](const NodeId& n) { m = std::max(m, a[n] - b[n]); });
  return m;
}

inline bool depends_on_integrands(const DriverSpec& d) { return d.kind != "zero"; }

// ---------------------------------------------------------------------------

/// Solver against the brute-force oracle at the root: V = Y_0, V+ = y_post(0),
/// V = max(V+, xi_main(0)).
inline SuiteResult oracle_suite(const SuiteParams& p) {
  SuiteResult r{"oracle"};
  const double tol = p.tolerance.value_or(1e-10);
  double max_gap = 0.0, max_strict = 0.0, max_identity = 0.0;
  int non_rusc = 0, integrand_drivers = 0;
  for (int i = 0; i < p.instances; ++i) {
    Sampler s(instance_seed(p.seed, 1, static_cast<std::uint64_t>(i)));
    const Instance in = random_instance(s, {p.steps, ObstacleShape::Arbitrary, p.steps < 3});
    const RbsdeSolution sol = solve_rbsde(in.lattice, in.obstacle, in.driver);
    const StoppingOracle oracle(in.lattice, in.obstacle, in.driver);
    const auto [full, strict] = oracle.value_and_strict(in.lattice.root());
    const double gap = std::abs(full.value - sol.y.main(0, 0));
    const double strict_gap = std::abs(strict.value - sol.y.post(0, 0));
    const double identity = std::abs(full.value - std::max(strict.value, in.obstacle.main(0, 0)));
    max_gap = std::max(max_gap, gap);
    max_strict = std::max(max_strict, strict_gap);
    max_identity = std::max(max_identity, identity);
    if (!in.obstacle.is_rusc()) ++non_rusc;
    if (depends_on_integrands(in.driver_spec)) ++integrand_drivers;
    if (gap > tol || strict_gap > tol || identity > tol) ++r.failures;
    ++r.instances;
  }
  r.metric("max_gap", max_gap);
  r.metric("max_strict_gap", max_strict);
  r.metric("max_identity_gap", max_identity);
  r.metric("non_rusc_instances", non_rusc);
  r.metric("integrand_driver_instances", integrand_drivers);
  r.passed = r.failures == 0;
  return r;
}

/// xi <= xi', f <= f' implies Y <= Y' at every node.
inline SuiteResult comparison_suite(const SuiteParams& p) {
  SuiteResult r{"comparison"};
  const double tol = p.tolerance.value_or(1e-10);
  double worst = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < p.instances; ++i) {
    Sampler s(instance_seed(p.seed, 2, static_cast<std::uint64_t>(i)));
    const Instance in = random_instance(s, {p.steps, ObstacleShape::Arbitrary, true});
    const Obstacle lifted = lift_obstacle(s, in.lattice, in.obstacle);
    const Driver f2 = lift_driver(s, in.driver);
    const RbsdeSolution y1 = solve_rbsde(in.lattice, in.obstacle, in.driver);
    const RbsdeSolution y2 = solve_rbsde(in.lattice, lifted, f2);
    const double v = max_excess(in.lattice, y1.y, y2.y);
    worst = std::max(worst, v);
    if (v > tol) ++r.failures;
    ++r.instances;
  }
  r.metric("max_violation", worst);
  r.passed = r.failures == 0;
  return r;
}

/// Flat-off conditions for A and C and the edge-by-edge dynamics.
inline SuiteResult skorokhod_suite(const SuiteParams& p) {
  SuiteResult r{"skorokhod"};
  const double flat_tol = p.tolerance.value_or(1e-12);
  const double residual_tol = 1e-10;
  double flat = 0.0, residual = 0.0, min_inc = 0.0, domination = 0.0;
  for (int i = 0; i < p.instances; ++i) {
    Sampler s(instance_seed(p.seed, 3, static_cast<std::uint64_t>(i)));
    const Instance in = random_instance(s, {p.steps, ObstacleShape::Arbitrary, true});
    const RbsdeSolution sol = solve_rbsde(in.lattice, in.obstacle, in.driver);
    const SkorokhodReport sk = verify_skorokhod(in.lattice, sol, in.obstacle);
    const double res = reconstruct(in.lattice, sol, in.obstacle, in.driver);
    const double fl = std::max(sk.max_A_violation, sk.max_C_violation);
    const double mi = std::min(sk.min_a_increment, sk.min_c_increment);
    flat = std::max(flat, fl);
    residual = std::max(residual, res);
    min_inc = std::min(min_inc, mi);
    domination = std::max(domination, sk.max_domination_gap);
    if (fl > flat_tol || res > residual_tol || mi < -flat_tol || sk.max_domination_gap > 0.0) ++r.failures;
    ++r.instances;
  }
  r.metric("max_flat_violation", flat);
  r.metric("max_reconstruction_residual", residual);
  r.metric("min_increment", min_inc);
  r.metric("max_domination_gap", domination);
  r.passed = r.failures == 0;
  return r;
}

/// E[h] = E[h dW] = E[h dNt] = E[h l dNt] = 0 for every Post node (l: a
/// random scalar mark weight per instance), and h genuinely nonzero.
inline SuiteResult orthogonality_suite(const SuiteParams& p) {
  SuiteResult r{"orthogonality"};
  const double tol = p.tolerance.value_or(1e-14);
  double worst = 0.0;
  int nonzero = 0;
  for (int i = 0; i < p.instances; ++i) {
    Sampler s(instance_seed(p.seed, 4, static_cast<std::uint64_t>(i)));
    const Instance in = random_instance(s, {p.steps, ObstacleShape::Arbitrary, true});
    const double mark = s.uniform(0.5, 2.0);
    const RbsdeSolution sol = solve_rbsde(in.lattice, in.obstacle, in.driver);
    double inst = 0.0, hmax = 0.0;
    for (int k = 0; k < in.lattice.steps(); ++k) {
      for (std::uint64_t q = 0; q < layer_size(k); ++q) {
        const Quad& h = sol.h(k, q);
        double e = 0.0, ew = 0.0, en = 0.0, el = 0.0;
        for (int b = 0; b < 4; ++b) {
          const Branch& br = in.lattice.branch(b);
          const double hb = h[static_cast<std::size_t>(b)];
          e += br.probability * hb;
          ew += br.probability * hb * br.dW;
          en += br.probability * hb * br.dNt;
          el += br.probability * hb * mark * br.dNt;
          hmax = std::max(hmax, std::abs(hb));
        }
        inst = std::max({inst, std::abs(e), std::abs(ew), std::abs(en), std::abs(el)});
      }
    }
    worst = std::max(worst, inst);
    if (hmax > 1e-12) ++nonzero;
    if (inst > tol) ++r.failures;
    ++r.instances;
  }
  const double fraction = r.instances ? static_cast<double>(nonzero) / r.instances : 0.0;
  r.metric("max_moment", worst);
  r.metric("nonzero_h_fraction", fraction);
  r.passed = r.failures == 0 && fraction >= 0.5;
  return r;
}

/// Ref^f is monotone, dominates xi and is idempotent on its range.
inline SuiteResult refop_suite(const SuiteParams& p) {
  SuiteResult r{"refop"};
  const double tol = p.tolerance.value_or(1e-9);
  double mono = -std::numeric_limits<double>::infinity(), dom = std::numeric_limits<double>::infinity(), idem = 0.0;
  for (int i = 0; i < p.instances; ++i) {
    Sampler s(instance_seed(p.seed, 5, static_cast<std::uint64_t>(i)));
    const Instance in = random_instance(s, {p.steps, ObstacleShape::Arbitrary, true});
    const Obstacle lifted = lift_obstacle(s, in.lattice, in.obstacle);
    const AdaptedProcess once = ref_operator(in.lattice, in.obstacle, in.driver);
    const AdaptedProcess twice = ref_operator(in.lattice, Obstacle(once), in.driver);
    const AdaptedProcess upper = ref_operator(in.lattice, lifted, in.driver);
    const double m = max_excess(in.lattice, once, upper);
    const double d = -max_excess(in.lattice, in.obstacle.values, once);
    const double id = max_abs_diff(in.lattice, twice, once);
    mono = std::max(mono, m);
    dom = std::min(dom, d);
    idem = std::max(idem, id);
    if (m > 1e-10 || d < 0.0 || id > tol) ++r.failures;
    ++r.instances;
  }
  r.metric("max_monotonicity_violation", mono);
  r.metric("min_domination_margin", dom);
  r.metric("max_idempotence_gap", idem);
  r.passed = r.failures == 0;
  return r;
}

/// Ref^f[xi] is a strong E^f-supermartingale.
inline SuiteResult supermartingale_suite(const SuiteParams& p) {
  SuiteResult r{"supermartingale"};
  const double tol = p.tolerance.value_or(kSupermartingaleTolerance);
  double worst = -std::numeric_limits<double>::infinity();
  std::uint64_t pairs = 0;
  for (int i = 0; i < p.instances; ++i) {
    Sampler s(instance_seed(p.seed, 6, static_cast<std::uint64_t>(i)));
    const Instance in = random_instance(s, {p.steps, ObstacleShape::Arbitrary, true});
    const AdaptedProcess y = ref_operator(in.lattice, in.obstacle, in.driver);
    const SupermartingaleReport rep = check_supermartingale(in.lattice, y, in.driver, 100, s.next());
    worst = std::max(worst, rep.max_violation);
    pairs += rep.pairs_checked;
    if (rep.max_violation > tol) ++r.failures;
    ++r.instances;
  }
  r.metric("max_violation", worst);
  r.metric("pairs_checked", static_cast<double>(pairs));
  r.passed = r.failures == 0;
  return r;
}

/// A-priori estimate at the root for pairs of continuous-time instances.
/// The instance draw does not depend on the step count, so the same seed
/// at K and 2K samples the same pair of problems.
struct EstimatePair {
  GridSpec grid;
  LinearDriverParams f1, f2;
  ContinuousPayoff g1, g2;
};

inline EstimatePair draw_estimate_pair(Sampler& s, int steps) {
  EstimatePair e;
  e.grid.num_steps = steps;
  e.grid.horizon = 1.0;
  e.grid.intensity = s.uniform(0.1, 1.5);
  const double lambda = e.grid.intensity;
  auto coefs = [&] {
    return LinearDriverParams{s.uniform(-0.5, 0.5), s.uniform(-0.3, 0.3), lambda * s.uniform(-0.5, 0.3),
                              s.uniform(-0.5, 0.5)};
  };
  e.f1 = coefs();
  e.f2 = e.f1;
  e.f2.rate += s.uniform(-0.1, 0.1);
  e.f2.constant += s.uniform(-0.3, 0.3);
  e.g1 = random_payoff(s);
  e.g2 = e.g1;
  e.g2.level += s.uniform(-0.2, 0.2);
  e.g2.slope += s.uniform(-0.2, 0.2);
  return e;
}

inline SuiteResult estimates_suite(const SuiteParams& p) {
  SuiteResult r{"estimates"};
  std::vector<double> slacks, ratios;
  int within = 0;
  double bound = 0.0;
  for (int i = 0; i < p.instances; ++i) {
    Sampler s(instance_seed(p.seed, 7, static_cast<std::uint64_t>(i)));
    const EstimatePair e = draw_estimate_pair(s, p.steps);
    const Lattice lattice(e.grid);
    bound = 1.0 + 10.0 * lattice.dt();
    const Driver f1 = linear_driver(e.f1, lattice.intensity()), f2 = linear_driver(e.f2, lattice.intensity());
    const Obstacle x1 = sample_payoff(lattice, e.g1), x2 = sample_payoff(lattice, e.g2);
    const RbsdeSolution s1 = solve_rbsde(lattice, x1, f1), s2 = solve_rbsde(lattice, x2, f2);
    const double lip = std::max(f1.lipschitz, f2.lipschitz);
    const double eta = 1.0 / (lip * lip);
    const double beta = 3.0 / eta + 2.0 * lip;
    const EstimateReport rep = a_priori_estimates(lattice, {&s1, &x1, &f1}, {&s2, &x2, &f2}, beta, eta);
    slacks.push_back(rep.slack_needed);
    ratios.push_back(rep.rhs > 0.0 ? rep.lhs / rep.rhs : 0.0);
    if (rep.slack_needed <= bound) ++within;
    ++r.instances;
  }
  r.failures = r.instances - within;
  const double fraction = r.instances ? static_cast<double>(within) / r.instances : 0.0;
  r.metric("slack_bound", bound);
  r.metric("fraction_within", fraction);
  r.metric("median_slack", median(slacks));
  r.metric("max_slack", slacks.empty() ? 0.0 : *std::max_element(slacks.begin(), slacks.end()));
  r.metric("median_lhs_over_rhs", median(ratios));
  // Histogram of lhs / rhs.
  const std::vector<std::pair<double, std::string>> edges{
      {1e-3, "<1e-3"}, {1e-2, "[1e-3,1e-2)"}, {1e-1, "[1e-2,1e-1)"}, {1.0, "[1e-1,1)"}, {bound, "[1,bound]"}};
  std::vector<std::uint64_t> counts(edges.size() + 1, 0);
  for (double v : ratios) {
    std::size_t b = 0;
    while (b < edges.size() && !(b + 1 == edges.size() ? v <= edges[b].first : v < edges[b].first)) ++b;
    ++counts[b];
  }
  for (std::size_t b = 0; b < edges.size(); ++b) r.histogram.emplace_back(edges[b].second, counts[b]);
  r.histogram.emplace_back(">bound", counts.back());
  r.passed = fraction >= 0.95;
  return r;
}

/// V+ (oracle) = y_post at the root and V = max(V+, xi).
inline SuiteResult strict_value_suite(const SuiteParams& p) {
  SuiteParams q = p;
  SuiteResult o = oracle_suite(q);
  SuiteResult r{"strict_value", true, o.instances, 0};
  const double tol = p.tolerance.value_or(1e-10);
  r.metric("max_strict_gap", o.get("max_strict_gap"));
  r.metric("max_identity_gap", o.get("max_identity_gap"));
  r.passed = o.get("max_strict_gap") <= tol && o.get("max_identity_gap") <= tol;
  r.failures = r.passed ? 0 : o.failures;
  return r;
}

/// Y_0 - E^f_{0,tau_eps}(xi) <= L eps on r.u.s.c. instances.
inline SuiteResult epsilon_optimal_suite(const SuiteParams& p) {
  SuiteResult r{"epsilon_optimal"};
  const double epsilons[] = {1e-1, 1e-2, 1e-3};
  double best_l = 0.0, max_l = 0.0, worst_ratio = 0.0;
  for (int i = 0; i < p.instances; ++i) {
    Sampler s(instance_seed(p.seed, 8, static_cast<std::uint64_t>(i)));
    const Instance in = random_instance(s, {p.steps, ObstacleShape::Rusc, true});
    const RbsdeSolution sol = solve_rbsde(in.lattice, in.obstacle, in.driver);
    const double L = epsilon_optimality_constant(in.driver.lipschitz, in.lattice.horizon());
    max_l = std::max(max_l, L);
    const StoppingRule start = rule_at(in.lattice, {0, Phase::Main});
    bool ok = true;
    for (double eps : epsilons) {
      const EpsilonRule rule = epsilon_optimal_rule(in.lattice, sol, in.obstacle, start, eps);
      const double gap = stopping_gap(in.lattice, sol, in.obstacle, in.driver, start, rule.rule);
      best_l = std::max(best_l, gap / eps);
      worst_ratio = std::max(worst_ratio, gap / (L * eps));
      if (gap > L * eps) ok = false;
    }
    if (!ok) ++r.failures;
    ++r.instances;
  }
  r.metric("empirical_best_L", best_l);
  r.metric("max_L", max_l);
  r.metric("max_gap_over_L_eps", worst_ratio);
  r.passed = r.failures == 0;
  return r;
}

/// tau0 attains Y_0 on instances passing both regularity surrogates and the
/// eps_n = 2^-n rules settle on it.
inline SuiteResult optimal_rule_suite(const SuiteParams& p) {
  SuiteResult r{"optimal_rule"};
  const double tol = p.tolerance.value_or(1e-9);
  double worst = 0.0;
  int settled = 0, continuing = 0;
  for (int i = 0; i < p.instances; ++i) {
    Sampler s(instance_seed(p.seed, 9, static_cast<std::uint64_t>(i)));
    const Instance in = random_instance(s, {p.steps, ObstacleShape::Regular, true});
    const RbsdeSolution sol = solve_rbsde(in.lattice, in.obstacle, in.driver);
    if (sol.y.main(0, 0) > in.obstacle.main(0, 0) + kTouchTolerance) ++continuing;
    bool ok = true;
    try {
      const OptimalRuleReport rep =
          optimal_rule(in.lattice, sol, in.obstacle, in.driver, rule_at(in.lattice, {0, Phase::Main}));
      worst = std::max(worst, rep.value_gap);
      if (rep.epsilon_sequence_reaches_rule) ++settled;
      ok = rep.value_gap <= tol && rep.epsilon_sequence_reaches_rule;
    } catch (const Error&) {
      ok = false;
    }
    if (!ok) ++r.failures;
    ++r.instances;
  }
  r.metric("max_value_gap", worst);
  r.metric("settled_instances", settled);
  r.metric("continuing_at_root", continuing);
  r.passed = r.failures == 0;
  return r;
}

/// Every competitor Ref^f[xi + lift] dominates Y.
inline SuiteResult snell_suite(const SuiteParams& p) {
  SuiteResult r{"snell"};
  double worst = std::numeric_limits<double>::infinity();
  for (int i = 0; i < p.instances; ++i) {
    Sampler s(instance_seed(p.seed, 10, static_cast<std::uint64_t>(i)));
    const Instance in = random_instance(s, {p.steps, ObstacleShape::Arbitrary, true});
    const RbsdeSolution sol = solve_rbsde(in.lattice, in.obstacle, in.driver);
    const SnellMinimalityReport rep = snell_minimality_check(in.lattice, sol, in.obstacle, in.driver, 4, s.next());
    worst = std::min(worst, rep.min_margin);
    if (!rep.passes) ++r.failures;
    ++r.instances;
  }
  r.metric("min_margin", worst);
  r.passed = r.failures == 0;
  return r;
}

using SuiteFn = SuiteResult (*)(const SuiteParams&);

/// Suites runnable by name; the first eight form the default verify run.
inline const std::vector<std::pair<std::string, SuiteFn>>& suite_registry() {
  static const std::vector<std::pair<std::string, SuiteFn>> registry{
      {"comparison", comparison_suite},
      {"skorokhod", skorokhod_suite},
      {"orthogonality", orthogonality_suite},
      {"refop", refop_suite},
      {"supermartingale", supermartingale_suite},
      {"estimates", estimates_suite},
      {"strict_value", strict_value_suite},
      {"epsilon_optimal", epsilon_optimal_suite},
      {"optimal_rule", optimal_rule_suite},
      {"snell", snell_suite},
      {"oracle", oracle_suite},
  };
  return registry;
}

inline std::vector<std::string> default_suites() {
  return {"comparison",      "skorokhod", "orthogonality", "refop",
          "supermartingale", "estimates", "strict_value",  "epsilon_optimal"};
}

inline SuiteFn find_suite(const std::string& name) {
  for (const auto& [n, fn] : suite_registry()) {
    if (n == name) return fn;
  }
  throw Error(ErrorCode::UnknownCheck, "unknown check '" + name + "'");
}

}  // namespace rbsde
