#pragma once

// Strong E^f-supermartingale test: E^f_{sigma,tau}(phi_tau) <= phi_sigma for
// ordered pairs of stopping rules.

#include <random>

#include "rbsde/bsde.hpp"

namespace rbsde {

struct SupermartingaleReport {
  double max_violation = -std::numeric_limits<double>::infinity();  // max of E^f(phi_tau) - phi_sigma
  std::uint64_t pairs_checked = 0;
  bool exhaustive = false;
  bool is_supermartingale = false;
};

inline constexpr double kSupermartingaleTolerance = 1e-9;

/// Rule spaces up to this size are checked over every ordered pair.
inline constexpr std::uint64_t kExhaustivePairRules = 1000;

namespace detail {

inline void accumulate_pairs(const Lattice& lattice, const AdaptedProcess& phi, const Driver& driver,
                             const StoppingRule& tau, const std::vector<StoppingRule>& sigmas,
                             SupermartingaleReport& report) {
  const BsdeSolution sol = solve_bsde(lattice, phi, tau, driver);
  const RuleGeometry gt = rule_geometry(lattice, tau);
  for (const StoppingRule& sigma : sigmas) {
    const RuleGeometry gs = rule_geometry(lattice, sigma);
    bool ordered = true;
    for_each_node(lattice, [&](const NodeId& n) {
      if (gs.continuing[n] && !gt.continuing[n]) ordered = false;
    });
    if (!ordered) continue;
    ++report.pairs_checked;
    for_each_node(lattice, [&](const NodeId& n) {
      if (gs.first_hit[n]) report.max_violation = std::max(report.max_violation, sol.x[n] - phi[n]);
    });
  }
}

inline StoppingRule random_rule(const Lattice& lattice, std::mt19937_64& rng, double stop_probability) {
  std::bernoulli_distribution coin(stop_probability);
  StoppingRule rule(lattice);
  for_each_node(lattice, [&](const NodeId& n) {
    if (coin(rng)) rule.set(n);
  });
  return canonicalize(lattice, rule);
}

}  // namespace detail

/// Exhaustive over all rule pairs when the rule space is small, otherwise
/// all deterministic sub-time pairs plus `pair_budget` random ordered pairs.
inline SupermartingaleReport check_supermartingale(const Lattice& lattice, const AdaptedProcess& phi,
                                                   const Driver& driver, int pair_budget = 200,
                                                   std::uint64_t seed = 17) {
  SupermartingaleReport report;
  const RuleSpace space(lattice, lattice.root());
  if (space.size() <= kExhaustivePairRules) {
    report.exhaustive = true;
    std::vector<StoppingRule> rules;
    rules.reserve(space.size());
    for (std::uint64_t i = 0; i < space.size(); ++i) rules.push_back(space.rule(i));
    for (const StoppingRule& tau : rules) detail::accumulate_pairs(lattice, phi, driver, tau, rules, report);
  } else {
    std::vector<StoppingRule> fixed;
    for (int k = 0; k <= lattice.steps(); ++k) {
      fixed.push_back(rule_at(lattice, {k, Phase::Main}));
      if (k < lattice.steps()) fixed.push_back(rule_at(lattice, {k, Phase::Post}));
    }
    for (const StoppingRule& tau : fixed) detail::accumulate_pairs(lattice, phi, driver, tau, fixed, report);
    std::mt19937_64 rng(seed);
    for (int i = 0; i < pair_budget; ++i) {
      const StoppingRule tau = detail::random_rule(lattice, rng, 0.3);
      const StoppingRule sigma = rule_min(lattice, detail::random_rule(lattice, rng, 0.3), tau);
      detail::accumulate_pairs(lattice, phi, driver, tau, {sigma}, report);
    }
  }
  report.is_supermartingale = report.max_violation <= kSupermartingaleTolerance;
  return report;
}

}  // namespace rbsde
