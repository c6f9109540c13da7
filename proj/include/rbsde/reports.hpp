#pragma once

// CSV tables for solutions, oracle runs and pricing. Numbers use %.17g so
// that a table read back reproduces the doubles exactly.

#include <cstdio>
#include <sstream>
#include <string>

#include "rbsde/market.hpp"
#include "rbsde/stopping.hpp"

namespace rbsde {

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

namespace detail {

/// Shared prefix of the solution and pricing rows. Post-only columns are
/// empty on Main rows and vice versa.
inline void solution_row(std::ostringstream& os, const Lattice& lattice, const RbsdeSolution& sol,
                         const Obstacle& xi, const NodeId& n) {
  os << to_string(n) << ',' << fmt(lattice.time(n.step)) << ',' << phase_name(n.phase) << ',' << fmt(xi[n]) << ','
     << fmt(sol.y[n]) << ',';
  if (n.phase == Phase::Post) {
    os << fmt(sol.z(n.step, n.path)) << ',' << fmt(sol.kappa(n.step, n.path)) << ',' << fmt(sol.a(n.step, n.path))
       << ",,";
    const Quad& h = sol.h(n.step, n.path);
    os << fmt(h[0]) << ',' << fmt(h[1]) << ',' << fmt(h[2]) << ',' << fmt(h[3]);
  } else {
    os << ",,,";
    os << (n.step < lattice.steps() ? fmt(sol.c(n.step, n.path)) : fmt(0.0));
    os << ",,,,";
  }
}

}  // namespace detail

inline constexpr const char* kSolutionHeader = "node_id,t,phase,xi,y,z,kappa,dA,dC,dh_b0,dh_b1,dh_b2,dh_b3";

inline std::string solution_csv(const Lattice& lattice, const RbsdeSolution& sol, const Obstacle& xi) {
  std::ostringstream os;
  os << kSolutionHeader << '\n';
  for_each_node(lattice, [&](const NodeId& n) {
    detail::solution_row(os, lattice, sol, xi, n);
    os << '\n';
  });
  return os.str();
}

inline std::string pricing_csv(const Lattice& lattice, const PricingResult& price, const HedgeReport& hedge) {
  std::ostringstream os;
  os << kSolutionHeader << ",S1,S2,phi1,phi2,wealth\n";
  for_each_node(lattice, [&](const NodeId& n) {
    detail::solution_row(os, lattice, price.solution, price.obstacle, n);
    os << ',' << fmt(price.assets.s1[n]) << ',' << fmt(price.assets.s2[n]) << ',';
    if (n.phase == Phase::Post) {
      const auto& phi = hedge.phi(n.step, n.path);
      os << fmt(phi[0]) << ',' << fmt(phi[1]);
    } else {
      os << ',';
    }
    os << ',' << fmt(hedge.wealth[n]) << '\n';
  });
  return os.str();
}

/// One row per stopping rule on the whole tree.
inline std::string oracle_rules_csv(const Lattice& lattice, const StoppingOracle& oracle) {
  const std::vector<double> values = oracle.rule_values(lattice.root());
  std::ostringstream os;
  os << "rule_id,rule_description,value_at_root\n";
  for (std::uint64_t i = 0; i < values.size(); ++i)
    os << i << ',' << csv_quote(describe_rule(lattice, oracle.space().rule(i))) << ',' << fmt(values[i]) << '\n';
  return os.str();
}

}  // namespace rbsde
