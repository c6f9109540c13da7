#pragma once

// Optimal stopping under E^f: brute-force value oracles, epsilon-optimal and
// optimal rules, and Snell-envelope checks.

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "rbsde/rbsde.hpp"

namespace rbsde {

struct OracleResult {
  double value = 0.0;
  std::uint64_t argmax = 0;  // canonical rule index on the queried subtree (lowest on ties)
  std::uint64_t rule_count = 0;
};

/// sup over every stopping rule on the subtree of a node of E^f_{node,tau}(xi_tau).
///
/// Each rule's value is computed explicitly. Rule values of a subtree are
/// combined from rule values of its children (every combination is
/// visited), and the top-level combination is streamed. The one-step
/// evaluation uses its own moment sums and a bracketed secant solve,
/// sharing no code with the Picard solver.
class StoppingOracle {
 public:
  StoppingOracle(const Lattice& lattice, const Obstacle& obstacle, const Driver& driver,
                 int limit = kDefaultOracleLimit)
      : lattice_(lattice), obstacle_(obstacle), driver_(driver), space_(lattice, lattice.root()) {
    if (lattice.steps() > limit)
      throw Error(ErrorCode::OracleTooLarge, "K = " + std::to_string(lattice.steps()) +
                                                 " exceeds the oracle limit " + std::to_string(limit));
    require_contraction(lattice, driver);
    for (const Branch& br : lattice.branches()) {
      dw_var_ += br.probability * br.dW * br.dW;
      dn_var_ += br.probability * br.dNt * br.dNt;
    }
  }

  OracleResult value(const NodeId& node) const {
    if (node.phase == Phase::Main && node.step < lattice_.steps()) return value_and_strict(node).first;
    OracleResult best;
    best.rule_count = space_.count(node.step, node.phase);
    if (node.phase == Phase::Main) {
      best.value = obstacle_.main(node.step, node.path);
      return best;
    }
    const OracleResult tail = stream_post(node);
    best.value = tail.value;
    best.argmax = tail.argmax;
    return best;
  }

  /// V+ at a Main node: rules that stop at its Post phase or later.
  OracleResult strict_value(const NodeId& main_node) const { return value_and_strict(main_node).second; }

  /// (V, V+) at a non-terminal Main node from one pass over the rules.
  std::pair<OracleResult, OracleResult> value_and_strict(const NodeId& main_node) const {
    if (main_node.phase != Phase::Main || main_node.step >= lattice_.steps())
      throw Error(ErrorCode::PreconditionFailed, "strict value needs a non-terminal Main node");
    const NodeId post{main_node.step, Phase::Post, main_node.path};
    OracleResult strict = stream_post(post);
    strict.rule_count = space_.count(post.step, post.phase);
    OracleResult full;
    full.rule_count = space_.count(main_node.step, main_node.phase);
    // Index 0 stops immediately; index 1 + j continues with Post rule j.
    full.value = obstacle_.main(main_node.step, main_node.path);
    if (strict.value > full.value) {
      full.value = strict.value;
      full.argmax = strict.argmax + 1;
    }
    return {full, strict};
  }

  /// Value of every rule on the subtree, in canonical index order.
  std::vector<double> rule_values(const NodeId& node, std::uint64_t cap = 2'000'000) const {
    if (space_.count(node.step, node.phase) > cap)
      throw Error(ErrorCode::OracleTooLarge, "subtree has more than " + std::to_string(cap) + " rules");
    return node.phase == Phase::Main ? main_list(node.step, node.path) : post_list(node.step, node.path);
  }

  const RuleSpace& space() const { return space_; }

  /// Root of y = m + f(t, y, z, kappa) dt for the branch values v.
  double step_value(int k, const Quad& v) const {
    Moments mo;
    for (int b = 0; b < 4; ++b) mo += branch_moments(b, v[static_cast<std::size_t>(b)]);
    return solve_step(k, mo);
  }

 private:
  /// Probability-weighted (v, v dW, v dNt) of one branch.
  struct Moments {
    double m = 0.0, ez = 0.0, ek = 0.0;
    Moments& operator+=(const Moments& o) {
      m += o.m;
      ez += o.ez;
      ek += o.ek;
      return *this;
    }
    friend Moments operator+(Moments a, const Moments& b) { return a += b; }
  };

  Moments branch_moments(int b, double value) const {
    const Branch& br = lattice_.branch(b);
    const double pv = br.probability * value;
    return {pv, pv * br.dW, pv * br.dNt};
  }

  /// Secant iteration started from a Picard step, kept inside the a-priori
  /// bracket |y - m| <= |f(m)| dt / (1 - K_f dt); g(y) = y - m - f(y) dt is
  /// increasing with slope in [1 - K_f dt, 1 + K_f dt].
  double solve_step(int k, const Moments& mo) const {
    const double z = mo.ez / dw_var_;
    const double kappa = mo.ek / dn_var_;
    const double m = mo.m;
    const double t = lattice_.time(k);
    const double dt = lattice_.dt();
    const double f0 = driver_(t, m, z, kappa);
    if (f0 == 0.0) return m;
    const double radius = 1.01 * std::abs(f0) * dt / (1.0 - driver_.lipschitz * dt) + 1e-12;
    const double lo = m - radius, hi = m + radius;
    auto g = [&](double y) { return y - m - driver_(t, y, z, kappa) * dt; };
    double x0 = m, g0 = -f0 * dt;
    double x1 = m + f0 * dt, g1 = g(x1);
    for (int it = 0; it < 300; ++it) {
      const double scale = std::max(1.0, std::abs(x1));
      if (g1 == 0.0 || std::abs(g1) <= 1e-15 * scale) return x1;
      if (g1 == g0) break;
      double x2 = x1 - g1 * (x1 - x0) / (g1 - g0);
      x2 = std::clamp(x2, lo, hi);
      if (std::abs(x2 - x1) <= 4e-16 * scale) return x2;
      x0 = x1;
      g0 = g1;
      x1 = x2;
      g1 = g(x1);
    }
    // Fallback: bisection on the bracket.
    double a = lo, b = hi;
    for (int it = 0; it < 200 && b - a > 4e-16 * std::max(1.0, std::abs(a)); ++it) {
      const double c = 0.5 * (a + b);
      (g(c) > 0.0 ? b : a) = c;
    }
    return 0.5 * (a + b);
  }

  std::vector<double> main_list(int k, std::uint64_t p) const {
    std::vector<double> out{obstacle_.main(k, p)};
    if (k == lattice_.steps()) return out;
    const std::vector<double> tail = post_list(k, p);
    out.insert(out.end(), tail.begin(), tail.end());
    return out;
  }

  std::vector<double> post_list(int k, std::uint64_t p) const {
    std::array<std::vector<double>, 4> kids;
    for (int b = 0; b < 4; ++b) kids[static_cast<std::size_t>(b)] = main_list(k + 1, Lattice::child(p, b));
    const std::size_t n = kids[0].size();
    std::vector<double> out;
    out.reserve(1 + n * n * n * n);
    out.push_back(obstacle_.post(k, p));
    Quad v{};
    for (std::size_t i0 = 0; i0 < n; ++i0) {
      v[0] = kids[0][i0];
      for (std::size_t i1 = 0; i1 < n; ++i1) {
        v[1] = kids[1][i1];
        for (std::size_t i2 = 0; i2 < n; ++i2) {
          v[2] = kids[2][i2];
          for (std::size_t i3 = 0; i3 < n; ++i3) {
            v[3] = kids[3][i3];
            out.push_back(step_value(k, v));
          }
        }
      }
    }
    return out;
  }

  OracleResult stream_post(const NodeId& post) const {
    const int k = post.step;
    std::array<std::vector<double>, 4> kids;
    for (int b = 0; b < 4; ++b) kids[static_cast<std::size_t>(b)] = main_list(k + 1, Lattice::child(post.path, b));
    const std::size_t n = kids[0].size();

    struct Partial {
      double value = -std::numeric_limits<double>::infinity();
      std::uint64_t index = 0;
    };
    std::vector<Partial> partial(worker_count());
    std::array<std::vector<Moments>, 4> mom;
    for (int b = 0; b < 4; ++b) {
      for (double v : kids[static_cast<std::size_t>(b)]) mom[static_cast<std::size_t>(b)].push_back(branch_moments(b, v));
    }
    const std::size_t used = parallel_chunks(n, [&](std::size_t chunk, std::size_t begin, std::size_t end) {
      Partial best;
      for (std::size_t i0 = begin; i0 < end; ++i0) {
        const Moments m0 = mom[0][i0];
        for (std::size_t i1 = 0; i1 < n; ++i1) {
          const Moments m01 = m0 + mom[1][i1];
          for (std::size_t i2 = 0; i2 < n; ++i2) {
            const Moments m012 = m01 + mom[2][i2];
            for (std::size_t i3 = 0; i3 < n; ++i3) {
              const double value = solve_step(k, m012 + mom[3][i3]);
              if (value > best.value) {
                best.value = value;
                best.index = 1 + ((i0 * n + i1) * n + i2) * n + i3;
              }
            }
          }
        }
      }
      partial[chunk] = best;
    });

    OracleResult out;
    out.rule_count = space_.count(k, Phase::Post);
    out.value = obstacle_.post(k, post.path);
    out.argmax = 0;
    for (std::size_t c = 0; c < used; ++c) {
      if (partial[c].value > out.value) {
        out.value = partial[c].value;
        out.argmax = partial[c].index;
      }
    }
    return out;
  }

  const Lattice& lattice_;
  const Obstacle& obstacle_;
  const Driver& driver_;
  RuleSpace space_;
  double dw_var_ = 0.0;
  double dn_var_ = 0.0;
};

inline double value_by_oracle(const Lattice& lattice, const Obstacle& obstacle, const Driver& driver,
                              const NodeId& node, int limit = kDefaultOracleLimit) {
  return StoppingOracle(lattice, obstacle, driver, limit).value(node).value;
}

inline double strict_value_by_oracle(const Lattice& lattice, const Obstacle& obstacle, const Driver& driver,
                                     const NodeId& main_node, int limit = kDefaultOracleLimit) {
  return StoppingOracle(lattice, obstacle, driver, limit).strict_value(main_node).value;
}

/// Oracle value at every node.
inline AdaptedProcess value_family_by_oracle(const Lattice& lattice, const Obstacle& obstacle, const Driver& driver,
                                             int limit = kDefaultOracleLimit) {
  const StoppingOracle oracle(lattice, obstacle, driver, limit);
  AdaptedProcess out(lattice, 0.0);
  for_each_node(lattice, [&](const NodeId& n) { out[n] = oracle.value(n).value; });
  return out;
}

// ---------------------------------------------------------------------------

/// max over start's first-hit nodes of Y_start - E^f_{start,rule}(xi_rule).
inline double stopping_gap(const Lattice& lattice, const RbsdeSolution& sol, const Obstacle& obstacle,
                           const Driver& driver, const StoppingRule& start, const StoppingRule& rule) {
  const AdaptedProcess ef = ef_conditional_expectation(lattice, start, rule, obstacle.values, driver);
  const RuleGeometry gs = rule_geometry(lattice, start);
  double gap = -std::numeric_limits<double>::infinity();
  for_each_node(lattice, [&](const NodeId& n) {
    if (gs.first_hit[n]) gap = std::max(gap, sol.y[n] - ef[n]);
  });
  return gap;
}

/// exp((1 + 2K + K^2) T).
inline double epsilon_optimality_constant(double lipschitz, double horizon) {
  return std::exp((1.0 + 2.0 * lipschitz + lipschitz * lipschitz) * horizon);
}

struct EpsilonRule {
  StoppingRule rule;
  /// Hits landing on a Post node whose Main sibling was eligible: the
  /// infimum is only reached just after the grid time, so Y <= xi + eps
  /// fails at the grid time itself.
  std::uint64_t unattained_hits = 0;
  bool hit_inequality_holds = true;
};

inline EpsilonRule epsilon_optimal_rule(const Lattice& lattice, const RbsdeSolution& sol, const Obstacle& obstacle,
                                        const StoppingRule& start, double epsilon) {
  EpsilonRule out;
  out.rule = hitting_rule(
      lattice, [&](const NodeId& n) { return sol.y[n] <= obstacle[n] + epsilon; }, &start);
  const RuleGeometry g = rule_geometry(lattice, out.rule);
  const RuleGeometry gs = rule_geometry(lattice, start);
  for (int k = 0; k < lattice.steps(); ++k) {
    for (std::uint64_t p = 0; p < layer_size(k); ++p) {
      const NodeId m{k, Phase::Main, p};
      if (g.first_hit.post(k, p) && !gs.continuing[m]) ++out.unattained_hits;
    }
  }
  out.hit_inequality_holds = out.unattained_hits == 0;
  return out;
}

struct OptimalRuleReport {
  StoppingRule rule;
  double value_gap = 0.0;              // max |E^f_{start,tau0}(xi) - Y_start|
  int epsilon_steps = 0;               // n at which the eps_n = 2^-n rules settled
  bool epsilon_sequence_reaches_rule = false;
};

inline constexpr double kTouchTolerance = 1e-10;

/// tau0 = first time at or after start with Y = xi.
inline OptimalRuleReport optimal_rule(const Lattice& lattice, const RbsdeSolution& sol, const Obstacle& obstacle,
                                      const Driver& driver, const StoppingRule& start) {
  if (!obstacle.is_rusc() || !obstacle.is_lusc_surrogate())
    throw Error(ErrorCode::PreconditionFailed, "obstacle fails the r.u.s.c. or l.u.s.c. surrogate");
  OptimalRuleReport out;
  out.rule = hitting_rule(
      lattice, [&](const NodeId& n) { return std::abs(sol.y[n] - obstacle[n]) <= kTouchTolerance; }, &start);
  const AdaptedProcess ef = ef_conditional_expectation(lattice, start, out.rule, obstacle.values, driver);
  const RuleGeometry gs = rule_geometry(lattice, start);
  for_each_node(lattice, [&](const NodeId& n) {
    if (gs.first_hit[n]) out.value_gap = std::max(out.value_gap, std::abs(ef[n] - sol.y[n]));
  });
  if (out.value_gap > 1e-9)
    throw Error(ErrorCode::NotOptimal, "tau0 misses Y_start by " + std::to_string(out.value_gap));

  // eps_n = 2^-n until the rule is unchanged twice in a row. Repeats only
  // count once eps_n is below every gap Y - xi that exceeds the touch
  // tolerance; before that a gap sitting between consecutive eps_n would
  // end the sequence early.
  double smallest_gap = std::numeric_limits<double>::infinity();
  for_each_node(lattice, [&](const NodeId& n) {
    const double gap = sol.y[n] - obstacle[n];
    if (gap > kTouchTolerance) smallest_gap = std::min(smallest_gap, gap);
  });
  StoppingRule previous;
  int unchanged = 0;
  for (int n = 1; n <= 40; ++n) {
    const double eps = std::ldexp(1.0, -n);
    const StoppingRule current = epsilon_optimal_rule(lattice, sol, obstacle, start, eps).rule;
    const bool repeat = n > 1 && current == previous;
    unchanged = (repeat && eps < smallest_gap) ? unchanged + 1 : 0;
    previous = current;
    if (unchanged >= 2) {
      out.epsilon_steps = n;
      break;
    }
  }
  out.epsilon_sequence_reaches_rule = out.epsilon_steps > 0 && previous == out.rule;
  return out;
}

struct OptimalityCriterionReport {
  bool is_martingale_segment = false;
  bool touches_obstacle = false;
  bool optimal = false;
  double direct_gap = 0.0;  // max over start hits of Y_start - E^f_{start,candidate}(xi)
};

/// Optimal iff A and C stay flat before the candidate and Y = xi where it stops.
inline OptimalityCriterionReport check_optimality_criterion(const Lattice& lattice, const RbsdeSolution& sol,
                                                            const Obstacle& obstacle, const Driver& driver,
                                                            const StoppingRule& candidate,
                                                            const StoppingRule& start) {
  OptimalityCriterionReport r;
  const RuleGeometry gs = rule_geometry(lattice, start);
  const RuleGeometry gc = rule_geometry(lattice, candidate);
  double flat = 0.0;
  for (int k = 0; k < lattice.steps(); ++k) {
    for (std::uint64_t p = 0; p < layer_size(k); ++p) {
      if (!gs.continuing.main(k, p) && gc.continuing.main(k, p)) flat = std::max(flat, std::abs(sol.c(k, p)));
      if (!gs.continuing.post(k, p) && gc.continuing.post(k, p)) flat = std::max(flat, std::abs(sol.a(k, p)));
    }
  }
  r.is_martingale_segment = flat <= 1e-12;
  double touch = 0.0;
  for_each_node(lattice, [&](const NodeId& n) {
    if (gc.first_hit[n]) touch = std::max(touch, std::abs(sol.y[n] - obstacle[n]));
  });
  r.touches_obstacle = touch <= kTouchTolerance;
  r.optimal = r.is_martingale_segment && r.touches_obstacle;
  r.direct_gap = stopping_gap(lattice, sol, obstacle, driver, start, candidate);
  return r;
}

struct SnellMinimalityReport {
  int competitors = 0;
  double min_margin = std::numeric_limits<double>::infinity();  // min over nodes of competitor - Y
  bool passes = false;
};

/// Competitors Ref^f[xi + noise], noise >= 0, are strong E^f-supermartingales
/// dominating xi; each must dominate Y.
inline SnellMinimalityReport snell_minimality_check(const Lattice& lattice, const RbsdeSolution& sol,
                                                    const Obstacle& obstacle, const Driver& driver,
                                                    int competitor_count, std::uint64_t seed = 23) {
  SnellMinimalityReport r;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> lift(0.0, 0.5);
  auto account = [&](const AdaptedProcess& competitor) {
    ++r.competitors;
    for_each_node(lattice, [&](const NodeId& n) { r.min_margin = std::min(r.min_margin, competitor[n] - sol.y[n]); });
  };
  account(sol.y);
  for (int i = 0; i < competitor_count; ++i) {
    Obstacle lifted = obstacle;
    const bool constant = i % 2 == 0;
    const double shift = lift(rng);
    for_each_node(lattice, [&](const NodeId& n) { lifted.values[n] += constant ? shift : lift(rng); });
    account(ref_operator(lattice, lifted, driver));
  }
  r.passes = r.min_margin >= -1e-10;
  return r;
}

}  // namespace rbsde
