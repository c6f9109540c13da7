#pragma once

// Reflected BSDE on the doubled grid.
//
// Per step, backward:
//   cont   = implicit one-step value over Y(k+1, Main)
//   Y_post = max(xi_post, cont)
//   Y_main = max(xi_main, Y_post)
// dC_k = Y_main - Y_post charges the Main -> Post edge; dA_{k+1} charges the
// random edge out of Post(k) and is the amount that closes the dynamics
//   Y_post = Y_next + f(t_k, Y_post, z, kappa) dt + dA - z dW - kappa dNt - dh
// on every branch.

#include <cmath>
#include <functional>
#include <limits>

#include "rbsde/bsde.hpp"
#include "rbsde/supermartingale.hpp"

namespace rbsde {

/// Ladlag payoff: value at each grid time (Main) and just after it (Post).
/// No relation between the two is required.
struct Obstacle {
  AdaptedProcess values;

  Obstacle() = default;
  explicit Obstacle(AdaptedProcess v) : values(std::move(v)) {}
  Obstacle(const Lattice& lattice, double constant) : values(lattice, constant) {}

  double main(int k, std::uint64_t p) const { return values.main(k, p); }
  double post(int k, std::uint64_t p) const { return values.post(k, p); }
  double operator[](const NodeId& n) const { return values[n]; }

  /// main >= post everywhere (right upper-semicontinuity surrogate).
  bool is_rusc() const {
    for (int k = 0; k < values.post.layer_count(); ++k) {
      for (std::uint64_t p = 0; p < layer_size(k); ++p) {
        if (values.main(k, p) < values.post(k, p)) return false;
      }
    }
    return true;
  }

  /// post(k) >= main(k+1) on every edge (no upward left jumps).
  bool is_lusc_surrogate() const {
    for (int k = 0; k < values.post.layer_count(); ++k) {
      for (std::uint64_t p = 0; p < layer_size(k); ++p) {
        for (int b = 0; b < 4; ++b) {
          if (values.post(k, p) < values.main(k + 1, Lattice::child(p, b))) return false;
        }
      }
    }
    return true;
  }
};

struct RbsdeSolution {
  AdaptedProcess y;
  Layers<double> z;      // on Post nodes
  Layers<double> kappa;  // on Post nodes
  Layers<Quad> h;        // per random edge, indexed by the Post node
  Layers<double> a;      // dA_{k+1}, on Post(k)
  Layers<double> c;      // dC_k, on Main(k); zero at K
};

struct SolverOptions {
  double picard_offset = 0.0;  // added to the initial Picard guess
};

inline RbsdeSolution solve_rbsde(const Lattice& lattice, const Obstacle& obstacle, const Driver& driver,
                                 const SolverOptions& options = {}) {
  require_contraction(lattice, driver);
  const int K = lattice.steps();
  const double dt = lattice.dt();
  RbsdeSolution sol{AdaptedProcess(lattice, 0.0), post_layers(lattice, 0.0), post_layers(lattice, 0.0),
                    post_layers(lattice, Quad{}),  post_layers(lattice, 0.0), main_layers(lattice, 0.0)};
  sol.y.main.layer(K) = obstacle.values.main.layer(K);

  for (int k = K - 1; k >= 0; --k) {
    const double t = lattice.time(k);
    parallel_for(layer_size(k), [&](std::size_t i) {
      const std::uint64_t p = i;
      Quad next{};
      for (int b = 0; b < 4; ++b) next[static_cast<std::size_t>(b)] = sol.y.main(k + 1, Lattice::child(p, b));
      const double guess = conditional_expectation(lattice, next) + options.picard_offset;
      const OneStep step = onestep_implicit(lattice, next, driver, t, guess);
      const double y_post = std::max(obstacle.post(k, p), step.y);
      const double mean = conditional_expectation(lattice, next);
      sol.y.post(k, p) = y_post;
      sol.z(k, p) = step.z;
      sol.kappa(k, p) = step.kappa;
      sol.h(k, p) = step.h;
      sol.a(k, p) = (y_post == step.y) ? 0.0 : y_post - mean - driver(t, y_post, step.z, step.kappa) * dt;
      const double y_main = std::max(obstacle.main(k, p), y_post);
      sol.y.main(k, p) = y_main;
      sol.c(k, p) = y_main - y_post;
    });
  }
  return sol;
}

// ---------------------------------------------------------------------------

struct SkorokhodReport {
  double max_A_violation = 0.0;  // max |(Y_post - xi_post) dA|
  double max_C_violation = 0.0;  // max |(Y_main - xi_main) dC|
  double min_a_increment = 0.0;
  double min_c_increment = 0.0;
  double max_domination_gap = 0.0;  // max (xi - Y)^+
  bool ac_trivial = true;           // A has no continuous part on a grid
};

inline SkorokhodReport verify_skorokhod(const Lattice& lattice, const RbsdeSolution& sol, const Obstacle& obstacle) {
  SkorokhodReport r;
  for (int k = 0; k <= lattice.steps(); ++k) {
    for (std::uint64_t p = 0; p < layer_size(k); ++p) {
      r.max_domination_gap = std::max(r.max_domination_gap, obstacle.main(k, p) - sol.y.main(k, p));
      if (k == lattice.steps()) continue;
      r.max_domination_gap = std::max(r.max_domination_gap, obstacle.post(k, p) - sol.y.post(k, p));
      r.max_A_violation = std::max(r.max_A_violation, std::abs((sol.y.post(k, p) - obstacle.post(k, p)) * sol.a(k, p)));
      r.max_C_violation = std::max(r.max_C_violation, std::abs((sol.y.main(k, p) - obstacle.main(k, p)) * sol.c(k, p)));
      r.min_a_increment = std::min(r.min_a_increment, sol.a(k, p));
      r.min_c_increment = std::min(r.min_c_increment, sol.c(k, p));
    }
  }
  return r;
}

struct ReconstructionReport {
  double max_random_edge = 0.0;
  double max_deterministic_edge = 0.0;
  double terminal = 0.0;
  double max() const { return std::max({max_random_edge, max_deterministic_edge, terminal}); }
};

inline ReconstructionReport reconstruction_report(const Lattice& lattice, const RbsdeSolution& sol,
                                                  const Obstacle& obstacle, const Driver& driver) {
  ReconstructionReport r;
  const int K = lattice.steps();
  const double dt = lattice.dt();
  for (std::uint64_t p = 0; p < layer_size(K); ++p)
    r.terminal = std::max(r.terminal, std::abs(sol.y.main(K, p) - obstacle.main(K, p)));
  for (int k = 0; k < K; ++k) {
    const double t = lattice.time(k);
    for (std::uint64_t p = 0; p < layer_size(k); ++p) {
      const double y_post = sol.y.post(k, p);
      const double drift = driver(t, y_post, sol.z(k, p), sol.kappa(k, p)) * dt;
      for (int b = 0; b < 4; ++b) {
        const Branch& br = lattice.branch(b);
        const double rhs = sol.y.main(k + 1, Lattice::child(p, b)) + drift + sol.a(k, p) - sol.z(k, p) * br.dW -
                           sol.kappa(k, p) * br.dNt - sol.h(k, p)[static_cast<std::size_t>(b)];
        r.max_random_edge = std::max(r.max_random_edge, std::abs(y_post - rhs));
      }
      r.max_deterministic_edge =
          std::max(r.max_deterministic_edge, std::abs(sol.y.main(k, p) - y_post - sol.c(k, p)));
    }
  }
  return r;
}

/// Max residual of the RBSDE dynamics over every edge and the terminal condition.
inline double reconstruct(const Lattice& lattice, const RbsdeSolution& sol, const Obstacle& obstacle,
                          const Driver& driver) {
  return reconstruction_report(lattice, sol, obstacle, driver).max();
}

/// Ref^f[xi]: first component of the reflected solution.
inline AdaptedProcess ref_operator(const Lattice& lattice, const Obstacle& obstacle, const Driver& driver) {
  return solve_rbsde(lattice, obstacle, driver).y;
}

/// E[A_T] and E[C_T].
inline double total_a_mass(const Lattice& lattice, const RbsdeSolution& sol) {
  double total = 0.0;
  for (int k = 0; k < lattice.steps(); ++k) {
    for (std::uint64_t p = 0; p < layer_size(k); ++p) total += lattice.path_probability(k, p) * sol.a(k, p);
  }
  return total;
}

inline double total_c_mass(const Lattice& lattice, const RbsdeSolution& sol) {
  double total = 0.0;
  for (int k = 0; k < lattice.steps(); ++k) {
    for (std::uint64_t p = 0; p < layer_size(k); ++p) total += lattice.path_probability(k, p) * sol.c(k, p);
  }
  return total;
}

// ---------------------------------------------------------------------------
// E^f-Mertens decomposition of a strong E^f-supermartingale.

struct MertensDecomposition {
  Layers<double> z;
  Layers<double> kappa;
  Layers<Quad> h;
  Layers<double> a;
  Layers<double> c;
  double residual = 0.0;         // dynamics residual of (input, z, kappa, h, a, c)
  double reproduction_gap = 0.0;  // max |Ref^f[input] - input|
};

inline MertensDecomposition mertens_decompose(const Lattice& lattice, const AdaptedProcess& process,
                                              const Driver& driver, int pair_budget = 200) {
  const SupermartingaleReport check = check_supermartingale(lattice, process, driver, pair_budget);
  if (!check.is_supermartingale)
    throw Error(ErrorCode::NotSupermartingale,
                "E^f(phi_tau) - phi_sigma reaches " + std::to_string(check.max_violation));
  const Obstacle self(process);
  RbsdeSolution sol = solve_rbsde(lattice, self, driver);
  MertensDecomposition out;
  for_each_node(lattice, [&](const NodeId& n) {
    out.reproduction_gap = std::max(out.reproduction_gap, std::abs(sol.y[n] - process[n]));
  });
  out.residual = reconstruct(lattice, sol, self, driver);
  out.z = std::move(sol.z);
  out.kappa = std::move(sol.kappa);
  out.h = std::move(sol.h);
  out.a = std::move(sol.a);
  out.c = std::move(sol.c);
  return out;
}

// ---------------------------------------------------------------------------
// A-priori estimates.

namespace detail {

/// E[max over the nodes of a path of g(node)].
inline double expected_path_max(const Lattice& lattice, const std::function<double(const NodeId&)>& g) {
  const int K = lattice.steps();
  std::vector<double> running{g(NodeId{0, Phase::Main, 0})};
  for (int k = 0; k < K; ++k) {
    std::vector<double> next(layer_size(k + 1));
    for (std::uint64_t p = 0; p < layer_size(k); ++p) {
      const double at_post = std::max(running[p], g(NodeId{k, Phase::Post, p}));
      for (int b = 0; b < 4; ++b) {
        const std::uint64_t c = Lattice::child(p, b);
        next[c] = std::max(at_post, g(NodeId{k + 1, Phase::Main, c}));
      }
    }
    running = std::move(next);
  }
  double total = 0.0;
  for (std::uint64_t p = 0; p < running.size(); ++p) total += lattice.path_probability(K, p) * running[p];
  return total;
}

/// E[sum over Post nodes of g(k, p) * dt].
inline double expected_post_sum(const Lattice& lattice, const std::function<double(int, std::uint64_t)>& g) {
  double total = 0.0;
  for (int k = 0; k < lattice.steps(); ++k) {
    for (std::uint64_t p = 0; p < layer_size(k); ++p) total += lattice.path_probability(k, p) * g(k, p) * lattice.dt();
  }
  return total;
}

}  // namespace detail

struct EstimateSide {
  const RbsdeSolution* solution;
  const Obstacle* obstacle;
  const Driver* driver;
};

struct EstimateReport {
  double lhs = 0.0;
  double rhs = 0.0;
  double obstacle_term = 0.0;  // e^{beta T} E[sup_tau (xi - xi')^2]
  double driver_term = 0.0;    // eta E[sum e^{beta t} (delta f)^2 dt]
  double slack_needed = 1.0;   // max(lhs / rhs, 1)
};

/// Checks beta >= 3/eta + 2K and eta <= 1/K^2 for the common Lipschitz constant K.
inline void validate_estimate_constants(double lipschitz, double beta, double eta) {
  if (!(lipschitz > 0.0)) throw Error(ErrorCode::BadConstants, "common Lipschitz constant must be > 0");
  if (!(eta > 0.0) || eta > 1.0 / (lipschitz * lipschitz))
    throw Error(ErrorCode::BadConstants, "eta must lie in (0, 1/K^2]");
  if (beta < 3.0 / eta + 2.0 * lipschitz) throw Error(ErrorCode::BadConstants, "beta must be >= 3/eta + 2K");
}

/// Both sides of
///   (Y_0 - Y'_0)^2 <= e^{beta T} E[sup_tau (xi - xi')_tau^2]
///                    + eta E[int_0^T e^{beta s} (f' - f)(s, Y', Z', k')^2 ds]
/// at the root, with the integral as a sum over Post nodes.
inline EstimateReport a_priori_estimates(const Lattice& lattice, const EstimateSide& first, const EstimateSide& second,
                                         double beta, double eta) {
  const double lipschitz = std::max(first.driver->lipschitz, second.driver->lipschitz);
  validate_estimate_constants(lipschitz, beta, eta);
  EstimateReport r;
  const double dy = first.solution->y.main(0, 0) - second.solution->y.main(0, 0);
  r.lhs = dy * dy;
  const double sup_term = detail::expected_path_max(lattice, [&](const NodeId& n) {
    const double d = (*first.obstacle)[n] - (*second.obstacle)[n];
    return d * d;
  });
  const RbsdeSolution& s2 = *second.solution;
  const double integral = detail::expected_post_sum(lattice, [&](int k, std::uint64_t p) {
    const double t = lattice.time(k);
    const double y = s2.y.post(k, p), z = s2.z(k, p), kappa = s2.kappa(k, p);
    const double delta = (*second.driver)(t, y, z, kappa) - (*first.driver)(t, y, z, kappa);
    return std::exp(beta * t) * delta * delta;
  });
  r.obstacle_term = std::exp(beta * lattice.horizon()) * sup_term;
  r.driver_term = eta * integral;
  r.rhs = r.obstacle_term + r.driver_term;
  if (r.lhs > r.rhs) r.slack_needed = r.rhs > 0.0 ? r.lhs / r.rhs : std::numeric_limits<double>::infinity();
  return r;
}

/// Smallest c with |||Y1 - Y2|||_beta^2 <= 4 eps^2 (1 + 12 c^2) ||f1 - f2||_beta^2,
/// eps = 1/sqrt(beta), for two solutions sharing one obstacle. Returns 0 when
/// the bound holds for every c, and +inf if the driver gap vanishes while the
/// solutions differ.
inline double fitted_estimate_constant(const Lattice& lattice, const RbsdeSolution& s1, const Driver& f1,
                                       const RbsdeSolution& s2, const Driver& f2, double beta) {
  const double lhs = detail::expected_path_max(lattice, [&](const NodeId& n) {
    const double d = s1.y[n] - s2.y[n];
    return std::exp(beta * lattice.time(n.step)) * d * d;
  });
  const double fnorm = detail::expected_post_sum(lattice, [&](int k, std::uint64_t p) {
    const double t = lattice.time(k);
    const double d = f1(t, s1.y.post(k, p), s1.z(k, p), s1.kappa(k, p)) -
                     f2(t, s2.y.post(k, p), s2.z(k, p), s2.kappa(k, p));
    return std::exp(beta * t) * d * d;
  });
  if (fnorm == 0.0) return lhs == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  const double eps2 = 1.0 / beta;
  const double ratio = lhs / (4.0 * eps2 * fnorm);
  return ratio <= 1.0 ? 0.0 : std::sqrt((ratio - 1.0) / 12.0);
}

// ---------------------------------------------------------------------------
// Flatness of (A, C) up to a hitting time.

struct SegmentReport {
  StoppingRule rule;
  double max_flat_violation = 0.0;  // max of |dA|, |dC| strictly inside [start, rule)
  double martingale_gap = 0.0;      // max |E^f_{start,rule}(Y_rule) - Y_start|
  bool passes = false;
};

/// Builds the first hit of `predicate` at or after `start` and checks that
/// Y is an E^f-martingale up to it.
inline SegmentReport martingale_segment_check(const Lattice& lattice, const RbsdeSolution& sol, const Driver& driver,
                                              const StoppingRule& start,
                                              const std::function<bool(const NodeId&)>& predicate) {
  SegmentReport r;
  r.rule = hitting_rule(lattice, predicate, &start);
  const RuleGeometry gs = rule_geometry(lattice, start);
  const RuleGeometry gt = rule_geometry(lattice, r.rule);
  for (int k = 0; k < lattice.steps(); ++k) {
    for (std::uint64_t p = 0; p < layer_size(k); ++p) {
      const NodeId m{k, Phase::Main, p};
      const NodeId q{k, Phase::Post, p};
      if (!gs.continuing[m] && gt.continuing[m]) r.max_flat_violation = std::max(r.max_flat_violation, std::abs(sol.c(k, p)));
      if (!gs.continuing[q] && gt.continuing[q]) r.max_flat_violation = std::max(r.max_flat_violation, std::abs(sol.a(k, p)));
    }
  }
  const AdaptedProcess ef = ef_conditional_expectation(lattice, start, r.rule, sol.y, driver);
  for_each_node(lattice, [&](const NodeId& n) {
    if (gs.first_hit[n]) r.martingale_gap = std::max(r.martingale_gap, std::abs(ef[n] - sol.y[n]));
  });
  r.passes = r.max_flat_violation == 0.0 && r.martingale_gap <= 1e-10;
  return r;
}

/// tau^eps = first time at or after start with Y <= xi + eps.
inline SegmentReport ef_martingale_segment_check(const Lattice& lattice, const RbsdeSolution& sol,
                                                 const Obstacle& obstacle, const Driver& driver,
                                                 const StoppingRule& start, double epsilon) {
  return martingale_segment_check(lattice, sol, driver, start,
                                  [&](const NodeId& n) { return sol.y[n] <= obstacle[n] + epsilon; });
}

/// tau^lambda = first time at or after start with lambda Y <= xi, lambda in (0, 1), xi >= 0.
inline SegmentReport threshold_segment_check(const Lattice& lattice, const RbsdeSolution& sol,
                                             const Obstacle& obstacle, const Driver& driver,
                                             const StoppingRule& start, double lambda) {
  return martingale_segment_check(lattice, sol, driver, start,
                                  [&](const NodeId& n) { return lambda * sol.y[n] <= obstacle[n]; });
}

}  // namespace rbsde
