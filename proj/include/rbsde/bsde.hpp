#pragma once

// Lipschitz drivers and the conditional f-expectation on the lattice.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>

#include "rbsde/expression.hpp"
#include "rbsde/lattice.hpp"
#include "rbsde/parallel.hpp"

namespace rbsde {

/// f(t, y, z, kappa) with its declared Lipschitz constant K_f, measured as
/// |df| <= K_f (|dy| + |dz| + sqrt(lambda) |dkappa|).
struct Driver {
  std::string name = "zero";
  std::function<double(double t, double y, double z, double kappa)> eval = [](double, double, double, double) {
    return 0.0;
  };
  double lipschitz = 0.0;
  bool monotonicity_declared = true;

  double operator()(double t, double y, double z, double kappa) const { return eval(t, y, z, kappa); }
};

inline Driver zero_driver() { return Driver{}; }

/// f = -rate*y + z_coef*z + kappa_coef*kappa + constant.
struct LinearDriverParams {
  double rate = 0.0;
  double z_coef = 0.0;
  double kappa_coef = 0.0;
  double constant = 0.0;
};

inline Driver linear_driver(const LinearDriverParams& p, double lambda) {
  Driver d;
  d.name = "linear";
  d.eval = [p](double, double y, double z, double kappa) {
    return -p.rate * y + p.z_coef * z + p.kappa_coef * kappa + p.constant;
  };
  d.lipschitz = std::max({std::abs(p.rate), std::abs(p.z_coef), std::abs(p.kappa_coef) / std::sqrt(lambda)});
  return d;
}

inline Driver linear_driver(double rate) { return linear_driver({rate, 0.0, 0.0, 0.0}, 1.0); }

/// Driver given by an expression over (t, y, z, kappa); the Lipschitz
/// constant is declared by the caller.
inline Driver custom_driver(const std::string& expression, double lipschitz) {
  auto program = std::make_shared<Expression>(Expression::parse(expression, {"t", "y", "z", "kappa"}));
  Driver d;
  d.name = "custom";
  d.eval = [program](double t, double y, double z, double kappa) { return (*program)({t, y, z, kappa}); };
  d.lipschitz = lipschitz;
  return d;
}

/// Adds a pointwise nonnegative cost g(t, y, z, kappa) to a driver.
inline Driver shifted_driver(const Driver& base, std::function<double(double, double, double, double)> shift,
                             double extra_lipschitz, std::string name = "") {
  Driver d;
  d.name = name.empty() ? base.name + "+shift" : std::move(name);
  d.eval = [f = base.eval, shift = std::move(shift)](double t, double y, double z, double k) {
    return f(t, y, z, k) + shift(t, y, z, k);
  };
  d.lipschitz = base.lipschitz + extra_lipschitz;
  d.monotonicity_declared = false;
  return d;
}

// ---------------------------------------------------------------------------

struct OneStep {
  double y = 0.0;
  double z = 0.0;
  double kappa = 0.0;
  Quad h{};
  int iterations = 0;
};

inline constexpr double kPicardTolerance = 1e-12;
inline constexpr int kPicardMaxIterations = 200;

inline void require_contraction(const Lattice& lattice, const Driver& driver) {
  if (driver.lipschitz * lattice.dt() >= 1.0)
    throw Error(ErrorCode::NoContraction, "K_f * dt = " + std::to_string(driver.lipschitz * lattice.dt()) +
                                              " must be < 1 for driver '" + driver.name + "'");
}

/// Implicit in y, explicit in (z, kappa):
///   y = E[next] + f(t, y, z, kappa) * dt,
/// with (z, kappa, h) the orthogonal projection of next.
inline OneStep onestep_implicit(const Lattice& lattice, const Quad& next, const Driver& driver, double t,
                                std::optional<double> initial_guess = std::nullopt) {
  require_contraction(lattice, driver);
  const Projection proj = project_increment(lattice, next);
  OneStep out;
  out.z = proj.z;
  out.kappa = proj.kappa;
  out.h = proj.h;
  const double dt = lattice.dt();
  double y = initial_guess.value_or(proj.mean);
  for (int it = 1; it <= kPicardMaxIterations; ++it) {
    const double next_y = proj.mean + driver(t, y, proj.z, proj.kappa) * dt;
    if (!std::isfinite(next_y))
      throw Error(ErrorCode::NonConvergence, "Picard iterate is not finite for driver '" + driver.name + "'");
    const double step = std::abs(next_y - y);
    y = next_y;
    if (step <= kPicardTolerance) {
      out.y = y;
      out.iterations = it;
      return out;
    }
  }
  throw Error(ErrorCode::NonConvergence,
              "Picard iteration did not reach 1e-12 in 200 steps for driver '" + driver.name + "'");
}

// ---------------------------------------------------------------------------

/// (X, z, kappa, h) of a BSDE on the lattice. z, kappa, h are zero on Post
/// nodes where the rule has already stopped.
struct BsdeSolution {
  AdaptedProcess x;
  Layers<double> z;
  Layers<double> kappa;
  Layers<Quad> h;
};

/// Solves -dX = f dt - z dW - kappa dNt - dh backward from the first-hit
/// nodes of `rule` with X := terminal there. After the stopping time X is
/// frozen, which is the driver f * 1_{t <= tau}.
inline BsdeSolution solve_bsde(const Lattice& lattice, const AdaptedProcess& terminal, const StoppingRule& rule,
                               const Driver& driver, double picard_offset = 0.0) {
  const int K = lattice.steps();
  const RuleGeometry g = rule_geometry(lattice, rule);
  BsdeSolution sol{AdaptedProcess(lattice, 0.0), post_layers(lattice, 0.0), post_layers(lattice, 0.0),
                   post_layers(lattice, Quad{})};

  // Forward: terminal values at first hits, frozen afterwards.
  for (int k = 0; k <= K; ++k) {
    for (std::uint64_t p = 0; p < layer_size(k); ++p) {
      if (g.first_hit.main(k, p)) {
        sol.x.main(k, p) = terminal.main(k, p);
      } else if (!g.continuing.main(k, p) && k > 0) {
        sol.x.main(k, p) = sol.x.post(k - 1, p / 4);
      }
      if (k == K) continue;
      if (g.first_hit.post(k, p)) {
        sol.x.post(k, p) = terminal.post(k, p);
      } else if (!g.continuing.post(k, p)) {
        sol.x.post(k, p) = sol.x.main(k, p);
      }
    }
  }

  // Backward over continuing nodes.
  for (int k = K - 1; k >= 0; --k) {
    const double t = lattice.time(k);
    parallel_for(layer_size(k), [&](std::size_t i) {
      const std::uint64_t p = i;
      if (g.continuing.main(k, p) && g.continuing.post(k, p)) {
        Quad next{};
        for (int b = 0; b < 4; ++b) next[static_cast<std::size_t>(b)] = sol.x.main(k + 1, Lattice::child(p, b));
        const double guess = conditional_expectation(lattice, next) + picard_offset;
        const OneStep step = onestep_implicit(lattice, next, driver, t, guess);
        sol.x.post(k, p) = step.y;
        sol.z(k, p) = step.z;
        sol.kappa(k, p) = step.kappa;
        sol.h(k, p) = step.h;
      }
      if (g.continuing.main(k, p)) sol.x.main(k, p) = sol.x.post(k, p);
    });
  }
  return sol;
}

inline BsdeSolution solve_bsde(const Lattice& lattice, const AdaptedProcess& terminal, const Driver& driver) {
  return solve_bsde(lattice, terminal, StoppingRule(lattice), driver);
}

/// E^f_{sigma,tau}(zeta): X of the BSDE stopped at tau, read on sigma's
/// first-hit nodes. Other nodes of the result are NaN.
inline AdaptedProcess ef_conditional_expectation(const Lattice& lattice, const StoppingRule& sigma,
                                                 const StoppingRule& tau, const AdaptedProcess& zeta,
                                                 const Driver& driver) {
  if (!rule_precedes(lattice, sigma, tau))
    throw Error(ErrorCode::BadOrdering, "sigma <= tau fails on some path");
  const BsdeSolution sol = solve_bsde(lattice, zeta, tau, driver);
  const RuleGeometry gs = rule_geometry(lattice, sigma);
  AdaptedProcess out(lattice, std::numeric_limits<double>::quiet_NaN());
  for_each_node(lattice, [&](const NodeId& n) {
    if (gs.first_hit[n]) out[n] = sol.x[n];
  });
  return out;
}

// ---------------------------------------------------------------------------
// Sampled driver diagnostics.

struct MonotonicityReport {
  double min_slope = 0.0;
  bool passes = true;
  double t = 0, y = 0, z = 0, kappa1 = 0, kappa2 = 0;  // sample attaining min_slope
};

/// Jump-monotonicity in scalar-mark form:
///   (f(kappa1) - f(kappa2)) / (lambda (kappa1 - kappa2)) >= -1.
inline MonotonicityReport check_monotonicity(const Driver& driver, double lambda, double horizon = 1.0,
                                             int sample_count = 2000, std::uint64_t seed = 7) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  MonotonicityReport report;
  report.min_slope = std::numeric_limits<double>::infinity();
  for (int i = 0; i < sample_count; ++i) {
    const double scale = (i % 3 == 0) ? 0.1 : ((i % 3 == 1) ? 1.0 : 10.0);
    const double t = horizon * 0.5 * (unit(rng) + 1.0);
    const double y = scale * unit(rng);
    const double z = scale * unit(rng);
    const double k1 = scale * unit(rng);
    double k2 = scale * unit(rng);
    if (k1 == k2) k2 += scale;
    const double slope = (driver(t, y, z, k1) - driver(t, y, z, k2)) / (lambda * (k1 - k2));
    if (slope < report.min_slope) report = {slope, true, t, y, z, k1, k2};
  }
  report.passes = report.min_slope >= -1.0 - 1e-12;
  return report;
}

struct LipschitzReport {
  double max_ratio = 0.0;  // |df| / (|dy| + |dz| + sqrt(lambda)|dkappa|)
  bool passes = true;
};

inline LipschitzReport spot_check_lipschitz(const Driver& driver, double lambda, double horizon = 1.0,
                                            int sample_count = 2000, std::uint64_t seed = 11) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  LipschitzReport report;
  const double sl = std::sqrt(lambda);
  for (int i = 0; i < sample_count; ++i) {
    const double scale = (i % 2 == 0) ? 1.0 : 10.0;
    const double t = horizon * 0.5 * (unit(rng) + 1.0);
    const double y1 = scale * unit(rng), z1 = scale * unit(rng), k1 = scale * unit(rng);
    const double y2 = scale * unit(rng), z2 = scale * unit(rng), k2 = scale * unit(rng);
    const double denom = std::abs(y1 - y2) + std::abs(z1 - z2) + sl * std::abs(k1 - k2);
    if (denom == 0.0) continue;
    report.max_ratio = std::max(report.max_ratio, std::abs(driver(t, y1, z1, k1) - driver(t, y2, z2, k2)) / denom);
  }
  report.passes = report.max_ratio <= driver.lipschitz * (1.0 + 1e-9) + 1e-12;
  return report;
}

struct SchemeMonotonicityReport {
  double min_response = 0.0;  // min over samples of (y(next + bump e_b) - y(next)) / bump
  bool passes = true;
};

/// The one-step map next -> y is nondecreasing in each branch value. This is
/// the discrete counterpart of comparison and is stricter than the
/// continuous-time monotonicity condition when f depends on z.
inline SchemeMonotonicityReport check_scheme_monotonicity(const Lattice& lattice, const Driver& driver,
                                                          int sample_count = 400, std::uint64_t seed = 13) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  SchemeMonotonicityReport report;
  report.min_response = std::numeric_limits<double>::infinity();
  const double bumps[] = {1e-3, 0.1, 1.0};
  for (int i = 0; i < sample_count; ++i) {
    const double scale = (i % 2 == 0) ? 1.0 : 5.0;
    Quad next{};
    for (auto& v : next) v = scale * unit(rng);
    const int step = static_cast<int>(rng() % static_cast<std::uint64_t>(lattice.steps()));
    const double t = lattice.time(step);
    const double base = onestep_implicit(lattice, next, driver, t).y;
    for (int b = 0; b < 4; ++b) {
      for (double bump : bumps) {
        Quad up = next;
        up[static_cast<std::size_t>(b)] += bump;
        const double response = (onestep_implicit(lattice, up, driver, t).y - base) / bump;
        report.min_response = std::min(report.min_response, response);
      }
    }
  }
  report.passes = report.min_response >= -1e-8;
  return report;
}

}  // namespace rbsde
