#pragma once

// American options in a two-asset jump market, priced as a reflected BSDE.
//
//   dS^i = S^i_{t-} [mu^i dt + sigma^i dW + beta^i dNt],   i = 1, 2
//
// With (Z, k) = phi' Sigma, Sigma = [[sigma1, beta1], [sigma2, beta2]], the
// wealth of strategy phi solves -dX = f(t, X, Z, k) dt - Z dW - k dNt.

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "rbsde/rbsde.hpp"

namespace rbsde {

struct MarketCoefficients {
  double r = 0.0;
  std::array<double, 2> mu{0.0, 0.0};
  std::array<double, 2> sigma{0.2, 0.3};
  std::array<double, 2> beta{0.1, -0.1};

  double det() const { return sigma[0] * beta[1] - beta[0] * sigma[1]; }

  /// 2-norm condition number of Sigma.
  double condition_number() const {
    const double a = sigma[0], b = beta[0], c = sigma[1], d = beta[1];
    const double frob2 = a * a + b * b + c * c + d * d;
    const double det_abs = std::abs(det());
    const double disc = std::sqrt(std::max(0.0, frob2 * frob2 - 4.0 * det_abs * det_abs));
    const double smax = std::sqrt((frob2 + disc) / 2.0);
    const double smin2 = (frob2 - disc) / 2.0;
    if (det_abs == 0.0 || smin2 <= 0.0) return std::numeric_limits<double>::infinity();
    return smax / std::sqrt(smin2);
  }
};

struct MarketModel {
  MarketCoefficients base;
  std::vector<MarketCoefficients> per_step;  // optional override, one entry per step k < K
  std::array<double, 2> s0{1.0, 1.0};

  const MarketCoefficients& at(int k) const {
    if (per_step.empty()) return base;
    return per_step[static_cast<std::size_t>(std::clamp<int>(k, 0, static_cast<int>(per_step.size()) - 1))];
  }

  void validate(const Lattice& lattice) const {
    if (!per_step.empty() && per_step.size() != static_cast<std::size_t>(lattice.steps()))
      throw Error(ErrorCode::InvalidConfig, "per_step market table needs exactly K entries");
    for (double s : s0) {
      if (!(s > 0.0)) throw Error(ErrorCode::InvalidConfig, "initial prices must be positive");
    }
    for (int k = 0; k < lattice.steps(); ++k) {
      const MarketCoefficients& c = at(k);
      for (int i = 0; i < 2; ++i) {
        if (!(c.beta[static_cast<std::size_t>(i)] > -1.0))
          throw Error(ErrorCode::InvalidConfig, "beta" + std::to_string(i + 1) + " must be > -1");
      }
      if (!std::isfinite(c.condition_number()))
        throw Error(ErrorCode::InvalidConfig, "volatility/jump matrix Sigma is singular");
    }
  }
};

struct AssetPaths {
  AdaptedProcess s1;
  AdaptedProcess s2;
};

/// Branch growth factor 1 + mu dt + sigma dW + beta dNt.
inline double growth_factor(const Lattice& lattice, const MarketCoefficients& c, int asset, const Branch& br) {
  const auto i = static_cast<std::size_t>(asset);
  return 1.0 + c.mu[i] * lattice.dt() + c.sigma[i] * br.dW + c.beta[i] * br.dNt;
}

inline AssetPaths simulate_assets(const Lattice& lattice, const MarketModel& model) {
  for (int k = 0; k < lattice.steps(); ++k) {
    for (int i = 0; i < 2; ++i) {
      for (int b = 0; b < 4; ++b) {
        const double factor = growth_factor(lattice, model.at(k), i, lattice.branch(b));
        if (!(factor > 0.0))
          throw Error(ErrorCode::PositivityViolated, "asset " + std::to_string(i + 1) + " branch " +
                                                         std::to_string(b) + " at step " + std::to_string(k) +
                                                         " has growth factor " + std::to_string(factor));
      }
    }
  }
  AssetPaths out{AdaptedProcess(lattice, 0.0), AdaptedProcess(lattice, 0.0)};
  out.s1.main(0, 0) = model.s0[0];
  out.s2.main(0, 0) = model.s0[1];
  for (int k = 0; k < lattice.steps(); ++k) {
    const MarketCoefficients& c = model.at(k);
    for (std::uint64_t p = 0; p < layer_size(k); ++p) {
      out.s1.post(k, p) = out.s1.main(k, p);
      out.s2.post(k, p) = out.s2.main(k, p);
      for (int b = 0; b < 4; ++b) {
        const Branch& br = lattice.branch(b);
        out.s1.main(k + 1, Lattice::child(p, b)) = out.s1.post(k, p) * growth_factor(lattice, c, 0, br);
        out.s2.main(k + 1, Lattice::child(p, b)) = out.s2.post(k, p) * growth_factor(lattice, c, 1, br);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Drivers.

enum class ImperfectionKind { Perfect, BorrowRate, Custom };

struct ImperfectionSpec {
  ImperfectionKind kind = ImperfectionKind::Perfect;
  double borrow_rate = 0.0;  // R, BorrowRate only
  std::string expression;    // Custom only: over (t, y, z, kappa)
  double lipschitz = 0.0;    // Custom only
};

/// phi' = (z, kappa) Sigma^{-1}.
inline std::array<double, 2> hedge_from_integrands(const MarketCoefficients& c, double z, double kappa) {
  const double d = c.det();
  return {(z * c.beta[1] - kappa * c.sigma[1]) / d, (-z * c.beta[0] + kappa * c.sigma[0]) / d};
}

/// Sigma^{-1} (mu - r 1): market price of Brownian and jump risk.
inline std::array<double, 2> risk_premia(const MarketCoefficients& c) {
  const double e1 = c.mu[0] - c.r, e2 = c.mu[1] - c.r;
  const double d = c.det();
  return {(c.beta[1] * e1 - c.beta[0] * e2) / d, (-c.sigma[1] * e1 + c.sigma[0] * e2) / d};
}

inline Driver market_driver(const MarketModel& model, const ImperfectionSpec& imperfection, const Lattice& lattice) {
  Driver d;
  if (imperfection.kind == ImperfectionKind::Custom) {
    d = custom_driver(imperfection.expression, imperfection.lipschitz);
  } else {
    if (imperfection.kind == ImperfectionKind::BorrowRate && imperfection.borrow_rate < model.base.r)
      throw Error(ErrorCode::InvalidConfig, "borrow rate R must be >= r");
    const double dt = lattice.dt();
    const int K = lattice.steps();
    const bool borrow = imperfection.kind == ImperfectionKind::BorrowRate;
    const double R = imperfection.borrow_rate;
    struct StepCoefficients {
      double r, theta_z, theta_k, hz1, hk1, hz2, hk2;
    };
    std::vector<StepCoefficients> table;
    for (int k = 0; k < K; ++k) {
      const MarketCoefficients& c = model.at(k);
      const auto theta = risk_premia(c);
      const auto e1 = hedge_from_integrands(c, 1.0, 0.0), e2 = hedge_from_integrands(c, 0.0, 1.0);
      table.push_back({c.r, theta[0], theta[1], e1[0], e2[0], e1[1], e2[1]});
    }
    d.name = borrow ? "borrow_rate" : "perfect_market";
    d.eval = [table = std::move(table), dt, K, borrow, R](double t, double y, double z, double kappa) {
      const int k = std::clamp(static_cast<int>(std::floor(t / dt + 0.5)), 0, K - 1);
      const StepCoefficients& c = table[static_cast<std::size_t>(k)];
      double f = -c.r * y - z * c.theta_z - kappa * c.theta_k;
      if (borrow) {
        const double exposure = z * (c.hz1 + c.hz2) + kappa * (c.hk1 + c.hk2);
        f += (R - c.r) * std::max(exposure - y, 0.0);
      }
      return f;
    };
    double lip = 0.0;
    const double sl = std::sqrt(lattice.intensity());
    for (int k = 0; k < K; ++k) {
      const MarketCoefficients& c = model.at(k);
      const auto theta = risk_premia(c);
      const double extra = borrow ? R - c.r : 0.0;
      const double az = (c.beta[1] - c.beta[0]) / c.det();
      const double ak = (c.sigma[0] - c.sigma[1]) / c.det();
      lip = std::max({lip, std::abs(c.r) + extra, std::abs(theta[0]) + extra * std::abs(az),
                      (std::abs(theta[1]) + extra * std::abs(ak)) / sl});
    }
    d.lipschitz = lip;
  }
  const MonotonicityReport mono = check_monotonicity(d, lattice.intensity(), lattice.horizon());
  if (!mono.passes)
    throw Error(ErrorCode::MonotonicityFailed,
                "driver '" + d.name + "' has jump slope " + std::to_string(mono.min_slope) + " < -1 at y=" +
                    std::to_string(mono.y) + " z=" + std::to_string(mono.z) + " kappa1=" +
                    std::to_string(mono.kappa1) + " kappa2=" + std::to_string(mono.kappa2));
  return d;
}

// ---------------------------------------------------------------------------
// Payoffs.

enum class PayoffKind { DigitalCall, DigitalPut, VanillaCall, VanillaPut, Custom };

struct PayoffSpec {
  PayoffKind kind = PayoffKind::DigitalCall;
  double strike = 1.0;
  std::string expression;                      // Custom: over (S1, S2, t)
  std::optional<std::string> post_expression;  // overrides Post values when set
};

inline Obstacle payoff_obstacle(const Lattice& lattice, const AssetPaths& assets, const PayoffSpec& payoff) {
  std::optional<Expression> main_expr;
  if (payoff.kind == PayoffKind::Custom) main_expr = Expression::parse(payoff.expression, {"S1", "S2", "t"});
  std::optional<Expression> post_expr;
  if (payoff.post_expression) post_expr = Expression::parse(*payoff.post_expression, {"S1", "S2", "t"});

  auto main_value = [&](double s1, double s2, double t) {
    switch (payoff.kind) {
      case PayoffKind::DigitalCall: return s1 >= payoff.strike ? 1.0 : 0.0;
      case PayoffKind::DigitalPut: return s1 < payoff.strike ? 1.0 : 0.0;
      case PayoffKind::VanillaCall: return std::max(s1 - payoff.strike, 0.0);
      case PayoffKind::VanillaPut: return std::max(payoff.strike - s1, 0.0);
      case PayoffKind::Custom: return (*main_expr)({s1, s2, t});
    }
    return 0.0;
  };

  Obstacle out(lattice, 0.0);
  for_each_node(lattice, [&](const NodeId& n) {
    const double s1 = assets.s1[n], s2 = assets.s2[n], t = lattice.time(n.step);
    const double v = (n.phase == Phase::Post && post_expr) ? (*post_expr)({s1, s2, t}) : main_value(s1, s2, t);
    if (!std::isfinite(v)) throw Error(ErrorCode::InvalidConfig, "payoff is not finite at " + to_string(n));
    out.values[n] = v;
  });
  return out;
}

struct PricingResult {
  double u0 = 0.0;
  AssetPaths assets;
  Obstacle obstacle;
  Driver driver;
  RbsdeSolution solution;
};

/// Superhedging price u0 = Y_0 of the reflected BSDE with obstacle payoff(S).
inline PricingResult price_american(const Lattice& lattice, const MarketModel& model, const PayoffSpec& payoff,
                                    const ImperfectionSpec& imperfection) {
  model.validate(lattice);
  PricingResult out;
  out.assets = simulate_assets(lattice, model);
  out.obstacle = payoff_obstacle(lattice, out.assets, payoff);
  out.driver = market_driver(model, imperfection, lattice);
  out.solution = solve_rbsde(lattice, out.obstacle, out.driver);
  out.u0 = out.solution.y.main(0, 0);
  return out;
}

// ---------------------------------------------------------------------------
// Superhedging.

struct HedgeReport {
  Layers<std::array<double, 2>> phi;  // on Post nodes
  AdaptedProcess wealth;
  double max_shortfall = 0.0;    // max (xi - X)^+
  double expected_shortfall = 0.0;  // E[max along the path of (xi - X)^+]
  double shortfall_bound = 0.0;  // e^{K_f T} max over paths of sum |dh|
  double wealth_residual = 0.0;  // one-step identity of the forward wealth
};

/// Forward wealth from X_0 = Y_0 under phi' = (z, kappa) Sigma^{-1}:
///   X_next = X - f(t, X, z, kappa) dt + z dW + kappa dNt.
inline HedgeReport superhedging_strategy(const Lattice& lattice, const RbsdeSolution& solution,
                                         const Obstacle& obstacle, const MarketModel& model, const Driver& driver) {
  const int K = lattice.steps();
  const double dt = lattice.dt();
  HedgeReport r{post_layers(lattice, std::array<double, 2>{0.0, 0.0}), AdaptedProcess(lattice, 0.0)};
  Layers<double> dh_sum = main_layers(lattice, 0.0);
  r.wealth.main(0, 0) = solution.y.main(0, 0);
  for (int k = 0; k < K; ++k) {
    const double t = lattice.time(k);
    const MarketCoefficients& c = model.at(k);
    parallel_for(layer_size(k), [&](std::size_t i) {
      const std::uint64_t p = i;
      const double x = r.wealth.main(k, p);
      const double z = solution.z(k, p), kappa = solution.kappa(k, p);
      r.wealth.post(k, p) = x;
      r.phi(k, p) = hedge_from_integrands(c, z, kappa);
      const double drift = driver(t, x, z, kappa) * dt;
      for (int b = 0; b < 4; ++b) {
        const Branch& br = lattice.branch(b);
        const std::uint64_t child = Lattice::child(p, b);
        r.wealth.main(k + 1, child) = x - drift + z * br.dW + kappa * br.dNt;
        dh_sum(k + 1, child) = dh_sum(k, p) + std::abs(solution.h(k, p)[static_cast<std::size_t>(b)]);
      }
    });
  }
  for (int k = 0; k < K; ++k) {
    const double t = lattice.time(k);
    for (std::uint64_t p = 0; p < layer_size(k); ++p) {
      const double x = r.wealth.post(k, p);
      const double z = solution.z(k, p), kappa = solution.kappa(k, p);
      const double drift = driver(t, x, z, kappa) * dt;
      for (int b = 0; b < 4; ++b) {
        const Branch& br = lattice.branch(b);
        const double rebuilt = r.wealth.main(k + 1, Lattice::child(p, b)) + drift - z * br.dW - kappa * br.dNt;
        r.wealth_residual = std::max(r.wealth_residual, std::abs(x - rebuilt));
      }
    }
  }
  for_each_node(lattice, [&](const NodeId& n) {
    r.max_shortfall = std::max(r.max_shortfall, obstacle[n] - r.wealth[n]);
  });
  r.expected_shortfall = detail::expected_path_max(
      lattice, [&](const NodeId& n) { return std::max(0.0, obstacle[n] - r.wealth[n]); });
  double worst = 0.0;
  for (double v : dh_sum.layer(K)) worst = std::max(worst, v);
  r.shortfall_bound = std::exp(driver.lipschitz * lattice.horizon()) * worst;
  return r;
}

}  // namespace rbsde
