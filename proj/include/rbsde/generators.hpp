#pragma once

// Seeded random instances for property tests and the verify suites.
//
// Grids use T = 1 and lambda * dt <= 0.5. Driver parameters stay in ranges
// where the one-step scheme is monotone in the next values:
//   |f_z| <= 0.3,  f_kappa / lambda in [-0.5, 0.3],  |f_y| <= 0.5,
// and every drawn driver is re-checked (jump monotonicity and scheme
// monotonicity) and redrawn on failure.

#include <cmath>
#include <cstdio>
#include <random>
#include <string>

#include "rbsde/catalog.hpp"

namespace rbsde {

enum class ObstacleShape {
  Arbitrary,  // main and post independent
  Rusc,       // main >= post
  Regular,    // main >= post and post(k) >= main(k+1): nonincreasing along paths
};

struct InstanceOptions {
  int steps = 2;
  ObstacleShape shape = ObstacleShape::Arbitrary;
  bool allow_custom = true;
  bool allow_zero = true;
};

class Sampler {
 public:
  explicit Sampler(std::uint64_t seed) : rng_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  int pick(int n) { return std::uniform_int_distribution<int>(0, n - 1)(rng_); }
  bool coin(double p = 0.5) { return std::bernoulli_distribution(p)(rng_); }
  std::uint64_t next() { return rng_(); }
  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

inline std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline GridSpec random_grid(Sampler& s, int steps, double horizon = 1.0) {
  GridSpec g;
  g.num_steps = steps;
  g.horizon = horizon;
  const double lambda_max = std::min(2.0, 0.5 / g.dt());
  g.intensity = s.uniform(0.1, lambda_max);
  return g;
}

inline MarketModel random_market(Sampler& s) {
  MarketModel m;
  MarketCoefficients& c = m.base;
  c.r = s.uniform(0.0, 0.1);
  c.sigma = {s.uniform(0.1, 0.4), s.uniform(-0.4, -0.1)};
  c.beta = {s.uniform(-0.3, 0.3), s.uniform(-0.3, 0.3)};
  c.mu = {c.r + s.uniform(-0.03, 0.03), c.r + s.uniform(-0.03, 0.03)};
  m.s0 = {1.0, 1.0};
  return m;
}

/// One draw from the catalog; may violate the scheme conditions.
inline DriverSpec draw_driver_spec(Sampler& s, const Lattice& lattice, const InstanceOptions& opt) {
  const double lambda = lattice.intensity();
  DriverSpec d;
  for (;;) {
    const int kind = s.pick(5);
    if (kind == 0 && !opt.allow_zero) continue;
    if (kind == 4 && !opt.allow_custom) continue;
    switch (kind) {
      case 0: d.kind = "zero"; break;
      case 1:
        d.kind = "linear";
        d.linear = {s.uniform(-0.5, 0.5), s.uniform(-0.3, 0.3), lambda * s.uniform(-0.5, 0.3), s.uniform(-0.5, 0.5)};
        break;
      case 2:
        d.kind = "perfect_market";
        d.market = random_market(s);
        break;
      case 3:
        d.kind = "borrow_rate";
        d.market = random_market(s);
        d.borrow_rate = d.market.base.r + s.uniform(0.0, 0.2);
        break;
      default: {
        d.kind = "custom";
        const double a = s.uniform(-0.5, 0.5), b = s.uniform(-0.3, 0.3);
        const double c = lambda * s.uniform(-0.5, 0.3), e = lambda * s.uniform(-0.5, 0.3);
        const double g = s.uniform(-0.5, 0.5);
        d.expression = format_number(a) + "*y + " + format_number(b) + "*abs(z) + " + format_number(c) +
                       "*max(kappa, 0) + " + format_number(e) + "*min(kappa, 0) + " + format_number(g) +
                       "*exp(-t)";
        d.lipschitz = std::max({std::abs(a), std::abs(b), std::max(std::abs(c), std::abs(e)) / std::sqrt(lambda)});
        break;
      }
    }
    return d;
  }
}

/// True when the driver suits exact comparison on this lattice.
inline bool driver_is_admissible(const Lattice& lattice, const Driver& f) {
  if (f.lipschitz * lattice.dt() >= 0.5) return false;
  if (!check_monotonicity(f, lattice.intensity(), lattice.horizon()).passes) return false;
  return check_scheme_monotonicity(lattice, f, 100).passes;
}

inline DriverSpec random_driver_spec(Sampler& s, const Lattice& lattice, const InstanceOptions& opt = {}) {
  for (;;) {
    const DriverSpec spec = draw_driver_spec(s, lattice, opt);
    try {
      if (driver_is_admissible(lattice, make_driver(spec, lattice))) return spec;
    } catch (const Error&) {
      // redraw
    }
  }
}

inline Obstacle random_obstacle(Sampler& s, const Lattice& lattice, ObstacleShape shape) {
  Obstacle out(lattice, 0.0);
  const int K = lattice.steps();
  if (shape == ObstacleShape::Regular) {
    const double step = 0.15 * lattice.dt();
    out.values.main(0, 0) = s.uniform(-1.0, 1.0);
    for (int k = 0; k < K; ++k) {
      for (std::uint64_t p = 0; p < layer_size(k); ++p) {
        out.values.post(k, p) = out.values.main(k, p) - s.uniform(0.0, step);
        for (int b = 0; b < 4; ++b)
          out.values.main(k + 1, Lattice::child(p, b)) = out.values.post(k, p) - s.uniform(0.0, step);
      }
    }
    return out;
  }
  for (int k = 0; k <= K; ++k) {
    for (std::uint64_t p = 0; p < layer_size(k); ++p) {
      const double a = s.uniform(-1.0, 1.0);
      if (k == K) {
        out.values.main(k, p) = a;
        continue;
      }
      const double b = s.uniform(-1.0, 1.0);
      if (shape == ObstacleShape::Rusc) {
        out.values.main(k, p) = std::max(a, b);
        out.values.post(k, p) = std::min(a, b);
      } else {
        out.values.main(k, p) = a;
        out.values.post(k, p) = b;
      }
    }
  }
  return out;
}

/// xi + lift with lift >= 0: a constant in [0, max_lift] or nodewise draws.
inline Obstacle lift_obstacle(Sampler& s, const Lattice& lattice, const Obstacle& xi, double max_lift = 0.5) {
  Obstacle out = xi;
  const bool constant = s.coin();
  const double c = s.uniform(0.0, max_lift);
  for_each_node(lattice, [&](const NodeId& n) { out.values[n] += constant ? c : s.uniform(0.0, max_lift); });
  return out;
}

/// f + c0 + c1 |y| with c0, c1 >= 0.
inline Driver lift_driver(Sampler& s, const Driver& f) {
  const double c0 = s.uniform(0.0, 0.5), c1 = s.uniform(0.0, 0.3);
  return shifted_driver(
      f, [c0, c1](double, double y, double, double) { return c0 + c1 * std::abs(y); }, c1);
}

struct Instance {
  Lattice lattice;
  DriverSpec driver_spec;
  Driver driver;
  Obstacle obstacle;
};

inline Instance random_instance(Sampler& s, const InstanceOptions& opt) {
  Lattice lattice(random_grid(s, opt.steps));
  DriverSpec spec = random_driver_spec(s, lattice, opt);
  Driver f = make_driver(spec, lattice);
  Obstacle xi = random_obstacle(s, lattice, opt.shape);
  return Instance{std::move(lattice), std::move(spec), std::move(f), std::move(xi)};
}

inline Instance random_instance(std::uint64_t seed, const InstanceOptions& opt) {
  Sampler s(seed);
  return random_instance(s, opt);
}

// ---------------------------------------------------------------------------
// Continuous-time payoffs g(t, W_t, N_t), sampled on any grid of the same
// horizon; used for refinement sweeps.

struct ContinuousPayoff {
  double level = 0.0, slope = 0.0, kink = 0.0, curvature = 0.0, jump = 0.0, drift = 0.0;

  double operator()(double t, double w, double n) const {
    return level + slope * w + curvature * std::max(w - kink, 0.0) + jump * std::min(n, 2.0) + drift * t;
  }
};

inline ContinuousPayoff random_payoff(Sampler& s) {
  return {s.uniform(-0.5, 0.5), s.uniform(-0.5, 0.5), s.uniform(-0.5, 0.5),
          s.uniform(-1.0, 1.0), s.uniform(-0.5, 0.5), s.uniform(-0.5, 0.5)};
}

/// Main and Post values both g(t, W, N).
inline Obstacle sample_payoff(const Lattice& lattice, const ContinuousPayoff& g) {
  const LatticeState state = lattice_state(lattice);
  Obstacle out(lattice, 0.0);
  for_each_node(lattice, [&](const NodeId& n) {
    out.values[n] = g(lattice.time(n.step), state.brownian[n], state.jumps[n]);
  });
  return out;
}

}  // namespace rbsde
