#pragma once

// Reference computations for the tests. None of these call the solver,
// the projection or the rule enumeration of the library; they recompute
// everything from branch probabilities and plain recursion.

#include <array>
#include <cmath>
#include <functional>
#include <set>
#include <vector>

#include "rbsde/rbsde.hpp"

namespace oracle {

using rbsde::Driver;
using rbsde::Lattice;
using rbsde::NodeId;
using rbsde::Phase;

/// Root of y - m - f(t, y, z, kappa) dt by bisection on a wide bracket.
inline double bisect_step(double m, double z, double kappa, const Driver& f, double t, double dt) {
  auto g = [&](double y) { return y - m - f(t, y, z, kappa) * dt; };
  double lo = m - 1.0, hi = m + 1.0;
  while (g(lo) > 0.0) lo -= 2.0 * (hi - lo);
  while (g(hi) < 0.0) hi += 2.0 * (hi - lo);
  for (int i = 0; i < 400 && hi - lo > 1e-15; ++i) {
    const double mid = 0.5 * (lo + hi);
    (g(mid) > 0.0 ? hi : lo) = mid;
  }
  return 0.5 * (lo + hi);
}

struct Moments {
  double mean, z, kappa;
};

/// Mean and the dW, dNt regression coefficients of four branch values,
/// recomputed from the branch table.
inline Moments branch_moments(const Lattice& lattice, const std::array<double, 4>& v) {
  const double dt = lattice.dt(), q = lattice.intensity() * dt;
  const double p[4] = {(1 - q) / 2, (1 - q) / 2, q / 2, q / 2};
  const double w[4] = {std::sqrt(dt), -std::sqrt(dt), std::sqrt(dt), -std::sqrt(dt)};
  const double n[4] = {-q, -q, 1 - q, 1 - q};
  double m = 0, ew = 0, en = 0, vw = 0, vn = 0;
  for (int b = 0; b < 4; ++b) {
    m += p[b] * v[b];
    vw += p[b] * w[b] * w[b];
    vn += p[b] * n[b] * n[b];
  }
  for (int b = 0; b < 4; ++b) {
    ew += p[b] * (v[b] - m) * w[b];
    en += p[b] * (v[b] - m) * n[b];
  }
  return {m, ew / vw, en / vn};
}

/// Set of stopped nodes; a path stops at its first stopped node.
using StopSet = std::set<std::tuple<int, int, std::uint64_t>>;

inline std::tuple<int, int, std::uint64_t> key(int k, Phase ph, std::uint64_t p) {
  return {k, static_cast<int>(ph), p};
}

/// E^f_{node, tau}(terminal) by recursion, tau given as a stop set.
inline double recursive_value(const Lattice& lattice, const std::function<double(const NodeId&)>& terminal,
                              const StopSet& stops, const Driver& f, int k, Phase ph, std::uint64_t p) {
  if (stops.count(key(k, ph, p)) || (k == lattice.steps() && ph == Phase::Main)) return terminal({k, ph, p});
  if (ph == Phase::Main) return recursive_value(lattice, terminal, stops, f, k, Phase::Post, p);
  std::array<double, 4> v{};
  for (int b = 0; b < 4; ++b) v[b] = recursive_value(lattice, terminal, stops, f, k + 1, Phase::Main, 4 * p + b);
  const Moments mo = branch_moments(lattice, v);
  return bisect_step(mo.mean, mo.z, mo.kappa, f, lattice.time(k), lattice.dt());
}

/// Every first-hit stop set on the subtree of (k, phase, p); stop sets
/// only list the first-hit nodes.
inline std::vector<StopSet> all_stop_sets(const Lattice& lattice, int k, Phase ph, std::uint64_t p) {
  std::vector<StopSet> out;
  out.push_back({key(k, ph, p)});
  if (k == lattice.steps() && ph == Phase::Main) return out;
  if (ph == Phase::Main) {
    for (auto& s : all_stop_sets(lattice, k, Phase::Post, p)) out.push_back(s);
    return out;
  }
  std::vector<StopSet> acc{StopSet{}};
  for (int b = 0; b < 4; ++b) {
    const auto child = all_stop_sets(lattice, k + 1, Phase::Main, 4 * p + b);
    std::vector<StopSet> next;
    for (const auto& a : acc) {
      for (const auto& c : child) {
        StopSet merged = a;
        merged.insert(c.begin(), c.end());
        next.push_back(std::move(merged));
      }
    }
    acc = std::move(next);
  }
  for (auto& s : acc) out.push_back(std::move(s));
  return out;
}

/// 1 + product of child counts, by plain recursion.
inline std::uint64_t rule_count(int steps, int k, Phase ph) {
  if (k == steps && ph == Phase::Main) return 1;
  if (ph == Phase::Main) return 1 + rule_count(steps, k, Phase::Post);
  const std::uint64_t c = rule_count(steps, k + 1, Phase::Main);
  return 1 + c * c * c * c;
}

/// max over all rules of E^f_{root, tau}(xi_tau).
inline double brute_force_value(const Lattice& lattice, const rbsde::Obstacle& xi, const Driver& f) {
  double best = -1e300;
  auto terminal = [&](const NodeId& n) { return xi[n]; };
  for (const StopSet& s : all_stop_sets(lattice, 0, Phase::Main, 0))
    best = std::max(best, recursive_value(lattice, terminal, s, f, 0, Phase::Main, 0));
  return best;
}

/// Solves A x = b (4 x 4) by Gaussian elimination with partial pivoting.
inline std::array<double, 4> solve4(std::array<std::array<double, 4>, 4> a, std::array<double, 4> b) {
  for (int c = 0; c < 4; ++c) {
    int piv = c;
    for (int r = c + 1; r < 4; ++r)
      if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
    std::swap(a[c], a[piv]);
    std::swap(b[c], b[piv]);
    for (int r = c + 1; r < 4; ++r) {
      const double m = a[r][c] / a[c][c];
      for (int j = c; j < 4; ++j) a[r][j] -= m * a[c][j];
      b[r] -= m * b[c];
    }
  }
  std::array<double, 4> x{};
  for (int r = 3; r >= 0; --r) {
    double s = b[r];
    for (int j = r + 1; j < 4; ++j) s -= a[r][j] * x[j];
    x[r] = s / a[r][r];
  }
  return x;
}

}  // namespace oracle
