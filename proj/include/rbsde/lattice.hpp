#pragma once

// Brownian-Poisson scenario tree on a doubled time grid.
//
// Every grid time k carries a Main node (the value of a ladlag process at
// time k) and, for k < K, a Post node (its right limit). Main(k) -> Post(k) is
// a deterministic edge; Post(k) -> Main(k+1) branches four ways on
// (dW = +-sqrt(dt)) x (dN in {0, 1}).
//
// Nodes of step k are addressed by a path integer in [0, 4^k) whose base-4
// digits are the branch indices, first branch most significant.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "rbsde/errors.hpp"

namespace rbsde {

struct GridSpec {
  int num_steps = 1;       // K
  double horizon = 1.0;    // T
  double intensity = 0.5;  // lambda

  double dt() const { return horizon / num_steps; }

  void validate() const {
    if (num_steps < 1) throw Error(ErrorCode::InvalidGrid, "num_steps must be >= 1");
    if (!(horizon > 0.0) || !std::isfinite(horizon))
      throw Error(ErrorCode::InvalidGrid, "horizon must be a positive finite number");
    if (!(intensity > 0.0) || !std::isfinite(intensity))
      throw Error(ErrorCode::InvalidGrid, "intensity must be a positive finite number");
    if (intensity * dt() >= 1.0)
      throw Error(ErrorCode::InvalidGrid,
                  "jump probability intensity*dt = " + std::to_string(intensity * dt()) +
                      " must be < 1");
  }
};

enum class Phase : std::uint8_t { Main = 0, Post = 1 };

inline const char* phase_name(Phase phase) { return phase == Phase::Main ? "main" : "post"; }

/// A point of the doubled grid; ordered (k, Main) < (k, Post) < (k+1, Main).
struct SubTime {
  int step = 0;
  Phase phase = Phase::Main;

  int ordinal() const { return 2 * step + static_cast<int>(phase); }
  friend auto operator<=>(const SubTime& a, const SubTime& b) { return a.ordinal() <=> b.ordinal(); }
  friend bool operator==(const SubTime& a, const SubTime& b) { return a.ordinal() == b.ordinal(); }
};

struct Branch {
  double dW = 0.0;
  int dN = 0;
  double dNt = 0.0;  // compensated: dN - lambda*dt
  double probability = 0.0;
};

using Quad = std::array<double, 4>;

struct NodeId {
  int step = 0;
  Phase phase = Phase::Main;
  std::uint64_t path = 0;

  SubTime sub_time() const { return {step, phase}; }
  friend bool operator==(const NodeId&, const NodeId&) = default;
};

/// "k:phase:b1b2...bk", e.g. "2:post:03".
inline std::string to_string(const NodeId& node) {
  std::string digits(static_cast<std::size_t>(node.step), '0');
  std::uint64_t p = node.path;
  for (int i = node.step - 1; i >= 0; --i) {
    digits[static_cast<std::size_t>(i)] = static_cast<char>('0' + (p & 3u));
    p >>= 2;
  }
  return std::to_string(node.step) + ":" + phase_name(node.phase) + ":" + digits;
}

inline NodeId parse_node_id(const std::string& text) {
  const auto first = text.find(':');
  const auto second = first == std::string::npos ? std::string::npos : text.find(':', first + 1);
  if (second == std::string::npos) throw Error(ErrorCode::ParseError, "bad node id '" + text + "'");
  NodeId node;
  try {
    node.step = std::stoi(text.substr(0, first));
  } catch (const std::exception&) {
    throw Error(ErrorCode::ParseError, "bad step in node id '" + text + "'");
  }
  const std::string phase = text.substr(first + 1, second - first - 1);
  if (phase == "main") {
    node.phase = Phase::Main;
  } else if (phase == "post") {
    node.phase = Phase::Post;
  } else {
    throw Error(ErrorCode::ParseError, "bad phase in node id '" + text + "'");
  }
  const std::string digits = text.substr(second + 1);
  if (node.step < 0 || digits.size() != static_cast<std::size_t>(node.step))
    throw Error(ErrorCode::ParseError, "node id '" + text + "' needs exactly step branch digits");
  for (char c : digits) {
    if (c < '0' || c > '3') throw Error(ErrorCode::ParseError, "bad branch digit in '" + text + "'");
    node.path = node.path * 4 + static_cast<std::uint64_t>(c - '0');
  }
  return node;
}

inline std::uint64_t layer_size(int step) { return std::uint64_t{1} << (2 * step); }

class Lattice {
 public:
  explicit Lattice(const GridSpec& spec) : spec_(spec) {
    spec_.validate();
    dt_ = spec_.dt();
    sqrt_dt_ = std::sqrt(dt_);
    const double jump_p = spec_.intensity * dt_;
    // Fixed branch order: 0 = (+, no jump), 1 = (-, no jump), 2 = (+, jump), 3 = (-, jump).
    for (int b = 0; b < 4; ++b) {
      Branch& br = branches_[static_cast<std::size_t>(b)];
      br.dW = (b % 2 == 0) ? sqrt_dt_ : -sqrt_dt_;
      br.dN = b >= 2 ? 1 : 0;
      br.dNt = static_cast<double>(br.dN) - jump_p;
      br.probability = b >= 2 ? jump_p / 2.0 : (1.0 - jump_p) / 2.0;
    }
    for (const Branch& br : branches_) {
      dW_variance_ += br.probability * br.dW * br.dW;
      dNt_variance_ += br.probability * br.dNt * br.dNt;
    }
  }

  const GridSpec& grid() const { return spec_; }
  int steps() const { return spec_.num_steps; }
  double dt() const { return dt_; }
  double sqrt_dt() const { return sqrt_dt_; }
  double horizon() const { return spec_.horizon; }
  double intensity() const { return spec_.intensity; }
  double time(int step) const { return step * dt_; }

  const std::array<Branch, 4>& branches() const { return branches_; }
  const Branch& branch(int b) const { return branches_[static_cast<std::size_t>(b)]; }

  /// E[dW^2] and E[dNt^2] under the branch probabilities.
  double dW_variance() const { return dW_variance_; }
  double dNt_variance() const { return dNt_variance_; }

  /// 2 * sum_{k<K} 4^k + 4^K.
  std::uint64_t node_count() const {
    std::uint64_t n = 0;
    for (int k = 0; k < steps(); ++k) n += 2 * layer_size(k);
    return n + layer_size(steps());
  }

  static std::uint64_t child(std::uint64_t path, int branch) { return 4 * path + static_cast<std::uint64_t>(branch); }

  NodeId root() const { return {0, Phase::Main, 0}; }
  bool is_terminal(const NodeId& node) const { return node.step == steps() && node.phase == Phase::Main; }

  /// Previous node in the filtration, if any.
  std::optional<NodeId> predecessor(const NodeId& node) const {
    if (node.phase == Phase::Post) return NodeId{node.step, Phase::Main, node.path};
    if (node.step == 0) return std::nullopt;
    return NodeId{node.step - 1, Phase::Post, node.path / 4};
  }

  /// Probability of reaching a step-k node from the root.
  double path_probability(int step, std::uint64_t path) const {
    double p = 1.0;
    for (int i = 0; i < step; ++i) {
      p *= branches_[path & 3u].probability;
      path >>= 2;
    }
    return p;
  }

 private:
  GridSpec spec_;
  double dt_ = 0.0;
  double sqrt_dt_ = 0.0;
  double dW_variance_ = 0.0;
  double dNt_variance_ = 0.0;
  std::array<Branch, 4> branches_{};
};

inline Lattice build_lattice(const GridSpec& spec) { return Lattice(spec); }

/// Per-step storage, layer k holding 4^k slots.
template <class T>
class Layers {
 public:
  Layers() = default;
  Layers(int layer_count, const T& init) : layers_(static_cast<std::size_t>(layer_count)) {
    for (int k = 0; k < layer_count; ++k) layers_[static_cast<std::size_t>(k)].assign(layer_size(k), init);
  }

  int layer_count() const { return static_cast<int>(layers_.size()); }
  T& operator()(int k, std::uint64_t p) { return layers_[static_cast<std::size_t>(k)][p]; }
  const T& operator()(int k, std::uint64_t p) const { return layers_[static_cast<std::size_t>(k)][p]; }
  std::vector<T>& layer(int k) { return layers_[static_cast<std::size_t>(k)]; }
  const std::vector<T>& layer(int k) const { return layers_[static_cast<std::size_t>(k)]; }

  friend bool operator==(const Layers&, const Layers&) = default;

 private:
  std::vector<std::vector<T>> layers_;
};

/// Values on every Main and Post node.
template <class T>
struct NodeField {
  Layers<T> main;  // K + 1 layers
  Layers<T> post;  // K layers

  NodeField() = default;
  NodeField(const Lattice& lattice, const T& init)
      : main(lattice.steps() + 1, init), post(lattice.steps(), init) {}

  T& operator[](const NodeId& n) { return n.phase == Phase::Main ? main(n.step, n.path) : post(n.step, n.path); }
  const T& operator[](const NodeId& n) const {
    return n.phase == Phase::Main ? main(n.step, n.path) : post(n.step, n.path);
  }

  friend bool operator==(const NodeField&, const NodeField&) = default;
};

using AdaptedProcess = NodeField<double>;

template <class T>
Layers<T> post_layers(const Lattice& lattice, const T& init) {
  return Layers<T>(lattice.steps(), init);
}

template <class T>
Layers<T> main_layers(const Lattice& lattice, const T& init) {
  return Layers<T>(lattice.steps() + 1, init);
}

/// Calls fn(NodeId) for every node, in SubTime order then path order.
template <class Fn>
void for_each_node(const Lattice& lattice, Fn&& fn) {
  for (int k = 0; k <= lattice.steps(); ++k) {
    for (std::uint64_t p = 0; p < layer_size(k); ++p) fn(NodeId{k, Phase::Main, p});
    if (k < lattice.steps()) {
      for (std::uint64_t p = 0; p < layer_size(k); ++p) fn(NodeId{k, Phase::Post, p});
    }
  }
}

/// Brownian position W and jump count N at every node.
struct LatticeState {
  AdaptedProcess brownian;
  AdaptedProcess jumps;
};

inline LatticeState lattice_state(const Lattice& lattice) {
  LatticeState state{AdaptedProcess(lattice, 0.0), AdaptedProcess(lattice, 0.0)};
  for (int k = 0; k < lattice.steps(); ++k) {
    for (std::uint64_t p = 0; p < layer_size(k); ++p) {
      state.brownian.post(k, p) = state.brownian.main(k, p);
      state.jumps.post(k, p) = state.jumps.main(k, p);
      for (int b = 0; b < 4; ++b) {
        const Branch& br = lattice.branch(b);
        state.brownian.main(k + 1, Lattice::child(p, b)) = state.brownian.post(k, p) + br.dW;
        state.jumps.main(k + 1, Lattice::child(p, b)) = state.jumps.post(k, p) + br.dN;
      }
    }
  }
  return state;
}

// ---------------------------------------------------------------------------
// One-step conditional expectation and the orthogonal decomposition.

/// E[next | Post node], summed in fixed branch order.
inline double conditional_expectation(const Lattice& lattice, const Quad& next) {
  double sum = 0.0;
  for (int b = 0; b < 4; ++b) sum += lattice.branch(b).probability * next[static_cast<std::size_t>(b)];
  return sum;
}

struct Projection {
  double mean = 0.0;
  double z = 0.0;
  double kappa = 0.0;
  Quad h{};  // residual orthogonal to dW and dNt
};

/// Splits next = mean + z*dW + kappa*dNt + h with h orthogonal to dW and dNt.
inline Projection project_increment(const Lattice& lattice, const Quad& next) {
  Projection out;
  out.mean = conditional_expectation(lattice, next);
  double m_dw = 0.0;
  double m_dn = 0.0;
  for (int b = 0; b < 4; ++b) {
    const Branch& br = lattice.branch(b);
    const double m = next[static_cast<std::size_t>(b)] - out.mean;
    m_dw += br.probability * m * br.dW;
    m_dn += br.probability * m * br.dNt;
  }
  out.z = m_dw / lattice.dW_variance();
  out.kappa = m_dn / lattice.dNt_variance();
  for (int b = 0; b < 4; ++b) {
    const Branch& br = lattice.branch(b);
    out.h[static_cast<std::size_t>(b)] =
        next[static_cast<std::size_t>(b)] - out.mean - out.z * br.dW - out.kappa * br.dNt;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stopping rules.

/// Adapted stop/continue labels; the stopping time of a path is its first
/// stopped node. Terminal Main nodes are always stopped.
struct StoppingRule {
  NodeField<std::uint8_t> stop;

  StoppingRule() = default;
  explicit StoppingRule(const Lattice& lattice) : stop(lattice, 0) {
    for (auto& v : stop.main.layer(lattice.steps())) v = 1;
  }

  bool stops(const NodeId& n) const { return stop[n] != 0; }
  void set(const NodeId& n, bool value = true) { stop[n] = value ? 1 : 0; }

  friend bool operator==(const StoppingRule&, const StoppingRule&) = default;
};

/// Where a rule has fired: first_hit marks the stopping node of each path,
/// continuing marks nodes not stopped at or before themselves.
struct RuleGeometry {
  NodeField<std::uint8_t> first_hit;
  NodeField<std::uint8_t> continuing;
};

inline RuleGeometry rule_geometry(const Lattice& lattice, const StoppingRule& rule) {
  RuleGeometry g{NodeField<std::uint8_t>(lattice, 0), NodeField<std::uint8_t>(lattice, 0)};
  const int K = lattice.steps();
  for (int k = 0; k <= K; ++k) {
    for (std::uint64_t p = 0; p < layer_size(k); ++p) {
      const bool reached = (k == 0) ? true : g.continuing.post(k - 1, p / 4) != 0;
      const bool stops_main = rule.stop.main(k, p) != 0 || k == K;
      g.first_hit.main(k, p) = reached && stops_main;
      g.continuing.main(k, p) = reached && !stops_main;
      if (k < K) {
        const bool reached_post = g.continuing.main(k, p) != 0;
        const bool stops_post = rule.stop.post(k, p) != 0;
        g.first_hit.post(k, p) = reached_post && stops_post;
        g.continuing.post(k, p) = reached_post && !stops_post;
      }
    }
  }
  return g;
}

/// Canonical representative: first-hit nodes plus all terminal nodes.
inline StoppingRule canonicalize(const Lattice& lattice, const StoppingRule& rule) {
  StoppingRule out(lattice);
  const RuleGeometry g = rule_geometry(lattice, rule);
  out.stop = g.first_hit;
  for (auto& v : out.stop.main.layer(lattice.steps())) v = 1;
  return out;
}

/// Checks the StoppingRule invariants (terminal nodes stopped).
inline bool is_valid_rule(const Lattice& lattice, const StoppingRule& rule) {
  if (rule.stop.main.layer_count() != lattice.steps() + 1 || rule.stop.post.layer_count() != lattice.steps())
    return false;
  for (auto v : rule.stop.main.layer(lattice.steps())) {
    if (v == 0) return false;
  }
  return true;
}

/// sigma <= tau on every path.
inline bool rule_precedes(const Lattice& lattice, const StoppingRule& sigma, const StoppingRule& tau) {
  const RuleGeometry gs = rule_geometry(lattice, sigma);
  const RuleGeometry gt = rule_geometry(lattice, tau);
  bool ok = true;
  for_each_node(lattice, [&](const NodeId& n) {
    if (gs.continuing[n] && !gt.continuing[n]) ok = false;
  });
  return ok;
}

/// Pathwise minimum of two rules.
inline StoppingRule rule_min(const Lattice& lattice, const StoppingRule& a, const StoppingRule& b) {
  StoppingRule out(lattice);
  for_each_node(lattice, [&](const NodeId& n) { out.stop[n] = (a.stop[n] || b.stop[n]) ? 1 : 0; });
  return canonicalize(lattice, out);
}

/// Stops every path at one sub-time.
inline StoppingRule rule_at(const Lattice& lattice, SubTime when) {
  StoppingRule out(lattice);
  for (std::uint64_t p = 0; p < layer_size(when.step); ++p) out.set({when.step, when.phase, p});
  return out;
}

/// List of first-hit nodes in SubTime order.
inline std::vector<NodeId> hit_nodes(const Lattice& lattice, const StoppingRule& rule) {
  const RuleGeometry g = rule_geometry(lattice, rule);
  std::vector<NodeId> out;
  for_each_node(lattice, [&](const NodeId& n) {
    if (g.first_hit[n]) out.push_back(n);
  });
  return out;
}

inline std::string describe_rule(const Lattice& lattice, const StoppingRule& rule) {
  std::string out;
  for (const NodeId& n : hit_nodes(lattice, rule)) {
    if (!out.empty()) out += ' ';
    out += to_string(n);
  }
  return out;
}

/// First-hit rule on predicate(node); only nodes where `start` has already
/// fired are eligible. Paths that never hit stop at (K, Main).
inline StoppingRule hitting_rule(const Lattice& lattice, const std::function<bool(const NodeId&)>& predicate,
                                 const StoppingRule* start = nullptr) {
  StoppingRule out(lattice);
  std::optional<RuleGeometry> gs;
  if (start) gs = rule_geometry(lattice, *start);
  for_each_node(lattice, [&](const NodeId& n) {
    const bool eligible = !gs || !gs->continuing[n];
    if (eligible && predicate(n)) out.set(n);
  });
  return canonicalize(lattice, out);
}

inline StoppingRule hitting_rule(const Lattice& lattice, const AdaptedProcess& process,
                                 const std::function<bool(const NodeId&, double)>& predicate,
                                 const StoppingRule* start = nullptr) {
  return hitting_rule(
      lattice, [&](const NodeId& n) { return predicate(n, process[n]); }, start);
}

// ---------------------------------------------------------------------------
// Exhaustive enumeration of stopping rules.
//
// Rules on the subtree of a node are indexed canonically. At a Main node,
// index 0 stops there and i >= 1 continues with Post-rule i-1. At a Post
// node, index 0 stops there and i >= 1 encodes one rule per child as mixed
// radix digits of i-1 (branch 0 most significant). The number of rules
// depends only on (step, phase).

class RuleSpace {
 public:
  static constexpr std::uint64_t kSaturated = std::numeric_limits<std::uint64_t>::max();

  RuleSpace(const Lattice& lattice, NodeId from) : lattice_(&lattice), from_(from) {
    const int K = lattice.steps();
    main_counts_.assign(static_cast<std::size_t>(K + 1), 1);
    post_counts_.assign(static_cast<std::size_t>(K), 1);
    for (int k = K - 1; k >= 0; --k) {
      std::uint64_t prod = 1;
      for (int b = 0; b < 4; ++b) prod = saturating_mul(prod, main_counts_[static_cast<std::size_t>(k + 1)]);
      post_counts_[static_cast<std::size_t>(k)] = saturating_add(prod, 1);
      main_counts_[static_cast<std::size_t>(k)] = saturating_add(post_counts_[static_cast<std::size_t>(k)], 1);
    }
  }

  NodeId from() const { return from_; }
  std::uint64_t size() const { return count(from_.step, from_.phase); }

  std::uint64_t count(int step, Phase phase) const {
    if (phase == Phase::Main) return main_counts_[static_cast<std::size_t>(step)];
    return post_counts_[static_cast<std::size_t>(step)];
  }

  /// Stop set of rule `index` on the subtree (terminal nodes always stopped).
  StoppingRule rule(std::uint64_t index) const {
    StoppingRule out(*lattice_);
    if (from_.phase == Phase::Main) {
      decode_main(out, from_.step, from_.path, index);
    } else {
      decode_post(out, from_.step, from_.path, index);
    }
    return out;
  }

 private:
  static std::uint64_t saturating_mul(std::uint64_t a, std::uint64_t b) {
    if (a != 0 && b > kSaturated / a) return kSaturated;
    return a * b;
  }
  static std::uint64_t saturating_add(std::uint64_t a, std::uint64_t b) {
    return a > kSaturated - b ? kSaturated : a + b;
  }

  void decode_main(StoppingRule& out, int k, std::uint64_t p, std::uint64_t index) const {
    if (k == lattice_->steps() || index == 0) {
      out.set({k, Phase::Main, p});
      return;
    }
    decode_post(out, k, p, index - 1);
  }

  void decode_post(StoppingRule& out, int k, std::uint64_t p, std::uint64_t index) const {
    if (index == 0) {
      out.set({k, Phase::Post, p});
      return;
    }
    std::uint64_t rest = index - 1;
    const std::uint64_t radix = main_counts_[static_cast<std::size_t>(k + 1)];
    std::array<std::uint64_t, 4> digit{};
    for (int b = 3; b >= 0; --b) {
      digit[static_cast<std::size_t>(b)] = rest % radix;
      rest /= radix;
    }
    for (int b = 0; b < 4; ++b) decode_main(out, k + 1, Lattice::child(p, b), digit[static_cast<std::size_t>(b)]);
  }

  const Lattice* lattice_;
  NodeId from_;
  std::vector<std::uint64_t> main_counts_;
  std::vector<std::uint64_t> post_counts_;
};

inline constexpr int kDefaultOracleLimit = 3;

/// All adapted first-hit rules from the root. Throws OracleTooLarge when
/// K exceeds the limit.
inline RuleSpace enumerate_stopping_rules(const Lattice& lattice, int limit = kDefaultOracleLimit,
                                          std::optional<NodeId> from = std::nullopt) {
  if (lattice.steps() > limit)
    throw Error(ErrorCode::OracleTooLarge, "K = " + std::to_string(lattice.steps()) +
                                               " exceeds the oracle limit " + std::to_string(limit));
  return RuleSpace(lattice, from.value_or(lattice.root()));
}

}  // namespace rbsde
