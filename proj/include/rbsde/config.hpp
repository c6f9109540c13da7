#pragma once

// Run configuration: a JSON document with sections grid, driver, market,
// obstacle, checks, oracle, verify, price and output. Unknown keys are
// rejected. to_json writes the fully resolved form (defaults filled in),
// which parses back to the same configuration.

#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "rbsde/catalog.hpp"
#include "rbsde/generators.hpp"

namespace rbsde {

using Json = nlohmann::ordered_json;

struct TableSpec {
  double fill = 0.0;
  std::vector<std::vector<double>> main;  // optional full layers, 4^k values each
  std::vector<std::vector<double>> post;
  std::map<std::string, double> nodes;  // node id -> value, applied last
};

struct GeneratorSpec {
  ObstacleShape shape = ObstacleShape::Arbitrary;
  std::uint64_t seed = 0;
};

enum class ObstacleSource { Table, Payoff, Generator };

struct ObstacleConfig {
  ObstacleSource source = ObstacleSource::Table;
  TableSpec table;
  PayoffSpec payoff;
  GeneratorSpec generator;
};

struct CheckConfig {
  std::string name;
  std::optional<double> tolerance;
};

struct OracleConfig {
  int batch = 0;  // > 0: run a seeded random batch instead of the configured instance
  int batch_steps = 2;
  std::uint64_t seed = 42;
  bool rule_table = true;  // write every rule's value when the tree is small
  // Test hook: add `corrupt_offset` to the solver's Y_0 for batch instance `corrupt_instance`.
  std::optional<int> corrupt_instance;
  double corrupt_offset = 1e-3;
};

struct VerifyConfig {
  std::uint64_t seed = 42;
  int instances = 20;
  int steps = 2;
};

struct PriceConfig {
  int refine = 0;       // number of step doublings for the shortfall sweep
  bool oracle = false;  // compare u0 with the brute-force oracle (K <= 3)
};

struct OutputConfig {
  std::string dir = ".";
  std::string format = "both";
};

struct RunConfig {
  GridSpec grid;
  DriverSpec driver;
  std::optional<MarketModel> market;
  ObstacleConfig obstacle;
  std::vector<CheckConfig> checks;
  OracleConfig oracle;
  VerifyConfig verify;
  PriceConfig price;
  OutputConfig output;
};

// ---------------------------------------------------------------------------

namespace detail {

inline void require_object(const Json& j, const std::string& where) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, where + " must be an object");
}

inline void allow_keys(const Json& j, const std::string& where, std::initializer_list<const char*> keys) {
  require_object(j, where);
  const std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& item : j.items()) {
    if (!allowed.count(item.key())) throw Error(ErrorCode::InvalidConfig, "unknown key '" + item.key() + "' in " + where);
  }
}

template <class T>
T get(const Json& j, const char* key, const std::string& where, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorCode::InvalidConfig, std::string(where) + "." + key + " has the wrong type");
  }
}

template <class T>
T need(const Json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw Error(ErrorCode::InvalidConfig, where + "." + key + " is required");
  return get<T>(j, key, where, T{});
}

inline std::array<double, 2> pair(const Json& j, const char* key, const std::string& where,
                                  std::array<double, 2> fallback) {
  if (!j.contains(key)) return fallback;
  const Json& v = j.at(key);
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
    throw Error(ErrorCode::InvalidConfig, where + "." + key + " must be a pair of numbers");
  return {v[0].get<double>(), v[1].get<double>()};
}

inline MarketCoefficients parse_coefficients(const Json& j, const std::string& where, const MarketCoefficients& base) {
  MarketCoefficients c = base;
  c.r = get<double>(j, "r", where, c.r);
  c.mu = pair(j, "mu", where, c.mu);
  c.sigma = pair(j, "sigma", where, c.sigma);
  c.beta = pair(j, "beta", where, c.beta);
  return c;
}

inline Json coefficients_json(const MarketCoefficients& c) {
  return Json{{"r", c.r}, {"mu", {c.mu[0], c.mu[1]}}, {"sigma", {c.sigma[0], c.sigma[1]}},
              {"beta", {c.beta[0], c.beta[1]}}};
}

inline const char* shape_name(ObstacleShape s) {
  switch (s) {
    case ObstacleShape::Arbitrary: return "arbitrary";
    case ObstacleShape::Rusc: return "rusc";
    case ObstacleShape::Regular: return "regular";
  }
  return "arbitrary";
}

inline const std::vector<std::pair<std::string, PayoffKind>>& payoff_names() {
  static const std::vector<std::pair<std::string, PayoffKind>> names{{"digital_call", PayoffKind::DigitalCall},
                                                                      {"digital_put", PayoffKind::DigitalPut},
                                                                      {"vanilla_call", PayoffKind::VanillaCall},
                                                                      {"vanilla_put", PayoffKind::VanillaPut},
                                                                      {"custom", PayoffKind::Custom}};
  return names;
}

}  // namespace detail

inline RunConfig parse_config(const Json& j) {
  using namespace detail;
  allow_keys(j, "config", {"grid", "driver", "market", "obstacle", "checks", "oracle", "verify", "price", "output"});
  RunConfig c;

  const Json grid = j.value("grid", Json::object());
  allow_keys(grid, "grid", {"steps", "horizon", "intensity"});
  c.grid.num_steps = get<int>(grid, "steps", "grid", c.grid.num_steps);
  c.grid.horizon = get<double>(grid, "horizon", "grid", c.grid.horizon);
  c.grid.intensity = get<double>(grid, "intensity", "grid", c.grid.intensity);

  if (j.contains("market")) {
    const Json& m = j.at("market");
    allow_keys(m, "market", {"r", "mu", "sigma", "beta", "s0", "per_step"});
    MarketModel model;
    model.base = parse_coefficients(m, "market", model.base);
    model.s0 = pair(m, "s0", "market", model.s0);
    if (m.contains("per_step")) {
      if (!m.at("per_step").is_array()) throw Error(ErrorCode::InvalidConfig, "market.per_step must be an array");
      for (const Json& row : m.at("per_step")) {
        allow_keys(row, "market.per_step[]", {"r", "mu", "sigma", "beta"});
        model.per_step.push_back(parse_coefficients(row, "market.per_step[]", model.base));
      }
    }
    c.market = model;
  }

  const Json drv = j.value("driver", Json{{"kind", "zero"}});
  allow_keys(drv, "driver",
             {"kind", "rate", "z_coef", "kappa_coef", "constant", "borrow_rate", "expression", "lipschitz"});
  c.driver.kind = get<std::string>(drv, "kind", "driver", "zero");
  if (!is_driver_kind(c.driver.kind)) throw Error(ErrorCode::InvalidConfig, "unknown driver '" + c.driver.kind + "'");
  if (c.driver.kind == "linear") {
    c.driver.linear.rate = get<double>(drv, "rate", "driver", 0.0);
    c.driver.linear.z_coef = get<double>(drv, "z_coef", "driver", 0.0);
    c.driver.linear.kappa_coef = get<double>(drv, "kappa_coef", "driver", 0.0);
    c.driver.linear.constant = get<double>(drv, "constant", "driver", 0.0);
  }
  if (c.driver.kind == "custom") {
    c.driver.expression = need<std::string>(drv, "expression", "driver");
    c.driver.lipschitz = need<double>(drv, "lipschitz", "driver");
  }
  if (c.driver.kind == "perfect_market" || c.driver.kind == "borrow_rate") {
    if (!c.market) throw Error(ErrorCode::InvalidConfig, "driver '" + c.driver.kind + "' needs a market section");
    c.driver.market = *c.market;
  }
  if (c.driver.kind == "borrow_rate") c.driver.borrow_rate = need<double>(drv, "borrow_rate", "driver");

  if (!j.contains("obstacle")) throw Error(ErrorCode::InvalidConfig, "obstacle section is required");
  const Json& obs = j.at("obstacle");
  allow_keys(obs, "obstacle", {"table", "payoff", "generator"});
  if (obs.size() != 1)
    throw Error(ErrorCode::InvalidConfig, "obstacle needs exactly one of table, payoff, generator");
  if (obs.contains("table")) {
    c.obstacle.source = ObstacleSource::Table;
    const Json& t = obs.at("table");
    allow_keys(t, "obstacle.table", {"fill", "main", "post", "nodes"});
    c.obstacle.table.fill = get<double>(t, "fill", "obstacle.table", 0.0);
    c.obstacle.table.main = get<std::vector<std::vector<double>>>(t, "main", "obstacle.table", {});
    c.obstacle.table.post = get<std::vector<std::vector<double>>>(t, "post", "obstacle.table", {});
    c.obstacle.table.nodes = get<std::map<std::string, double>>(t, "nodes", "obstacle.table", {});
  } else if (obs.contains("payoff")) {
    c.obstacle.source = ObstacleSource::Payoff;
    const Json& p = obs.at("payoff");
    allow_keys(p, "obstacle.payoff", {"kind", "strike", "expression", "post_expression"});
    const std::string kind = need<std::string>(p, "kind", "obstacle.payoff");
    bool found = false;
    for (const auto& [name, k] : payoff_names()) {
      if (name == kind) {
        c.obstacle.payoff.kind = k;
        found = true;
      }
    }
    if (!found) throw Error(ErrorCode::InvalidConfig, "unknown payoff kind '" + kind + "'");
    if (c.obstacle.payoff.kind == PayoffKind::Custom)
      c.obstacle.payoff.expression = need<std::string>(p, "expression", "obstacle.payoff");
    else
      c.obstacle.payoff.strike = need<double>(p, "strike", "obstacle.payoff");
    if (p.contains("post_expression"))
      c.obstacle.payoff.post_expression = get<std::string>(p, "post_expression", "obstacle.payoff", "");
    if (!c.market) throw Error(ErrorCode::InvalidConfig, "a payoff obstacle needs a market section");
  } else {
    c.obstacle.source = ObstacleSource::Generator;
    const Json& g = obs.at("generator");
    allow_keys(g, "obstacle.generator", {"shape", "seed"});
    const std::string shape = get<std::string>(g, "shape", "obstacle.generator", "arbitrary");
    if (shape == "arbitrary") c.obstacle.generator.shape = ObstacleShape::Arbitrary;
    else if (shape == "rusc") c.obstacle.generator.shape = ObstacleShape::Rusc;
    else if (shape == "regular") c.obstacle.generator.shape = ObstacleShape::Regular;
    else throw Error(ErrorCode::InvalidConfig, "unknown generator shape '" + shape + "'");
    c.obstacle.generator.seed = need<std::uint64_t>(g, "seed", "obstacle.generator");
  }

  if (j.contains("checks")) {
    if (!j.at("checks").is_array()) throw Error(ErrorCode::InvalidConfig, "checks must be an array");
    for (const Json& item : j.at("checks")) {
      CheckConfig chk;
      if (item.is_string()) {
        chk.name = item.get<std::string>();
      } else {
        allow_keys(item, "checks[]", {"name", "tolerance"});
        chk.name = need<std::string>(item, "name", "checks[]");
        if (item.contains("tolerance")) chk.tolerance = get<double>(item, "tolerance", "checks[]", 0.0);
      }
      c.checks.push_back(chk);
    }
  }

  const Json orc = j.value("oracle", Json::object());
  allow_keys(orc, "oracle", {"batch", "batch_steps", "seed", "rule_table", "corrupt_instance", "corrupt_offset"});
  c.oracle.batch = get<int>(orc, "batch", "oracle", c.oracle.batch);
  c.oracle.batch_steps = get<int>(orc, "batch_steps", "oracle", c.oracle.batch_steps);
  c.oracle.seed = get<std::uint64_t>(orc, "seed", "oracle", c.oracle.seed);
  c.oracle.rule_table = get<bool>(orc, "rule_table", "oracle", c.oracle.rule_table);
  if (orc.contains("corrupt_instance")) c.oracle.corrupt_instance = get<int>(orc, "corrupt_instance", "oracle", 0);
  c.oracle.corrupt_offset = get<double>(orc, "corrupt_offset", "oracle", c.oracle.corrupt_offset);

  const Json ver = j.value("verify", Json::object());
  allow_keys(ver, "verify", {"seed", "instances", "steps"});
  c.verify.seed = get<std::uint64_t>(ver, "seed", "verify", c.verify.seed);
  c.verify.instances = get<int>(ver, "instances", "verify", c.verify.instances);
  c.verify.steps = get<int>(ver, "steps", "verify", c.verify.steps);

  const Json pr = j.value("price", Json::object());
  allow_keys(pr, "price", {"refine", "oracle"});
  c.price.refine = get<int>(pr, "refine", "price", c.price.refine);
  c.price.oracle = get<bool>(pr, "oracle", "price", c.price.oracle);

  const Json out = j.value("output", Json::object());
  allow_keys(out, "output", {"dir", "format"});
  c.output.dir = get<std::string>(out, "dir", "output", c.output.dir);
  c.output.format = get<std::string>(out, "format", "output", c.output.format);
  if (c.output.format != "csv" && c.output.format != "json" && c.output.format != "both")
    throw Error(ErrorCode::InvalidConfig, "output.format must be csv, json or both");
  return c;
}

inline RunConfig parse_config_text(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(j);
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::InvalidConfig, "cannot read config '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

/// Fully resolved configuration without the output section.
inline Json to_json(const RunConfig& c) {
  using namespace detail;
  Json j;
  j["grid"] = {{"steps", c.grid.num_steps}, {"horizon", c.grid.horizon}, {"intensity", c.grid.intensity}};
  Json d{{"kind", c.driver.kind}};
  if (c.driver.kind == "linear") {
    d["rate"] = c.driver.linear.rate;
    d["z_coef"] = c.driver.linear.z_coef;
    d["kappa_coef"] = c.driver.linear.kappa_coef;
    d["constant"] = c.driver.linear.constant;
  } else if (c.driver.kind == "borrow_rate") {
    d["borrow_rate"] = c.driver.borrow_rate;
  } else if (c.driver.kind == "custom") {
    d["expression"] = c.driver.expression;
    d["lipschitz"] = c.driver.lipschitz;
  }
  j["driver"] = d;
  if (c.market) {
    Json m = coefficients_json(c.market->base);
    m["s0"] = {c.market->s0[0], c.market->s0[1]};
    if (!c.market->per_step.empty()) {
      Json rows = Json::array();
      for (const auto& row : c.market->per_step) rows.push_back(coefficients_json(row));
      m["per_step"] = rows;
    }
    j["market"] = m;
  }
  Json obs;
  switch (c.obstacle.source) {
    case ObstacleSource::Table: {
      Json t{{"fill", c.obstacle.table.fill}};
      if (!c.obstacle.table.main.empty()) t["main"] = c.obstacle.table.main;
      if (!c.obstacle.table.post.empty()) t["post"] = c.obstacle.table.post;
      if (!c.obstacle.table.nodes.empty()) t["nodes"] = c.obstacle.table.nodes;
      obs["table"] = t;
      break;
    }
    case ObstacleSource::Payoff: {
      Json p;
      for (const auto& [name, k] : payoff_names()) {
        if (k == c.obstacle.payoff.kind) p["kind"] = name;
      }
      if (c.obstacle.payoff.kind == PayoffKind::Custom)
        p["expression"] = c.obstacle.payoff.expression;
      else
        p["strike"] = c.obstacle.payoff.strike;
      if (c.obstacle.payoff.post_expression) p["post_expression"] = *c.obstacle.payoff.post_expression;
      obs["payoff"] = p;
      break;
    }
    case ObstacleSource::Generator:
      obs["generator"] = {{"shape", shape_name(c.obstacle.generator.shape)}, {"seed", c.obstacle.generator.seed}};
      break;
  }
  j["obstacle"] = obs;
  Json checks = Json::array();
  for (const CheckConfig& chk : c.checks) {
    Json item{{"name", chk.name}};
    if (chk.tolerance) item["tolerance"] = *chk.tolerance;
    checks.push_back(item);
  }
  j["checks"] = checks;
  Json orc{{"batch", c.oracle.batch},
           {"batch_steps", c.oracle.batch_steps},
           {"seed", c.oracle.seed},
           {"rule_table", c.oracle.rule_table}};
  if (c.oracle.corrupt_instance) orc["corrupt_instance"] = *c.oracle.corrupt_instance;
  orc["corrupt_offset"] = c.oracle.corrupt_offset;
  j["oracle"] = orc;
  j["verify"] = {{"seed", c.verify.seed}, {"instances", c.verify.instances}, {"steps", c.verify.steps}};
  j["price"] = {{"refine", c.price.refine}, {"oracle", c.price.oracle}};
  return j;
}

// ---------------------------------------------------------------------------
// Building the problem.

inline Obstacle table_obstacle(const Lattice& lattice, const TableSpec& t) {
  Obstacle out(lattice, t.fill);
  auto fill_layers = [&](const std::vector<std::vector<double>>& rows, Layers<double>& dst, const char* which) {
    if (rows.empty()) return;
    if (static_cast<int>(rows.size()) != dst.layer_count())
      throw Error(ErrorCode::InvalidConfig, std::string("obstacle.table.") + which + " needs " +
                                                std::to_string(dst.layer_count()) + " layers");
    for (int k = 0; k < dst.layer_count(); ++k) {
      if (rows[static_cast<std::size_t>(k)].size() != layer_size(k))
        throw Error(ErrorCode::InvalidConfig, std::string("obstacle.table.") + which + " layer " + std::to_string(k) +
                                                  " needs " + std::to_string(layer_size(k)) + " values");
      dst.layer(k) = rows[static_cast<std::size_t>(k)];
    }
  };
  fill_layers(t.main, out.values.main, "main");
  fill_layers(t.post, out.values.post, "post");
  for (const auto& [id, v] : t.nodes) {
    NodeId n;
    try {
      n = parse_node_id(id);
    } catch (const Error& e) {
      throw Error(ErrorCode::ParseError, std::string("obstacle.table.nodes: ") + e.message());
    }
    const bool exists = n.phase == Phase::Main ? n.step <= lattice.steps() : n.step < lattice.steps();
    if (!exists) throw Error(ErrorCode::InvalidConfig, "node '" + id + "' is not on the lattice");
    out.values[n] = v;
  }
  for_each_node(lattice, [&](const NodeId& n) {
    if (!std::isfinite(out[n])) throw Error(ErrorCode::InvalidConfig, "obstacle is not finite at " + to_string(n));
  });
  return out;
}

struct Problem {
  Lattice lattice;
  Driver driver;
  Obstacle obstacle;
  std::optional<AssetPaths> assets;
};

inline Problem build_problem(const RunConfig& c) {
  Lattice lattice(c.grid);
  Driver driver = make_driver(c.driver, lattice);
  Problem p{lattice, driver, Obstacle(lattice, 0.0), std::nullopt};
  switch (c.obstacle.source) {
    case ObstacleSource::Table: p.obstacle = table_obstacle(lattice, c.obstacle.table); break;
    case ObstacleSource::Payoff:
      c.market->validate(lattice);
      p.assets = simulate_assets(lattice, *c.market);
      p.obstacle = payoff_obstacle(lattice, *p.assets, c.obstacle.payoff);
      break;
    case ObstacleSource::Generator: {
      Sampler s(c.obstacle.generator.seed);
      p.obstacle = random_obstacle(s, lattice, c.obstacle.generator.shape);
      break;
    }
  }
  return p;
}

}  // namespace rbsde
