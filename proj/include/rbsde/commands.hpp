#pragma once

// The four batch commands behind the command-line tool. Each returns the
// process exit code: 0 success, 1 numerical or verification failure,
// 2 invalid input. Errors are reported as one JSON object on `err`.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "rbsde/config.hpp"
#include "rbsde/reports.hpp"
#include "rbsde/suites.hpp"

namespace rbsde {

struct CommandOptions {
  std::optional<std::string> config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<std::string> format;
  std::optional<int> refine;        // price only
  std::vector<std::string> checks;  // verify only; overrides the config list
};

inline constexpr double kOracleGapTolerance = 1e-10;

namespace detail {

struct Emitter {
  std::string dir;
  std::string format;
  std::ostream& out;

  bool csv() const { return format == "csv" || format == "both"; }
  bool json() const { return format == "json" || format == "both"; }

  void write(const std::string& name, const std::string& content) const {
    std::filesystem::create_directories(dir);
    const std::filesystem::path path = std::filesystem::path(dir) / name;
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorCode::InvalidConfig, "cannot write '" + path.string() + "'");
    f << content;
  }

  void table(const std::string& name, const std::string& content) const {
    if (csv()) write(name, content);
  }

  /// Summary goes to stdout and, for json formats, to a file.
  void summary(const std::string& name, const Json& j) const {
    const std::string text = j.dump(2) + "\n";
    out << text;
    if (json()) write(name, text);
  }
};

inline RunConfig resolve(const std::string& command, const CommandOptions& opt) {
  RunConfig c;
  if (opt.config_path) {
    c = load_config(*opt.config_path);
  } else if (command == "verify") {
    c.obstacle.source = ObstacleSource::Table;
  } else {
    throw Error(ErrorCode::InvalidConfig, command + " needs --config");
  }
  if (opt.seed) {
    if (c.obstacle.source == ObstacleSource::Generator) c.obstacle.generator.seed = *opt.seed;
    c.oracle.seed = *opt.seed;
    c.verify.seed = *opt.seed;
  }
  if (opt.out_dir) c.output.dir = *opt.out_dir;
  if (opt.format) {
    if (*opt.format != "csv" && *opt.format != "json" && *opt.format != "both")
      throw Error(ErrorCode::InvalidConfig, "--format must be csv, json or both");
    c.output.format = *opt.format;
  }
  if (opt.refine) c.price.refine = *opt.refine;
  if (c.price.refine < 0 || c.price.refine > 6) throw Error(ErrorCode::InvalidConfig, "refine must lie in [0, 6]");
  if (!opt.checks.empty()) {
    c.checks.clear();
    for (const std::string& name : opt.checks) c.checks.push_back({name, std::nullopt});
  }
  return c;
}

inline Json rule_json(const Lattice& lattice, const RuleSpace& space, std::uint64_t index) {
  return Json{{"index", index}, {"stop_nodes", describe_rule(lattice, space.rule(index))}};
}

}  // namespace detail

// ---------------------------------------------------------------------------

inline int cmd_solve(const RunConfig& c, std::ostream& out) {
  const detail::Emitter emit{c.output.dir, c.output.format, out};
  const Problem p = build_problem(c);
  const RbsdeSolution sol = solve_rbsde(p.lattice, p.obstacle, p.driver);
  const SkorokhodReport sk = verify_skorokhod(p.lattice, sol, p.obstacle);
  const ReconstructionReport rec = reconstruction_report(p.lattice, sol, p.obstacle, p.driver);
  emit.table("solution.csv", solution_csv(p.lattice, sol, p.obstacle));
  Json s;
  s["command"] = "solve";
  s["Y0"] = sol.y.main(0, 0);
  s["A_mass"] = total_a_mass(p.lattice, sol);
  s["C_mass"] = total_c_mass(p.lattice, sol);
  s["node_count"] = p.lattice.node_count();
  s["residuals"] = {{"reconstruction", rec.max()},
                    {"A_flat_off", sk.max_A_violation},
                    {"C_flat_off", sk.max_C_violation},
                    {"domination", sk.max_domination_gap}};
  s["config"] = to_json(c);
  emit.summary("summary.json", s);
  return 0;
}

inline int cmd_oracle(const RunConfig& c, std::ostream& out) {
  const detail::Emitter emit{c.output.dir, c.output.format, out};
  Json s;
  s["command"] = "oracle";
  if (c.oracle.batch > 0) {
    if (c.oracle.batch_steps < 1 || c.oracle.batch_steps > kDefaultOracleLimit)
      throw Error(ErrorCode::OracleTooLarge, "oracle.batch_steps must lie in [1, 3]");
    std::ostringstream csv;
    csv << "instance,steps,intensity,driver,y0,oracle_value,gap,y_post,strict_value,strict_gap,rule_count,argmax\n";
    double max_gap = 0.0, max_strict = 0.0;
    int failures = 0;
    for (int i = 0; i < c.oracle.batch; ++i) {
      Sampler smp(instance_seed(c.oracle.seed, 1, static_cast<std::uint64_t>(i)));
      const int steps = c.oracle.batch_steps;
      const Instance in = random_instance(smp, {steps, ObstacleShape::Arbitrary, steps < 3});
      RbsdeSolution sol = solve_rbsde(in.lattice, in.obstacle, in.driver);
      if (c.oracle.corrupt_instance && *c.oracle.corrupt_instance == i) sol.y.main(0, 0) += c.oracle.corrupt_offset;
      const StoppingOracle oracle(in.lattice, in.obstacle, in.driver);
      const auto [full, strict] = oracle.value_and_strict(in.lattice.root());
      const double gap = std::abs(full.value - sol.y.main(0, 0));
      const double strict_gap = std::abs(strict.value - sol.y.post(0, 0));
      max_gap = std::max(max_gap, gap);
      max_strict = std::max(max_strict, strict_gap);
      if (gap > kOracleGapTolerance || strict_gap > kOracleGapTolerance) ++failures;
      csv << i << ',' << steps << ',' << fmt(in.lattice.intensity()) << ',' << in.driver_spec.kind << ','
          << fmt(sol.y.main(0, 0)) << ',' << fmt(full.value) << ',' << fmt(gap) << ',' << fmt(sol.y.post(0, 0)) << ','
          << fmt(strict.value) << ',' << fmt(strict_gap) << ',' << full.rule_count << ',' << full.argmax << '\n';
    }
    emit.table("oracle_batch.csv", csv.str());
    s["batch"] = c.oracle.batch;
    s["max_gap"] = max_gap;
    s["max_strict_gap"] = max_strict;
    s["failures"] = failures;
    s["passed"] = failures == 0;
    s["config"] = to_json(c);
    emit.summary("oracle.json", s);
    return failures == 0 ? 0 : 1;
  }

  if (c.grid.num_steps > kDefaultOracleLimit)
    throw Error(ErrorCode::OracleTooLarge, "K = " + std::to_string(c.grid.num_steps) + " exceeds the oracle limit " +
                                               std::to_string(kDefaultOracleLimit));
  const Problem p = build_problem(c);
  const RbsdeSolution sol = solve_rbsde(p.lattice, p.obstacle, p.driver);
  const StoppingOracle oracle(p.lattice, p.obstacle, p.driver);
  const auto [full, strict] = oracle.value_and_strict(p.lattice.root());
  const double gap = std::abs(full.value - sol.y.main(0, 0));
  const double strict_gap = std::abs(strict.value - sol.y.post(0, 0));
  if (c.oracle.rule_table && full.rule_count <= 100'000) emit.table("oracle.csv", oracle_rules_csv(p.lattice, oracle));
  s["Y0"] = sol.y.main(0, 0);
  s["oracle_value"] = full.value;
  s["gap"] = gap;
  s["y_post"] = sol.y.post(0, 0);
  s["strict_value"] = strict.value;
  s["strict_gap"] = strict_gap;
  s["rule_count"] = full.rule_count;
  s["argmax"] = detail::rule_json(p.lattice, oracle.space(), full.argmax);
  const bool passed = gap <= kOracleGapTolerance && strict_gap <= kOracleGapTolerance;
  s["passed"] = passed;
  s["config"] = to_json(c);
  emit.summary("oracle.json", s);
  return passed ? 0 : 1;
}

inline ImperfectionSpec imperfection_of(const DriverSpec& d) {
  ImperfectionSpec imp;
  if (d.kind == "perfect_market") return imp;
  if (d.kind == "borrow_rate") {
    imp.kind = ImperfectionKind::BorrowRate;
    imp.borrow_rate = d.borrow_rate;
    return imp;
  }
  if (d.kind == "custom") {
    imp.kind = ImperfectionKind::Custom;
    imp.expression = d.expression;
    imp.lipschitz = d.lipschitz;
    return imp;
  }
  throw Error(ErrorCode::InvalidConfig, "price needs driver perfect_market, borrow_rate or custom");
}

inline int cmd_price(const RunConfig& c, std::ostream& out) {
  const detail::Emitter emit{c.output.dir, c.output.format, out};
  if (c.obstacle.source != ObstacleSource::Payoff || !c.market)
    throw Error(ErrorCode::InvalidConfig, "price needs a market section and a payoff obstacle");
  const ImperfectionSpec imp = imperfection_of(c.driver);

  const Lattice lattice(c.grid);
  const PricingResult price = price_american(lattice, *c.market, c.obstacle.payoff, imp);
  const HedgeReport hedge = superhedging_strategy(lattice, price.solution, price.obstacle, *c.market, price.driver);
  emit.table("pricing.csv", pricing_csv(lattice, price, hedge));

  bool passed = hedge.max_shortfall <= hedge.shortfall_bound + 1e-12;
  Json s;
  s["command"] = "price";
  s["u0"] = price.u0;
  s["A_mass"] = total_a_mass(lattice, price.solution);
  s["C_mass"] = total_c_mass(lattice, price.solution);
  s["shortfall"] = hedge.max_shortfall;
  s["shortfall_bound"] = hedge.shortfall_bound;
  s["expected_shortfall"] = hedge.expected_shortfall;
  s["wealth_residual"] = hedge.wealth_residual;
  const StoppingRule exercise = hitting_rule(
      lattice, [&](const NodeId& n) { return std::abs(price.solution.y[n] - price.obstacle[n]) <= kTouchTolerance; });
  Json nodes = Json::array();
  for (const NodeId& n : hit_nodes(lattice, exercise)) {
    if (std::abs(price.solution.y[n] - price.obstacle[n]) <= kTouchTolerance) nodes.push_back(to_string(n));
  }
  s["argmax_exercise_nodes"] = nodes;
  if (c.price.oracle) {
    if (lattice.steps() > kDefaultOracleLimit)
      throw Error(ErrorCode::OracleTooLarge, "price.oracle needs K <= " + std::to_string(kDefaultOracleLimit));
    const double v = value_by_oracle(lattice, price.obstacle, price.driver, lattice.root());
    s["oracle_value"] = v;
    s["oracle_gap"] = std::abs(v - price.u0);
    passed = passed && std::abs(v - price.u0) <= kOracleGapTolerance;
  }
  if (c.price.refine > 0) {
    if (!c.market->per_step.empty())
      throw Error(ErrorCode::InvalidConfig, "refinement needs time-constant market coefficients");
    Json sweep = Json::array();
    double previous = std::numeric_limits<double>::infinity();
    bool nonincreasing = true;
    for (int level = 0; level <= c.price.refine; ++level) {
      GridSpec g = c.grid;
      g.num_steps = c.grid.num_steps << level;
      const Lattice fine(g);
      const PricingResult pr = price_american(fine, *c.market, c.obstacle.payoff, imp);
      const HedgeReport hr = superhedging_strategy(fine, pr.solution, pr.obstacle, *c.market, pr.driver);
      sweep.push_back({{"steps", g.num_steps},
                       {"u0", pr.u0},
                       {"shortfall", hr.max_shortfall},
                       {"shortfall_bound", hr.shortfall_bound},
                       {"expected_shortfall", hr.expected_shortfall}});
      if (hr.max_shortfall > previous + 1e-12) nonincreasing = false;
      if (hr.max_shortfall > hr.shortfall_bound + 1e-12) passed = false;
      previous = hr.max_shortfall;
    }
    s["refinement"] = sweep;
    s["refinement_nonincreasing"] = nonincreasing;
    passed = passed && nonincreasing;
  }
  s["passed"] = passed;
  s["config"] = to_json(c);
  emit.summary("pricing.json", s);
  return passed ? 0 : 1;
}

inline int cmd_verify(const RunConfig& c, std::ostream& out, std::ostream& err) {
  const detail::Emitter emit{c.output.dir, c.output.format, out};
  std::vector<CheckConfig> checks = c.checks;
  if (checks.empty()) {
    for (const std::string& name : default_suites()) checks.push_back({name, std::nullopt});
  }
  std::vector<SuiteFn> fns;
  for (const CheckConfig& chk : checks) fns.push_back(find_suite(chk.name));

  Json results = Json::array();
  std::vector<std::string> failed;
  std::ostringstream lines;
  for (std::size_t i = 0; i < checks.size(); ++i) {
    const SuiteResult r = fns[i]({c.verify.seed, c.verify.instances, c.verify.steps, checks[i].tolerance});
    Json metrics = Json::object();
    lines << r.name << ' ' << (r.passed ? "PASS" : "FAIL") << " instances=" << r.instances
          << " failures=" << r.failures;
    for (const auto& [k, v] : r.metrics) {
      metrics[k] = v;
      lines << ' ' << k << '=' << fmt(v);
    }
    lines << '\n';
    Json item{{"name", r.name}, {"passed", r.passed}, {"instances", r.instances}, {"failures", r.failures},
              {"metrics", metrics}};
    if (!r.histogram.empty()) {
      Json hist = Json::array();
      for (const auto& [bucket, count] : r.histogram) {
        hist.push_back({{"bucket", bucket}, {"count", count}});
        lines << "  " << r.name << " histogram " << bucket << ' ' << count << '\n';
      }
      item["histogram"] = hist;
    }
    results.push_back(item);
    if (!r.passed) failed.push_back(r.name);
  }
  Json s;
  s["command"] = "verify";
  s["checks"] = results;
  s["failed"] = failed;
  s["passed"] = failed.empty();
  s["config"] = to_json(c);
  if (emit.csv()) emit.write("verify.txt", lines.str());
  emit.summary("verify.json", s);
  if (!failed.empty()) {
    err << Json{{"error", {{"code", "VERIFICATION_FAILED"}, {"message", "checks failed"}, {"failed", failed}}}}.dump()
        << '\n';
  }
  return failed.empty() ? 0 : 1;
}

/// Dispatches a command and maps exceptions to exit codes.
inline int run_command(const std::string& command, const CommandOptions& opt, std::ostream& out, std::ostream& err) {
  try {
    const RunConfig c = detail::resolve(command, opt);
    if (command == "solve") return cmd_solve(c, out);
    if (command == "oracle") return cmd_oracle(c, out);
    if (command == "price") return cmd_price(c, out);
    if (command == "verify") return cmd_verify(c, out, err);
    throw Error(ErrorCode::InvalidConfig, "unknown command '" + command + "'");
  } catch (const Error& e) {
    err << Json{{"error", {{"code", std::string(code_name(e.code()))}, {"message", e.message()}}}}.dump() << '\n';
    return is_input_error(e.code()) ? 2 : 1;
  } catch (const std::exception& e) {
    err << Json{{"error", {{"code", "INTERNAL"}, {"message", e.what()}}}}.dump() << '\n';
    return 1;
  }
}

}  // namespace rbsde
