// Acceptance run: one PASS/FAIL line per criterion. Every measured number
// also goes into a transcript; the last criterion reruns everything with
// parallelism on and off and compares transcripts byte for byte.

#include <chrono>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "rbsde/commands.hpp"

using namespace rbsde;

namespace {

constexpr std::uint64_t kSeed = 20240601;

struct Line {
  std::string id;
  bool passed;
  std::string detail;
};

struct Outcome {
  std::vector<Line> lines;
  std::string transcript;
  double ac1_seconds = 0.0;
};

class Recorder {
 public:
  void add(const std::string& id, bool passed, const std::string& detail) {
    out_.lines.push_back({id, passed, detail});
    out_.transcript += id + (passed ? " PASS " : " FAIL ") + detail + "\n";
  }
  void note(const std::string& text) { out_.transcript += text + "\n"; }
  Outcome& outcome() { return out_; }

 private:
  Outcome out_;
};

std::string kv(const std::string& key, double v) { return key + "=" + fmt(v) + " "; }

SuiteResult merge(const std::string& name, const std::vector<std::pair<int, int>>& plan, Recorder& rec) {
  SuiteResult total{name};
  for (const auto& [steps, count] : plan) {
    const SuiteResult r = find_suite(name)({kSeed, count, steps, std::nullopt});
    std::string m;
    for (const auto& [k, v] : r.metrics) m += kv(k, v);
    rec.note("  " + name + " K=" + std::to_string(steps) + " n=" + std::to_string(r.instances) + " " + m);
    total.instances += r.instances;
    total.failures += r.failures;
    total.passed = total.passed && r.passed;
    for (const auto& [k, v] : r.metrics) total.metrics.emplace_back(k + "@K" + std::to_string(steps), v);
  }
  return total;
}

double metric_max(const SuiteResult& r, const std::string& key) {
  double m = -std::numeric_limits<double>::infinity();
  for (const auto& [k, v] : r.metrics) {
    if (k.rfind(key + "@", 0) == 0) m = std::max(m, v);
  }
  return m;
}

double metric_min(const SuiteResult& r, const std::string& key) {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& [k, v] : r.metrics) {
    if (k.rfind(key + "@", 0) == 0) m = std::min(m, v);
  }
  return m;
}

void oracle_criteria(Recorder& rec, Outcome& out) {
  const auto start = std::chrono::steady_clock::now();
  double max_gap = 0.0, max_strict = 0.0, max_identity = 0.0;
  int non_rusc = 0, integrand = 0, counts[4] = {0, 0, 0, 0};
  const int n = 200;
  for (int i = 0; i < n; ++i) {
    const int K = i < 90 ? 1 : (i < 185 ? 2 : 3);
    Sampler s(instance_seed(kSeed, 101, static_cast<std::uint64_t>(i)));
    const Instance in = random_instance(s, {K, ObstacleShape::Arbitrary, K < 3});
    const RbsdeSolution sol = solve_rbsde(in.lattice, in.obstacle, in.driver);
    const StoppingOracle oracle(in.lattice, in.obstacle, in.driver);
    const auto [full, strict] = oracle.value_and_strict(in.lattice.root());
    max_gap = std::max(max_gap, std::abs(full.value - sol.y.main(0, 0)));
    max_strict = std::max(max_strict, std::abs(strict.value - sol.y.post(0, 0)));
    max_identity = std::max(max_identity, std::abs(full.value - std::max(strict.value, in.obstacle.main(0, 0))));
    if (!in.obstacle.is_rusc()) ++non_rusc;
    if (in.driver_spec.kind != "zero") ++integrand;
    ++counts[K];
  }
  out.ac1_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const std::string mix = "K1=" + std::to_string(counts[1]) + " K2=" + std::to_string(counts[2]) +
                          " K3=" + std::to_string(counts[3]) + " non_rusc=" + std::to_string(non_rusc) +
                          " integrand_drivers=" + std::to_string(integrand);
  rec.add("AC1", max_gap <= 1e-10, kv("max_gap", max_gap) + mix);
  rec.add("AC2", max_strict <= 1e-10 && max_identity <= 1e-10,
          kv("max_strict_gap", max_strict) + kv("max_identity_gap", max_identity));
}

void pricing_criterion(Recorder& rec) {
  const RunConfig c = load_config(std::string(RBSDE_CONFIG_DIR) + "/digital_call.json");
  const ImperfectionSpec perfect;
  // Oracle match at K = 2.
  const Lattice l2(c.grid);
  const PricingResult p2 = price_american(l2, *c.market, c.obstacle.payoff, perfect);
  const double oracle_gap = std::abs(p2.u0 - value_by_oracle(l2, p2.obstacle, p2.driver, l2.root()));

  // Refinement on the fixed instance.
  bool bound_ok = true, nonincreasing = true;
  double previous = std::numeric_limits<double>::infinity();
  std::string sweep;
  for (int K : {2, 4, 8}) {
    GridSpec g = c.grid;
    g.num_steps = K;
    const Lattice l(g);
    const PricingResult p = price_american(l, *c.market, c.obstacle.payoff, perfect);
    const HedgeReport h = superhedging_strategy(l, p.solution, p.obstacle, *c.market, p.driver);
    bound_ok = bound_ok && h.max_shortfall <= h.shortfall_bound + 1e-12;
    if (h.max_shortfall > previous + 1e-12) nonincreasing = false;
    previous = h.max_shortfall;
    sweep += "K" + std::to_string(K) + ":" + kv("u0", p.u0) + kv("shortfall", h.max_shortfall) +
             kv("bound", h.shortfall_bound) + kv("expected_shortfall", h.expected_shortfall);
  }

  // Bound on random markets and digital payoffs.
  int random_instances = 0;
  for (int i = 0; random_instances < 40; ++i) {
    Sampler s(instance_seed(kSeed, 110, static_cast<std::uint64_t>(i)));
    const Lattice l(random_grid(s, 1 + s.pick(6)));
    const MarketModel m = random_market(s);
    PayoffSpec pay;
    pay.kind = s.coin() ? PayoffKind::DigitalCall : PayoffKind::DigitalPut;
    pay.strike = s.uniform(0.9, 1.1);
    const bool borrow = s.coin();
    const ImperfectionSpec imp{borrow ? ImperfectionKind::BorrowRate : ImperfectionKind::Perfect,
                               m.base.r + (borrow ? s.uniform(0.0, 0.1) : 0.0)};
    try {
      const PricingResult p = price_american(l, m, pay, imp);
      const HedgeReport h = superhedging_strategy(l, p.solution, p.obstacle, m, p.driver);
      bound_ok = bound_ok && h.max_shortfall <= h.shortfall_bound + 1e-12;
      ++random_instances;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::MonotonicityFailed && e.code() != ErrorCode::NoContraction) throw;
    }
  }
  rec.add("AC10", oracle_gap <= 1e-10 && bound_ok && nonincreasing,
          kv("oracle_gap", oracle_gap) + "bound_holds=" + (bound_ok ? "yes" : "no") +
              " bound_instances=" + std::to_string(random_instances + 3) +
              " shortfall_nonincreasing=" + (nonincreasing ? "yes" : "no") + " | " + sweep);
}

Outcome run_all() {
  Recorder rec;
  Outcome& out = rec.outcome();
  oracle_criteria(rec, out);

  {
    const SuiteResult r = merge("comparison", {{2, 100}, {3, 100}, {4, 100}}, rec);
    rec.add("AC3", r.failures == 0 && r.instances == 300,
            kv("max_violation", metric_max(r, "max_violation")) + "pairs=" + std::to_string(r.instances) +
                " violations=" + std::to_string(r.failures));
  }
  {
    const SuiteResult r =
        merge("skorokhod", {{1, 20}, {2, 20}, {3, 20}, {4, 20}, {5, 20}, {6, 10}, {7, 4}, {8, 2}}, rec);
    rec.add("AC4", r.passed,
            kv("max_flat_violation", metric_max(r, "max_flat_violation")) +
                kv("max_residual", metric_max(r, "max_reconstruction_residual")) +
                "instances=" + std::to_string(r.instances) + " max_K=8");
  }
  {
    const SuiteResult r = merge("orthogonality", {{1, 20}, {2, 20}, {3, 20}, {4, 20}, {5, 20}, {6, 20}}, rec);
    double nonzero = 0.0;
    for (const auto& [k, v] : r.metrics) {
      if (k.rfind("nonzero_h_fraction@", 0) == 0) nonzero += v * 20.0;
    }
    const double fraction = nonzero / r.instances;
    rec.add("AC5", r.failures == 0 && fraction >= 0.5,
            kv("max_moment", metric_max(r, "max_moment")) + kv("nonzero_h_fraction", fraction));
  }
  {
    const SuiteResult r = merge("refop", {{2, 50}, {3, 50}, {4, 50}, {5, 50}}, rec);
    rec.add("AC6", r.passed,
            kv("max_monotonicity_violation", metric_max(r, "max_monotonicity_violation")) +
                kv("min_domination_margin", metric_min(r, "min_domination_margin")) +
                kv("max_idempotence_gap", metric_max(r, "max_idempotence_gap")) +
                "monotone_pairs=" + std::to_string(r.instances) + " idempotence_instances=" +
                std::to_string(r.instances));
  }
  {
    const SuiteResult r = merge("epsilon_optimal", {{2, 25}, {3, 25}, {4, 25}, {5, 25}}, rec);
    rec.add("AC7", r.passed,
            kv("empirical_best_L", metric_max(r, "empirical_best_L")) + kv("max_L", metric_max(r, "max_L")) +
                kv("max_gap_over_L_eps", metric_max(r, "max_gap_over_L_eps")) +
                "instances=" + std::to_string(r.instances));
  }
  {
    const SuiteResult r = merge("optimal_rule", {{2, 25}, {3, 25}, {4, 25}, {5, 25}}, rec);
    double settled = 0.0, continuing = 0.0;
    for (const auto& [k, v] : r.metrics) {
      if (k.rfind("settled_instances@", 0) == 0) settled += v;
      if (k.rfind("continuing_at_root@", 0) == 0) continuing += v;
    }
    rec.add("AC8", r.passed,
            kv("max_value_gap", metric_max(r, "max_value_gap")) + kv("settled", settled) +
                kv("continuing_at_root", continuing) + "instances=" + std::to_string(r.instances));
  }
  {
    const SuiteResult fine = merge("estimates", {{6, 100}}, rec);
    const SuiteResult coarse = merge("estimates", {{3, 100}}, rec);
    const double within = fine.get("fraction_within@K6");
    const double m6 = fine.get("median_lhs_over_rhs@K6"), m3 = coarse.get("median_lhs_over_rhs@K3");
    rec.add("AC9", within >= 0.95 && m6 < m3,
            kv("fraction_within", within) + kv("slack_bound", fine.get("slack_bound@K6")) +
                kv("max_slack", fine.get("max_slack@K6")) + kv("median_slack_K3", coarse.get("median_slack@K3")) +
                kv("median_slack_K6", fine.get("median_slack@K6")) + kv("median_lhs_over_rhs_K3", m3) +
                kv("median_lhs_over_rhs_K6", m6));
  }
  pricing_criterion(rec);
  return std::move(out);
}

/// CLI outputs (stdout and files) for a few configs, concatenated.
std::string cli_outputs() {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "rbsde_acceptance_cli";
  std::string all;
  const std::vector<std::pair<std::string, std::string>> runs{{"solve", "irregular.json"},
                                                              {"oracle", "oracle_batch.json"},
                                                              {"price", "digital_call.json"},
                                                              {"price", "digital_put_borrow.json"}};
  for (const auto& [command, file] : runs) {
    fs::remove_all(dir);
    CommandOptions opt;
    opt.config_path = std::string(RBSDE_CONFIG_DIR) + "/" + file;
    opt.out_dir = dir.string();
    std::ostringstream out, err;
    const int code = run_command(command, opt, out, err);
    all += command + " " + file + " exit=" + std::to_string(code) + "\n" + out.str() + err.str();
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& p : files) {
      std::ifstream f(p, std::ios::binary);
      std::stringstream ss;
      ss << f.rdbuf();
      all += p.filename().string() + "\n" + ss.str();
    }
  }
  fs::remove_all(dir);
  return all;
}

}  // namespace

int main() {
  set_parallel(true);
  const Outcome first = run_all();
  const std::string cli_first = cli_outputs();

  const Outcome second = run_all();
  const std::string cli_second = cli_outputs();
  set_parallel(false);
  const Outcome serial = run_all();
  const std::string cli_serial = cli_outputs();
  set_parallel(true);

  bool all_passed = true;
  for (const Line& l : first.lines) {
    std::string detail = l.detail;
    if (l.id == "AC1") detail += " runtime_s=" + fmt(std::round(first.ac1_seconds * 10) / 10) + " target_s=120";
    const bool passed = l.passed && (l.id != "AC1" || first.ac1_seconds < 120.0);
    std::printf("%s %s %s\n", l.id.c_str(), passed ? "PASS" : "FAIL", detail.c_str());
    all_passed = all_passed && passed;
  }
  const bool runs_match = first.transcript == second.transcript && cli_first == cli_second;
  const bool parallel_match = first.transcript == serial.transcript && cli_first == cli_serial;
  const bool ac11 = runs_match && parallel_match;
  std::printf("AC11 %s transcript_bytes=%zu cli_bytes=%zu two_runs_identical=%s parallel_on_off_identical=%s\n",
              ac11 ? "PASS" : "FAIL", first.transcript.size(), cli_first.size(), runs_match ? "yes" : "no",
              parallel_match ? "yes" : "no");
  all_passed = all_passed && ac11;
  std::printf("\n--- transcript ---\n%s", first.transcript.c_str());
  return all_passed ? 0 : 1;
}
