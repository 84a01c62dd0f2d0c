// Acceptance report: one PASS/FAIL line per criterion, followed by a
// summary. The exit status is 0 whenever the report was produced; a
// criterion that fails is reported, not hidden behind a crash.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "qembed/chain.hpp"
#include "qembed/coeffs.hpp"
#include "qembed/experiment.hpp"
#include "qembed/network.hpp"
#include "qembed/optimizers.hpp"
#include "qembed/queues.hpp"

#include "support.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace qembed;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

int passed = 0, total = 0;

void report(const std::string& name, const std::function<Verdict()>& check) {
  const auto t0 = std::chrono::steady_clock::now();
  Verdict v;
  try {
    v = check();
  } catch (const std::exception& e) {
    v = {false, fmt::format("exception: {}", e.what())};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  ++total;
  passed += v.pass;
  fmt::print("{} {}: {} [{:.1f} s]\n", v.pass ? "PASS" : "FAIL", name, v.detail, secs);
  std::fflush(stdout);
}

fs::path results_dir() {
  const fs::path p = fs::current_path() / "acceptance-results";
  fs::create_directories(p);
  return p;
}

QueueFamily geogeo1c() { return {Variant::GeoGeo1C, 0.5, 0.51, {{"C", DiscreteDomain(1, 5)}}}; }
QueueFamily geod1c() { return {Variant::GeoD1C, 0.49, 0.0, {{"C", DiscreteDomain(1, 5)}, {"T", DiscreteDomain(2, 2)}}}; }
QueueFamily geod1t() { return {Variant::GeoD1T, 0.24, 0.0, {{"T", DiscreteDomain(1, 4)}}}; }

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Verdict coefficient_laws() {
  const DiscreteDomain d(1, 5);
  double worst_sum = 0.0, worst_jump = 0.0;
  bool range = true, lattice = true;
  std::string worst_tmpl;
  int templates = 0, continuous = 0;
  for (int n : {1, 2})
    for (double s : {-2.0, -1.0, 1.0, 2.0, 4.0})
      for (double r : {0.5, 1.0, 2.0}) {
        const CoeffTemplate t(n, r, s);
        ++templates;
        double jump = 0.0;
        for (int i = 0; i <= 4000; ++i) {
          const double y = 1.0 + i / 1000.0;
          const auto a = alphas(y, d, t);
          const auto b = alphas(std::min(y + 1e-6, 5.0), d, t);
          double sum = 0.0;
          for (double w : a.weights) {
            range = range && w >= 0.0 && w <= 1.0;
            sum += w;
          }
          worst_sum = std::max(worst_sum, std::fabs(sum - 1.0));
          for (int k = d.lo; k <= d.hi; ++k) jump = std::max(jump, std::fabs(a.weight_of(k) - b.weight_of(k)));
        }
        for (int k = d.lo; k <= d.hi; ++k) {
          const auto a = alphas(k, d, t);
          lattice = lattice && a.support == std::vector<int>{k} && a.weights == std::vector<double>{1.0};
        }
        continuous += jump <= 1e-3;
        if (jump > worst_jump) {
          worst_jump = jump;
          worst_tmpl = fmt::format("N={} r={} s={}", n, r, s);
        }
      }
  const bool pass = worst_sum <= 1e-12 && range && lattice && continuous == templates;
  return {pass, fmt::format("max |sum-1| = {:.1e}, range {}, lattice {}, continuity probe {}/{} templates "
                            "(worst jump {:.2e} at {})",
                            worst_sum, range ? "ok" : "violated", lattice ? "exact" : "violated", continuous,
                            templates, worst_jump, worst_tmpl)};
}

Verdict fig1() {
  const auto a = alphas(2.8, DiscreteDomain(1, 5), {1, 1, 1});
  const double a2 = a.weight_of(2), a3 = a.weight_of(3);
  const bool pass = a.support == std::vector<int>{2, 3} && a2 == 0.2 && a3 == 0.8;
  return {pass, fmt::format("alpha2 = {:.17g}, alpha3 = {:.17g} (differences {:.1e}, {:.1e})", a2, a3, a2 - 0.2,
                            a3 - 0.8)};
}

Verdict endpoints() {
  const std::vector<double> ints{1, 2, 3, 4, 5};
  const auto curve = interpolation_curve(geogeo1c(), "C", ints, {1, 1, -1}, Metric::Blocking);
  double worst = 0.0;
  for (int c = 1; c <= 5; ++c) {
    QueueFamily fixed{Variant::GeoGeo1C, 0.5, 0.51, {{"C", DiscreteDomain(c, c)}}};
    const auto chain = build_chain(fixed, {{"C", c}}, c);
    worst = std::max(worst, std::fabs(curve[c - 1].mean - exact_value(chain, blocking_cost(*chain.space))));
  }
  return {worst <= 1e-12, fmt::format("max |curve - fixed| over C=1..5 = {:.1e}", worst)};
}

std::vector<SweepRow> fig4_oracle_curve() {
  static const auto rows = interpolation_curve(geogeo1c(), "C", make_grid(1, 5, 0.01), {1, 1, -1}, Metric::Blocking);
  return rows;
}

Verdict continuity() {
  const auto rows = fig4_oracle_curve();
  std::vector<double> d;
  for (std::size_t i = 1; i < rows.size(); ++i) d.push_back(std::fabs(rows[i].mean - rows[i - 1].mean));
  const double med = median(d);
  const double biggest = *std::max_element(d.begin(), d.end());
  return {biggest <= 10.0 * med,
          fmt::format("{} points, largest jump {:.3e} = {:.2f} x median {:.3e}", rows.size(), biggest, biggest / med, med)};
}

Verdict sim_oracle() {
  struct Case {
    std::string name;
    QueueFamily family;
    std::string axis;
    CoeffTemplate tmpl;
    Metric metric;
    std::vector<double> ys;
  };
  // Lattice points first, then non-lattice points spread over the range.
  const std::vector<Case> cases{
      {"GeoGeo1C", geogeo1c(), "C", {1, 1, -1}, Metric::Blocking, {1, 2, 3, 4, 5, 1.5, 2.25, 3.5, 4.25, 4.75}},
      {"GeoD1C", geod1c(), "C", {1, 1, 1}, Metric::Blocking, {1, 2, 3, 4, 5, 1.5, 2.25, 3.5, 4.25, 4.75}},
      {"GeoD1T", geod1t(), "T", {1, 1, 1}, Metric::AvgJobs, {1, 2, 3, 4, 1.25, 1.5, 2.25, 2.5, 3.25, 3.5}},
  };
  int inside = 0, points = 0;
  std::string misses;
  for (const auto& c : cases) {
    SweepSpec spec;
    spec.base.variant = c.family.variant;
    spec.base.arrival_p = c.family.arrival_p;
    spec.base.service_q = c.family.service_q;
    for (const auto& [name, dom] : c.family.domains) {
      if (name != c.axis) spec.base.fixed[name] = dom.lo;
    }
    spec.axis = c.axis;
    spec.domain = c.family.domains.at(c.axis);
    spec.coeff_template = c.tmpl;
    spec.grid = c.ys;
    spec.metric = c.metric;
    spec.horizon = 10000;
    spec.replications = 100;
    spec.seed0 = 1;
    const auto sim = sweep(spec);
    const auto exact = interpolation_curve(c.family, c.axis, c.ys, c.tmpl, c.metric);
    for (std::size_t i = 0; i < c.ys.size(); ++i) {
      ++points;
      // Compared without dividing: a zero-variance point must match exactly.
      const double diff = sim[i].mean - exact[i].mean;
      const double se = sim[i].std / std::sqrt(double(spec.replications));
      if (std::fabs(diff) <= 3.0 * se) {
        ++inside;
      } else {
        misses += fmt::format(" {}@{} (diff {:.3g} = {:.1f} se)", c.name, c.ys[i], diff, diff / se);
      }
    }
  }
  return {inside >= 28, fmt::format("{}/{} points within 3 standard errors{}", inside, points,
                                    misses.empty() ? "" : "; outside:" + misses)};
}

Verdict fig4_shape() {
  const auto oracle = fig4_oracle_curve();
  bool strictly = true;
  for (std::size_t i = 1; i < oracle.size(); ++i) strictly = strictly && oracle[i].mean < oracle[i - 1].mean;

  const auto cfg = load_config(default_protocol_dir() / "fig4.json");
  RunOptions opt;
  opt.out = results_dir() / "fig4";
  run_config(cfg, opt);
  const auto sim = read_sweep_csv_file(opt.out / "sweep.csv");
  int rises = 0;
  for (std::size_t i = 1; i < sim.size(); ++i) {
    const double se = std::hypot(sim[i].std, sim[i - 1].std) / std::sqrt(double(sim[i].replications));
    rises += sim[i].mean > sim[i - 1].mean + 3.0 * se;
  }
  return {strictly && rises == 0,
          fmt::format("oracle strictly decreasing on {} points: {}; simulated rises beyond noise: {} of {} steps",
                      oracle.size(), strictly ? "yes" : "no", rises, sim.size() - 1)};
}

Verdict kinks() {
  const auto grid = make_grid(1, 5, 0.01);
  auto kink_total = [&](const CoeffTemplate& t) {
    const auto rows = interpolation_curve(geod1c(), "C", grid, t, Metric::Blocking);
    double total = 0.0;
    for (int k = 2; k <= 4; ++k) {
      const std::size_t i = static_cast<std::size_t>((k - 1) * 100);
      total += std::fabs(rows[i + 1].mean - 2 * rows[i].mean + rows[i - 1].mean) / 0.01;
    }
    return total;
  };
  const double s1 = kink_total({1, 1, 1});
  const double sm2 = kink_total({1, 1, -2});
  return {sm2 < s1, fmt::format("summed slope change at C=2,3,4: s=1 {:.4f}, s=-2 {:.4f}", s1, sm2)};
}

Verdict overhead() {
  const auto cfg = load_config(default_protocol_dir() / "table2.json");
  RunOptions opt;
  opt.out = results_dir() / "table2";
  run_config(cfg, opt);
  std::ifstream in(opt.out / "overhead.json");
  const auto table = json::parse(in);
  std::vector<double> pct;
  for (const auto& row : table["rows"]) pct.push_back(row["overhead_pct"].get<double>());
  int drops = 0;
  for (std::size_t i = 1; i < pct.size(); ++i) drops += pct[i] < pct[i - 1] - 5.0;
  const bool monotone = drops <= 1 && pct.back() >= pct[1];
  std::string series;
  for (double p : pct) series += fmt::format(" {:.1f}", p);
  return {monotone && pct.back() <= 50.0,
          fmt::format("overhead % by embedded count:{}; 7 parameters {:.1f}% (bound 50%), {}", series, pct.back(),
                      monotone ? "monotone-ish" : "not monotone")};
}

struct CampaignOutcome {
  std::map<std::string, json> summary;
  std::vector<json> cobyla_runs;
};

CampaignOutcome run_table3(std::uint64_t seed) {
  const auto cfg = load_config(default_protocol_dir() / "table3.json");
  RunOptions opt;
  opt.seed = seed;
  opt.out = results_dir() / fmt::format("table3-seed{}", seed);
  run_config(cfg, opt);
  CampaignOutcome out;
  std::ifstream s(opt.out / "summary.json");
  const json summary = json::parse(s);
  for (const auto& m : summary["methods"]) out.summary[m["method"].get<std::string>()] = m;
  std::ifstream r(opt.out / "runs_cobyla.jsonl");
  std::string line;
  while (std::getline(r, line)) {
    if (!line.empty()) out.cobyla_runs.push_back(json::parse(line));
  }
  return out;
}

Verdict campaign_criteria() {
  int a_ok = 0, b_ok = 0;
  std::string per_seed;
  CampaignOutcome first;
  for (std::uint64_t seed : {1, 2, 3}) {
    auto c = run_table3(seed);
    const double best = c.summary["cobyla"]["best"].get<double>();
    const double spsa_avg = c.summary["spsa"]["avg"].get<double>();
    const double dspsa_avg = c.summary["discrete-spsa"]["avg"].get<double>();
    a_ok += best <= -0.65;
    b_ok += spsa_avg <= dspsa_avg;
    per_seed += fmt::format(" seed {}: best {:.4f}, avg spsa {:.4f} vs discrete {:.4f}, cobyla avg {:.4f};", seed,
                            best, spsa_avg, dspsa_avg, c.summary["cobyla"]["avg"].get<double>());
    if (seed == 1) first = std::move(c);
  }
  const double evals = first.summary["cobyla"]["avg_evals"].get<double>();
  auto runs = first.cobyla_runs;
  std::sort(runs.begin(), runs.end(),
            [](const json& x, const json& y) { return x["objective"].get<double>() < y["objective"].get<double>(); });
  runs.resize(std::min<std::size_t>(20, runs.size()));
  std::map<int, int> t1, t3, k2;
  for (const auto& r : runs) {
    ++t1[r["rounded"][T1].get<int>()];
    ++t3[r["rounded"][T3].get<int>()];
    ++k2[r["rounded"][K2].get<int>()];
  }
  auto mode = [](const std::map<int, int>& h) {
    return std::max_element(h.begin(), h.end(), [](auto& x, auto& y) { return x.second < y.second; })->first;
  };
  const bool a = a_ok >= 2, b = b_ok >= 2, c = evals < 300, d = mode(t1) == 1 && mode(t3) == 10;
  return {a && b && c && d,
          fmt::format("(a) best <= -0.65 in {}/3 {}; (b) spsa avg <= discrete avg in {}/3 {}; (c) cobyla avg evals "
                      "{:.1f} {}; (d) top-20 modes T1={} ({}/20), T3={} ({}/20), K2={} ({}/20) {};{}",
                      a_ok, a ? "ok" : "FAIL", b_ok, b ? "ok" : "FAIL", evals, c ? "ok" : "FAIL", mode(t1),
                      t1[mode(t1)], mode(t3), t3[mode(t3)], mode(k2), k2[mode(k2)], d ? "ok" : "FAIL", per_seed)};
}

Verdict optimizer_units() {
  const Box box = Box::uniform(7, 1.0, 10.0);
  const auto starts = initial_points(box, 100, 2024);
  int tr_ok = 0, spsa_ok = 0, tr_evals_max = 0;
  for (int i = 0; i < 100; ++i) {
    const Objective f = [i](const Eigen::VectorXd& x, std::uint64_t s) {
      return test::noisy_quadratic(x, derive_seed(7000 + i, s), 0.1);
    };
    const auto tr = cobyla_style(f, starts[i], box, TrustRegionConfig{});
    tr_ok += test::dist_to_optimum(tr.x) <= 0.2;
    tr_evals_max = std::max(tr_evals_max, tr.evals);
    SpsaConfig cfg;
    cfg.seed = static_cast<std::uint64_t>(i + 1);
    spsa_ok += test::dist_to_optimum(spsa(f, starts[i], box, cfg).x) <= 0.5;
  }
  return {tr_ok >= 90 && spsa_ok >= 90,
          fmt::format("noise sd 0.1, budget 1000: trust region within 0.2 in {}/100 runs (max {} evals), "
                      "SPSA within 0.5 in {}/100 runs (90 required)",
                      tr_ok, tr_evals_max, spsa_ok)};
}

}  // namespace

int main() {
  report("coefficient-laws", coefficient_laws);
  report("fig1-weights", fig1);
  report("oracle-endpoints", endpoints);
  report("oracle-continuity", continuity);
  report("sim-oracle-agreement", sim_oracle);
  report("fig4-shape", fig4_shape);
  report("kink-ordering", kinks);
  report("overhead", overhead);
  report("optimizer-units", optimizer_units);
  report("campaign", campaign_criteria);
  fmt::print("{}/{} criteria passed\n", passed, total);
  return 0;
}
