#include "qembed/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "qembed/chain.hpp"
#include "qembed/network.hpp"
#include "qembed/optimizers.hpp"
#include "qembed/parallel.hpp"

namespace qembed {

using nlohmann::json;
namespace fs = std::filesystem;

int exit_code_for_current_exception() {
  try {
    throw;
  } catch (const ParseError&) {
    return kExitParse;
  } catch (const IoError&) {
    return kExitIo;
  } catch (const std::invalid_argument&) {
    return kExitValidation;
  } catch (const std::domain_error&) {
    return kExitValidation;
  } catch (const StructuralError&) {
    return kExitValidation;
  } catch (...) {
    return kExitRuntime;
  }
}

namespace {

// Read-only view of one config value that copies everything it reads
// (defaults included) into the resolved config.
class Field {
 public:
  Field(const json& src, json& out, std::string path) : src_(&src), out_(&out), path_(std::move(path)) {}

  const std::string& path() const { return path_; }
  bool has(const std::string& key) const { return src_->is_object() && src_->contains(key); }

  [[noreturn]] void fail(const std::string& what) const {
    throw ConfigError(fmt::format("{}: {}", path_.empty() ? "<root>" : path_, what));
  }

  Field operator[](const std::string& key) const {
    if (!src_->is_object()) fail("expected an object");
    if (!src_->contains(key)) throw ConfigError(fmt::format("{}: required field missing", join(key)));
    return child(key);
  }

  /// Missing optional objects read as {}.
  Field object_or_empty(const std::string& key) const {
    if (has(key)) return (*this)[key];
    static const json empty = json::object();
    (*out_)[key] = json::object();
    return Field(empty, (*out_)[key], join(key));
  }

  std::size_t size() const {
    if (!src_->is_array()) fail("expected an array");
    return src_->size();
  }

  Field item(std::size_t i) const {
    size();
    if (!out_->is_array()) *out_ = json::array();
    while (out_->size() <= i) out_->push_back(nullptr);
    return Field((*src_)[i], (*out_)[i], fmt::format("{}[{}]", path_, i));
  }

  std::vector<std::string> keys() const {
    if (!src_->is_object()) fail("expected an object");
    std::vector<std::string> k;
    for (auto it = src_->begin(); it != src_->end(); ++it) k.push_back(it.key());
    return k;
  }

  void allow(std::initializer_list<std::string_view> known) const {
    for (const auto& k : keys()) {
      if (std::find(known.begin(), known.end(), k) == known.end()) {
        throw ConfigError(fmt::format("{}: unknown field", join(k)));
      }
    }
  }

  template <typename T>
  T as() const {
    T value;
    if constexpr (std::is_same_v<T, bool>) {
      if (!src_->is_boolean()) fail("expected true or false");
      value = src_->get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!src_->is_string()) fail("expected a string");
      value = src_->get<std::string>();
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      if (!src_->is_number_unsigned()) fail("expected a nonnegative integer");
      value = src_->get<std::uint64_t>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!src_->is_number_integer()) fail("expected an integer");
      const auto v = src_->get<std::int64_t>();
      if (v < std::numeric_limits<T>::min() || v > std::numeric_limits<T>::max()) fail("integer out of range");
      value = static_cast<T>(v);
    } else {
      if (!src_->is_number()) fail("expected a number");
      value = src_->get<double>();
      if (!std::isfinite(value)) fail("expected a finite number");
    }
    *out_ = value;
    return value;
  }

  template <typename T>
  T get(const std::string& key, T fallback) const {
    if (has(key)) return (*this)[key].as<T>();
    (*out_)[key] = fallback;
    return fallback;
  }

  /// Records a derived default that is not a plain scalar.
  void put(const std::string& key, json value) const { (*out_)[key] = std::move(value); }

  template <typename T>
  T get(const std::string& key) const {
    return (*this)[key].as<T>();
  }

 private:
  std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  Field child(const std::string& key) const { return Field(src_->at(key), (*out_)[key], join(key)); }

  const json* src_;
  json* out_;
  std::string path_;
};

template <typename T>
T positive(const Field& f, const std::string& key, T fallback) {
  const T v = f.get<T>(key, fallback);
  if (!(v > 0)) throw ConfigError(fmt::format("{}.{}: must be positive", f.path().empty() ? "<root>" : f.path(), key));
  return v;
}

struct Grid {
  double start = 0, stop = 0, step = 0;
  std::vector<double> values;
};

Grid parse_grid(const Field& f) {
  f.allow({"start", "stop", "step"});
  Grid g;
  g.start = f.get<double>("start");
  g.stop = f.get<double>("stop");
  g.step = f.get<double>("step");
  if (!(g.step > 0.0)) f.fail("step must be positive");
  if (!(g.stop >= g.start)) f.fail("stop must not be below start");
  g.values = make_grid(g.start, g.stop, g.step);
  return g;
}

void check_grid_in(const Field& f, const Grid& g, int lo, int hi) {
  for (double y : g.values) {
    if (!DiscreteDomain(lo, hi).contains(y)) {
      f.fail(fmt::format("grid point {} outside the parameter range [{}, {}]", y, lo, hi));
    }
  }
}

CoeffTemplate parse_template(const Field& f) {
  f.allow({"stencil", "r", "s"});
  const int stencil = f.get<int>("stencil", 2);
  const double r = f.get<double>("r", 1.0);
  const double s = f.get<double>("s", 1.0);
  try {
    return CoeffTemplate::from_stencil_size(stencil, r, s);
  } catch (const std::exception& e) {
    f.fail(e.what());
  }
}

std::vector<CoeffTemplate> parse_templates(const Field& cfg) {
  if (cfg.has("template") && cfg.has("templates")) cfg.fail("give either template or templates, not both");
  std::vector<CoeffTemplate> out;
  if (cfg.has("templates")) {
    const Field list = cfg["templates"];
    if (list.size() == 0) list.fail("needs at least one template");
    for (std::size_t i = 0; i < list.size(); ++i) out.push_back(parse_template(list.item(i)));
  } else {
    out.push_back(parse_template(cfg.object_or_empty("template")));
  }
  return out;
}

std::string template_tag(const CoeffTemplate& t) {
  return fmt::format("n{}_r{}_s{}", t.stencil_size(), t.spread, t.skew);
}

// ---- single-stage queues ----

struct QueuePlan {
  SlotModel base;
  std::string axis;
  DiscreteDomain domain;
  std::vector<CoeffTemplate> templates;
  Grid grid;
  Metric metric = Metric::Blocking;
  std::int64_t horizon = 10000;
  std::int64_t warmup = 0;
  int replications = 100;
  std::uint64_t seed = 1;
  OracleOptions oracle;
};

QueuePlan parse_queue(const Field& cfg, bool simulated) {
  QueuePlan plan;
  const Field model = cfg["model"];
  model.allow({"variant", "p", "q", "fixed"});
  const std::string variant = model.get<std::string>("variant");
  try {
    plan.base.variant = parse_variant(variant);
  } catch (const std::exception& e) {
    model["variant"].fail(e.what());
  }
  plan.base.arrival_p = model.get<double>("p");
  if (!(plan.base.arrival_p >= 0.0 && plan.base.arrival_p <= 1.0)) model["p"].fail("must be a probability");
  if (geometric_service(plan.base.variant)) {
    plan.base.service_q = model.get<double>("q");
    if (!(plan.base.service_q >= 0.0 && plan.base.service_q <= 1.0)) model["q"].fail("must be a probability");
  } else if (model.has("q")) {
    model["q"].fail(fmt::format("{} has deterministic service; q does not apply", variant));
  }
  const auto names = parameter_names(plan.base.variant);
  const Field fixed = model.object_or_empty("fixed");
  for (const auto& k : fixed.keys()) {
    if (std::find(names.begin(), names.end(), k) == names.end()) {
      fixed[k].fail(fmt::format("{} has no parameter {}", variant, k));
    }
    const int v = fixed.get<int>(k);
    if (v < 1) fixed[k].fail("must be >= 1");
    plan.base.fixed[k] = v;
  }

  const Field axis = cfg["axis"];
  axis.allow({"name", "domain"});
  plan.axis = axis.get<std::string>("name");
  if (std::find(names.begin(), names.end(), plan.axis) == names.end()) {
    axis["name"].fail(fmt::format("{} has no parameter {}", variant, plan.axis));
  }
  if (plan.base.fixed.count(plan.axis)) axis["name"].fail("the swept parameter cannot also be fixed");
  for (const auto& n : names) {
    if (n != plan.axis && !plan.base.fixed.count(n)) {
      model.fail(fmt::format("parameter {} must be swept or listed under fixed", n));
    }
  }
  const Field dom = axis["domain"];
  if (dom.size() != 2) dom.fail("expected [lo, hi]");
  const int lo = dom.item(0).as<int>(), hi = dom.item(1).as<int>();
  if (lo < 1 || hi < lo) dom.fail("need 1 <= lo <= hi");
  plan.domain = DiscreteDomain(lo, hi);

  plan.templates = parse_templates(cfg);
  plan.grid = parse_grid(cfg["grid"]);
  check_grid_in(cfg["grid"], plan.grid, lo, hi);
  try {
    plan.metric = parse_metric(cfg.get<std::string>("metric", "blocking"));
  } catch (const std::exception& e) {
    cfg["metric"].fail(e.what());
  }
  plan.seed = cfg.get<std::uint64_t>("seed", 1);
  if (simulated) {
    plan.horizon = positive<std::int64_t>(cfg, "horizon", 10000);
    plan.warmup = cfg.get<std::int64_t>("warmup", 0);
    if (plan.warmup < 0) cfg["warmup"].fail("must be >= 0");
    plan.replications = positive<int>(cfg, "replications", 100);
  } else {
    const Field o = cfg.object_or_empty("oracle");
    o.allow({"initial_truncation", "max_truncation", "tail_band", "tail_tolerance"});
    plan.oracle.initial_truncation = positive<int>(o, "initial_truncation", plan.oracle.initial_truncation);
    plan.oracle.max_truncation = positive<int>(o, "max_truncation", plan.oracle.max_truncation);
    plan.oracle.tail_band = positive<int>(o, "tail_band", plan.oracle.tail_band);
    plan.oracle.tail_tolerance = positive<double>(o, "tail_tolerance", plan.oracle.tail_tolerance);
  }
  return plan;
}

// ---- network ----

struct NetworkScenario {
  NetworkConfig config;
  std::array<double, kNetworkDim> point{5, 5, 5, 5, 5, 5, 5};
  std::array<CoeffTemplate, kNetworkDim> templates;
};

NetworkScenario parse_network(const Field& cfg) {
  NetworkScenario s;
  const Field net = cfg.object_or_empty("network");
  net.allow({"p", "q2", "point", "templates"});
  s.config.arrival_p = net.get<double>("p", 0.5);
  if (!(s.config.arrival_p > 0.0 && s.config.arrival_p <= 1.0)) net["p"].fail("must be in (0, 1]");
  s.config.q2 = net.get<double>("q2", 0.1);
  if (!(s.config.q2 >= 0.0 && s.config.q2 <= 1.0)) net["q2"].fail("must be a probability");
  for (std::size_t i = 0; i < kNetworkDim; ++i) s.templates[i] = default_net_template(i);

  const Field point = net.object_or_empty("point");
  const Field tmpl = net.object_or_empty("templates");
  for (const Field* f : {&point, &tmpl}) {
    for (const auto& k : f->keys()) {
      if (!net_param_index(k)) (*f)[k].fail("unknown network parameter (C1, C2, C3, T1, T3, K2, K3)");
    }
  }
  for (std::size_t i = 0; i < kNetworkDim; ++i) {
    const std::string name(kNetParamNames[i]);
    s.point[i] = point.get<double>(name, s.point[i]);
    if (!DiscreteDomain(kNetLo, kNetHi).contains(s.point[i])) {
      point[name].fail(fmt::format("must lie in [{}, {}]", kNetLo, kNetHi));
    }
    if (tmpl.has(name)) {
      s.templates[i] = parse_template(tmpl[name]);
    } else {
      const Field t = tmpl.object_or_empty(name);
      t.get<int>("stencil", s.templates[i].stencil_size());
      t.get<double>("r", s.templates[i].spread);
      t.get<double>("s", s.templates[i].skew);
    }
  }
  return s;
}

std::size_t net_index(const Field& f) {
  const auto name = f.as<std::string>();
  auto idx = net_param_index(name);
  if (!idx) f.fail(fmt::format("unknown network parameter '{}'", name));
  return *idx;
}

double objective_at(const NetworkScenario& s, std::span<const double> x, std::int64_t horizon, std::uint64_t seed) {
  const auto m = simulate_network(NetworkParams::embedded(x, s.templates), horizon, seed, s.config);
  return network_cost(x) / kMaxNetworkCost - m.throughput() / s.config.arrival_p;
}

struct SlicePlan {
  NetworkScenario scenario;
  std::vector<std::pair<std::size_t, std::size_t>> slices;
  Grid grid;
  std::int64_t horizon = 10000;
  int replications = 1;
  std::uint64_t seed = 1;
};

SlicePlan parse_slice(const Field& cfg) {
  SlicePlan plan;
  plan.scenario = parse_network(cfg);
  const Field slices = cfg["slices"];
  if (slices.size() == 0) slices.fail("needs at least one pair");
  for (std::size_t i = 0; i < slices.size(); ++i) {
    const Field pair = slices.item(i);
    if (pair.size() != 2) pair.fail("expected a pair of parameter names");
    const auto a = net_index(pair.item(0)), b = net_index(pair.item(1));
    if (a == b) pair.fail("the two swept parameters must differ");
    plan.slices.emplace_back(a, b);
  }
  plan.grid = parse_grid(cfg["grid"]);
  check_grid_in(cfg["grid"], plan.grid, kNetLo, kNetHi);
  plan.horizon = positive<std::int64_t>(cfg, "horizon", 10000);
  plan.replications = positive<int>(cfg, "replications", 1);
  plan.seed = cfg.get<std::uint64_t>("seed", 1);
  return plan;
}

struct OverheadPlan {
  NetworkScenario scenario;
  std::vector<std::size_t> order;
  double value = 5.5;
  int runs = 10;
  std::int64_t horizon = 1000000;
  std::uint64_t seed = 1;
};

OverheadPlan parse_overhead(const Field& cfg) {
  OverheadPlan plan;
  plan.scenario = parse_network(cfg);
  for (std::size_t i = 0; i < kNetworkDim; ++i) {
    if (plan.scenario.point[i] != std::floor(plan.scenario.point[i])) {
      cfg["network"]["point"].fail("the reference point must be integral");
    }
  }
  if (cfg.has("order")) {
    const Field order = cfg["order"];
    std::set<std::size_t> seen;
    for (std::size_t i = 0; i < order.size(); ++i) {
      const auto idx = net_index(order.item(i));
      if (!seen.insert(idx).second) order.item(i).fail("listed twice");
      plan.order.push_back(idx);
    }
  } else {
    json names = json::array();
    for (std::size_t i = 0; i < kNetworkDim; ++i) {
      plan.order.push_back(i);
      names.push_back(kNetParamNames[i]);
    }
    cfg.put("order", names);
  }
  plan.value = cfg.get<double>("randomized_value", 5.5);
  if (!DiscreteDomain(kNetLo, kNetHi).contains(plan.value)) cfg["randomized_value"].fail("must lie in [1, 10]");
  plan.runs = positive<int>(cfg, "runs", 10);
  plan.horizon = positive<std::int64_t>(cfg, "horizon", 1000000);
  plan.seed = cfg.get<std::uint64_t>("seed", 1);
  return plan;
}

struct CampaignPlan {
  NetworkScenario scenario;
  std::vector<Method> methods;
  CampaignSpec spec;
  std::int64_t horizon = 10000;
};

CampaignPlan parse_campaign(const Field& cfg) {
  CampaignPlan plan;
  plan.scenario = parse_network(cfg);
  if (cfg.has("methods")) {
    const Field m = cfg["methods"];
    if (m.size() == 0) m.fail("needs at least one method");
    for (std::size_t i = 0; i < m.size(); ++i) {
      try {
        plan.methods.push_back(parse_method(m.item(i).as<std::string>()));
      } catch (const ConfigError&) {
        throw;
      } catch (const std::exception& e) {
        m.item(i).fail(e.what());
      }
    }
  } else {
    plan.methods = {Method::TrustRegion, Method::Spsa, Method::DiscreteSpsa};
  }
  plan.spec.runs = positive<int>(cfg, "runs", 100);
  plan.spec.budget = positive<int>(cfg, "budget", 1000);
  plan.spec.seed = cfg.get<std::uint64_t>("seed", 1);
  plan.horizon = positive<std::int64_t>(cfg, "horizon", 10000);

  const Field tr = cfg.object_or_empty("trust_region");
  tr.allow({"rho_beg", "rho_end"});
  plan.spec.trust.rho_beg = tr.get<double>("rho_beg", 5.0);
  plan.spec.trust.rho_end = tr.get<double>("rho_end", 0.1);
  try {
    plan.spec.trust.validate();
  } catch (const std::exception& e) {
    tr.fail(e.what());
  }

  const Field sp = cfg.object_or_empty("spsa");
  sp.allow({"a", "c", "alpha", "gamma", "stability_fraction", "first_step", "calibration_estimates", "paired"});
  auto& s = plan.spec.spsa;
  s.a = sp.get<double>("a", 0.0);
  s.c = sp.get<double>("c", s.c);
  s.alpha = sp.get<double>("alpha", s.alpha);
  s.gamma = sp.get<double>("gamma", s.gamma);
  s.stability_fraction = sp.get<double>("stability_fraction", s.stability_fraction);
  s.first_step = sp.get<double>("first_step", s.first_step);
  s.calibration_estimates = sp.get<int>("calibration_estimates", s.calibration_estimates);
  s.paired = sp.get<bool>("paired", s.paired);
  try {
    s.validate();
  } catch (const std::exception& e) {
    sp.fail(e.what());
  }
  return plan;
}

// ---- output helpers ----

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  return out;
}

void finish_file(std::ofstream& out, const fs::path& path) {
  out.flush();
  if (!out) throw IoError(fmt::format("error while writing {}", path.string()));
}

void write_json(const fs::path& path, const json& j) {
  auto out = open_out(path);
  out << j.dump(2) << '\n';
  finish_file(out, path);
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::vector<fs::path> write_rows(const fs::path& dir, const std::string& stem, const std::vector<CoeffTemplate>& tmpls,
                                 const std::vector<std::vector<SweepRow>>& results) {
  std::vector<fs::path> files;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto name = tmpls.size() == 1 ? stem + ".csv" : fmt::format("{}_{}.csv", stem, template_tag(tmpls[i]));
    const auto path = dir / name;
    auto out = open_out(path);
    write_sweep_csv(out, results[i]);
    finish_file(out, path);
    files.push_back(path);
  }
  return files;
}

json derived_constants(const std::string& kind, const json& resolved) {
  json d = json::object();
  if (kind == "slice2d" || kind == "campaign" || kind == "overhead") {
    d["max_cost"] = kMaxNetworkCost;
    d["max_cost_point"] = {{"C1", 10}, {"C2", 10}, {"C3", 10}, {"T1", 1}, {"T3", 1}, {"K2", 10}, {"K3", 10}};
  }
  if (kind == "campaign") {
    const auto& sp = resolved["spsa"];
    const double budget = resolved["budget"].get<double>();
    d["spsa"] = {{"A", sp["stability_fraction"].get<double>() * budget},
                 {"alpha", sp["alpha"]},
                 {"gamma", sp["gamma"]},
                 {"c", sp["c"]},
                 {"a", sp["a"].get<double>() > 0 ? json(sp["a"]) : json("calibrated per run, see runs_*.jsonl")}};
  }
  if (kind == "sweep") d["replication_seeds"] = fmt::format("seed + i for i in [0, {})", resolved["replications"].get<int>());
  return d;
}

// ---- runners ----

std::vector<fs::path> run_sweep(const QueuePlan& plan, const fs::path& dir, int jobs) {
  std::vector<std::vector<SweepRow>> results;
  for (const auto& t : plan.templates) {
    SweepSpec spec;
    spec.base = plan.base;
    spec.axis = plan.axis;
    spec.domain = plan.domain;
    spec.coeff_template = t;
    spec.grid = plan.grid.values;
    spec.metric = plan.metric;
    spec.horizon = plan.horizon;
    spec.warmup = plan.warmup;
    spec.replications = plan.replications;
    spec.seed0 = plan.seed;
    results.push_back(sweep(spec, jobs));
  }
  return write_rows(dir, "sweep", plan.templates, results);
}

std::vector<fs::path> run_oracle(const QueuePlan& plan, const fs::path& dir) {
  QueueFamily family{plan.base.variant, plan.base.arrival_p, plan.base.service_q, {}};
  family.domains[plan.axis] = plan.domain;
  for (const auto& [name, v] : plan.base.fixed) family.domains[name] = DiscreteDomain(v, v);
  std::vector<std::vector<SweepRow>> results;
  for (const auto& t : plan.templates) {
    results.push_back(interpolation_curve(family, plan.axis, plan.grid.values, t, plan.metric, plan.oracle));
  }
  return write_rows(dir, "oracle", plan.templates, results);
}

std::vector<fs::path> run_slices(const SlicePlan& plan, const fs::path& dir, int jobs) {
  std::vector<fs::path> files;
  const auto& g = plan.grid.values;
  const auto reps = static_cast<std::size_t>(plan.replications);
  for (const auto& [a, b] : plan.slices) {
    std::vector<double> values(g.size() * g.size() * reps);
    parallel_for(values.size(), jobs, [&](std::size_t task) {
      const std::size_t cell = task / reps, rep = task % reps;
      auto x = plan.scenario.point;
      x[a] = g[cell / g.size()];
      x[b] = g[cell % g.size()];
      values[task] = objective_at(plan.scenario, x, plan.horizon, plan.seed + rep);
    });
    const auto path = dir / fmt::format("slice_{}_{}.csv", kNetParamNames[a], kNetParamNames[b]);
    auto out = open_out(path);
    out << "x,y,mean,std,replications,horizon,seed0\n";
    for (std::size_t cell = 0; cell < g.size() * g.size(); ++cell) {
      double mean = 0.0;
      for (std::size_t r = 0; r < reps; ++r) mean += values[cell * reps + r];
      mean /= static_cast<double>(reps);
      double ss = 0.0;
      for (std::size_t r = 0; r < reps; ++r) ss += std::pow(values[cell * reps + r] - mean, 2);
      const double sd = reps > 1 ? std::sqrt(ss / static_cast<double>(reps - 1)) : 0.0;
      out << fmt::format("{},{},{},{},{},{},{}\n", g[cell / g.size()], g[cell % g.size()], mean, sd, reps,
                         plan.horizon, plan.seed);
    }
    finish_file(out, path);
    files.push_back(path);
  }
  return files;
}

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

std::vector<fs::path> run_overhead(const OverheadPlan& plan, const fs::path& dir) {
  const std::size_t levels = plan.order.size() + 1;
  std::vector<NetworkParams> params(levels);
  for (std::size_t k = 0; k < levels; ++k) {
    for (std::size_t i = 0; i < kNetworkDim; ++i) params[k].sources[i].fixed = static_cast<int>(plan.scenario.point[i]);
    for (std::size_t j = 0; j < k; ++j) {
      const auto idx = plan.order[j];
      params[k].sources[idx].randomized.emplace(DiscreteDomain(kNetLo, kNetHi), plan.value, plan.scenario.templates[idx]);
    }
  }
  // Untimed warm-up, then runs interleaved across levels so slow drift of
  // the machine affects every level alike.
  simulate_network(params[0], std::min<std::int64_t>(plan.horizon, 100000), plan.seed, plan.scenario.config);
  std::vector<double> seconds(levels, 0.0), throughput(levels, 0.0);
  for (int r = 0; r < plan.runs; ++r) {
    const auto seed = derive_seed(plan.seed, static_cast<std::uint64_t>(r));
    for (std::size_t k = 0; k < levels; ++k) {
      const double t0 = cpu_seconds();
      const auto m = simulate_network(params[k], plan.horizon, seed, plan.scenario.config);
      seconds[k] += cpu_seconds() - t0;
      throughput[k] += m.throughput();
    }
  }
  json rows = json::array();
  for (std::size_t k = 0; k < levels; ++k) {
    json embedded = json::array();
    for (std::size_t j = 0; j < k; ++j) embedded.push_back(kNetParamNames[plan.order[j]]);
    const double avg = seconds[k] / plan.runs;
    rows.push_back({{"embedded", k},
                    {"parameters", embedded},
                    {"avg_cpu_seconds", avg},
                    {"overhead_pct", 100.0 * (avg / (seconds[0] / plan.runs) - 1.0)},
                    {"avg_throughput", throughput[k] / plan.runs}});
  }
  const auto path = dir / "overhead.json";
  write_json(path, {{"runs", plan.runs}, {"horizon", plan.horizon}, {"seed", plan.seed}, {"rows", rows}});
  return {path};
}

json record_json(const RunRecord& r, Method m) {
  json j = {{"run", r.run},          {"seed", r.seed},          {"initial", r.initial}, {"final", r.final_point},
            {"rounded", r.rounded},  {"objective", r.objective}, {"evals", r.evals}};
  if (m != Method::TrustRegion) j["spsa_a"] = r.gain_a;
  return j;
}

std::vector<fs::path> run_campaign(const CampaignPlan& plan, const fs::path& dir, int jobs) {
  const Box box = Box::uniform(kNetworkDim, kNetLo, kNetHi);
  const auto starts = initial_points(box, plan.spec.runs, plan.spec.seed);
  const SeededObjective f = [&](const Eigen::VectorXd& x, std::uint64_t seed) {
    return objective_at(plan.scenario, std::span<const double>(x.data(), kNetworkDim), plan.horizon, seed);
  };
  const Rounder round = [](const Eigen::VectorXd& x) {
    const auto r = round_to_lattice(std::span<const double>(x.data(), kNetworkDim));
    return std::vector<int>(r.begin(), r.end());
  };
  std::vector<fs::path> files;
  json summary = json::array(), timing = json::array();
  for (Method m : plan.methods) {
    const auto result = campaign(m, f, box, starts, plan.spec, round, jobs);
    const auto path = dir / fmt::format("runs_{}.jsonl", to_string(m));
    auto out = open_out(path);
    for (const auto& r : result.runs) out << record_json(r, m).dump() << '\n';
    finish_file(out, path);
    files.push_back(path);
    const auto& s = result.summary;
    summary.push_back({{"method", s.method},
                       {"runs", s.runs},
                       {"best", s.best},
                       {"best_point", s.best_point},
                       {"avg", s.avg},
                       {"std", s.std},
                       {"avg_evals", s.avg_evals}});
    json secs = json::array();
    for (const auto& r : result.runs) secs.push_back(r.seconds);
    timing.push_back({{"method", s.method}, {"avg_seconds", s.avg_seconds}, {"seconds", secs}});
  }
  json names = json::array();
  for (auto n : kNetParamNames) names.push_back(n);
  const auto sp = dir / "summary.json";
  write_json(sp, {{"parameters", names},
                  {"runs", plan.spec.runs},
                  {"budget", plan.spec.budget},
                  {"seed", plan.spec.seed},
                  {"methods", summary}});
  const auto tp = dir / "timing.json";
  write_json(tp, {{"methods", timing}});
  files.push_back(sp);
  files.push_back(tp);
  return files;
}

const std::set<std::string>& kinds() {
  static const std::set<std::string> k{"sweep", "oracle-curve", "slice2d", "overhead", "campaign"};
  return k;
}

struct Parsed {
  std::string kind;
  json resolved;
  std::optional<QueuePlan> queue;
  std::optional<SlicePlan> slice;
  std::optional<OverheadPlan> overhead;
  std::optional<CampaignPlan> campaign;
};

Parsed parse(const json& config, std::optional<std::uint64_t> seed) {
  Parsed p;
  json src = config;
  if (!src.is_object()) throw ConfigError("<root>: expected a JSON object");
  if (seed) src["seed"] = *seed;
  const Field root(src, p.resolved, "");
  p.kind = root.get<std::string>("kind");
  if (!kinds().count(p.kind)) root["kind"].fail("expected sweep, oracle-curve, slice2d, overhead or campaign");
  root.get<std::string>("description", "");
  if (p.kind == "sweep" || p.kind == "oracle-curve") {
    const bool sim = p.kind == "sweep";
    if (sim) {
      root.allow({"kind", "description", "model", "axis", "template", "templates", "grid", "metric", "horizon",
                  "warmup", "replications", "seed"});
    } else {
      root.allow({"kind", "description", "model", "axis", "template", "templates", "grid", "metric", "oracle", "seed"});
    }
    p.queue = parse_queue(root, sim);
  } else if (p.kind == "slice2d") {
    root.allow({"kind", "description", "network", "slices", "grid", "horizon", "replications", "seed"});
    p.slice = parse_slice(root);
  } else if (p.kind == "overhead") {
    root.allow({"kind", "description", "network", "order", "randomized_value", "runs", "horizon", "seed"});
    p.overhead = parse_overhead(root);
  } else {
    root.allow({"kind", "description", "network", "methods", "runs", "budget", "horizon", "seed", "trust_region",
                "spsa"});
    p.campaign = parse_campaign(root);
  }
  return p;
}

}  // namespace

json resolve_config(const json& config, std::optional<std::uint64_t> seed) { return parse(config, seed).resolved; }

json load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot read config {}", path.string()));
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

RunReport run_config(const json& config, const RunOptions& options) {
  Parsed p = parse(config, options.seed);
  std::error_code ec;
  fs::create_directories(options.out, ec);
  if (ec) throw IoError(fmt::format("cannot create output directory {}: {}", options.out.string(), ec.message()));

  RunReport report;
  report.kind = p.kind;
  report.resolved = p.resolved;
  const int jobs = std::max(1, options.jobs);
  if (p.kind == "sweep") {
    report.artifacts = run_sweep(*p.queue, options.out, jobs);
  } else if (p.kind == "oracle-curve") {
    report.artifacts = run_oracle(*p.queue, options.out);
  } else if (p.kind == "slice2d") {
    report.artifacts = run_slices(*p.slice, options.out, jobs);
  } else if (p.kind == "overhead") {
    report.artifacts = run_overhead(*p.overhead, options.out);
  } else {
    report.artifacts = run_campaign(*p.campaign, options.out, jobs);
  }

  json artifacts = json::array();
  for (const auto& a : report.artifacts) artifacts.push_back(a.filename().string());
  write_json(options.out / "manifest.json", {{"tool", "qembed"},
                                             {"kind", p.kind},
                                             {"config", p.resolved},
                                             {"seed", p.resolved["seed"]},
                                             {"derived", derived_constants(p.kind, p.resolved)},
                                             {"artifacts", artifacts},
                                             {"jobs", jobs},
                                             {"created", utc_timestamp()}});
  return report;
}

RunReport run_config_file(const fs::path& path, const RunOptions& options) {
  return run_config(load_config(path), options);
}

std::vector<SweepRow> read_sweep_csv_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot read {}", path.string()));
  try {
    return read_sweep_csv(in);
  } catch (const std::runtime_error& e) {
    throw ParseError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

OracleComparison compare_oracle(const std::vector<SweepRow>& simulated, const std::vector<SweepRow>& exact) {
  if (simulated.size() != exact.size()) {
    throw StructuralError(fmt::format("grids differ: {} simulated points, {} exact", simulated.size(), exact.size()));
  }
  OracleComparison cmp;
  for (std::size_t i = 0; i < simulated.size(); ++i) {
    const auto& s = simulated[i];
    const auto& e = exact[i];
    if (std::abs(s.y - e.y) > 1e-9) throw StructuralError(fmt::format("grids differ at row {}: {} vs {}", i + 1, s.y, e.y));
    ComparisonRow row{s.y, s.mean, s.std, s.replications, e.mean, 0.0};
    const double diff = s.mean - e.mean;
    const double se = s.replications > 0 ? s.std / std::sqrt(static_cast<double>(s.replications)) : 0.0;
    if (diff != 0.0) row.z = se > 0.0 ? diff / se : std::copysign(std::numeric_limits<double>::infinity(), diff);
    if (std::abs(row.z) > 3.0) ++cmp.outside;
    cmp.rows.push_back(row);
  }
  cmp.allowance = static_cast<int>(cmp.rows.size() * 2 / 30);
  cmp.pass = cmp.outside <= cmp.allowance;
  return cmp;
}

OracleComparison compare_oracle_files(const fs::path& simulated, const fs::path& exact) {
  return compare_oracle(read_sweep_csv_file(simulated), read_sweep_csv_file(exact));
}

void write_comparison(std::ostream& out, const OracleComparison& cmp) {
  out << "y,mean,std,replications,exact,z\n";
  for (const auto& r : cmp.rows) {
    out << fmt::format("{},{},{},{},{},{}\n", r.y, r.mean, r.std, r.replications, r.exact, r.z);
  }
  out << fmt::format("# {} of {} points beyond 3 standard errors; {} allowed for multiplicity (2 per 30 points)\n",
                     cmp.outside, cmp.rows.size(), cmp.allowance);
  out << (cmp.pass ? "# PASS\n" : "# FAIL\n");
}

fs::path default_protocol_dir() {
  if (const char* env = std::getenv("QEMBED_PROTOCOL_DIR")) return env;
  return QEMBED_PROTOCOL_DIR;
}

std::vector<ProtocolInfo> list_protocols(const fs::path& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw IoError(fmt::format("protocol directory {} not found", dir.string()));
  std::vector<ProtocolInfo> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() != ".json") continue;
    const json j = load_config(entry.path());
    ProtocolInfo info;
    info.name = entry.path().stem().string();
    info.kind = j.value("kind", "");
    info.description = j.value("description", "");
    info.path = entry.path();
    out.push_back(std::move(info));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
  return out;
}

}  // namespace qembed
