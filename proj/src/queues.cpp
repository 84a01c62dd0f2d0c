#include "qembed/queues.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

#include "qembed/parallel.hpp"

namespace qembed {

namespace {

constexpr std::array<std::pair<Variant, std::string_view>, 5> kVariantNames{{
    {Variant::GeoGeo1C, "GeoGeo1C"},
    {Variant::GeoD1C, "GeoD1C"},
    {Variant::GeoGeoK, "GeoGeoK"},
    {Variant::GeoDK, "GeoDK"},
    {Variant::GeoD1T, "GeoD1T"},
}};

constexpr std::array<std::pair<Metric, std::string_view>, 3> kMetricNames{{
    {Metric::Blocking, "blocking"},
    {Metric::AvgJobs, "avg_jobs"},
    {Metric::Throughput, "throughput"},
}};

// A model parameter resolved for the hot loop: a fixed value or a pointer
// into the model's randomized map.
struct ParamSlot {
  int fixed = 1;
  const RandomizedParam* random = nullptr;

  int sample(RandomStream& rng) const { return random ? random->sample(rng) : fixed; }
  int max_value() const { return random ? random->domain().hi : fixed; }
};

struct CompiledModel {
  bool capacity_limited = false;
  bool geometric = false;
  double p = 0.0;
  double q = 0.0;
  ParamSlot capacity;
  ParamSlot servers;
  ParamSlot service_time;
  int pool = 1;
};

ParamSlot resolve(const SlotModel& model, const std::string& name) {
  if (auto it = model.randomized.find(name); it != model.randomized.end()) return {0, &it->second};
  return {model.fixed.at(name), nullptr};
}

CompiledModel compile(const SlotModel& model) {
  model.validate();
  CompiledModel c;
  c.capacity_limited = has_capacity(model.variant);
  c.geometric = geometric_service(model.variant);
  c.p = model.arrival_p;
  c.q = model.service_q;
  if (c.capacity_limited) c.capacity = resolve(model, "C");
  if (multi_server(model.variant)) c.servers = resolve(model, "K");
  if (!c.geometric) c.service_time = resolve(model, "T");
  c.pool = c.servers.max_value();
  return c;
}

// Advances `state` by one slot in place. `busy` mirrors the number of
// non-idle entries of state.servers.
SlotEvents advance(const CompiledModel& m, SlotState& state, int& busy, RandomStream& rng) {
  SlotEvents ev;
  auto& inst = state.inst;
  if (m.capacity_limited) inst.capacity = m.capacity.sample(rng);
  inst.servers = m.servers.sample(rng);
  if (!m.geometric) inst.service_time = m.service_time.sample(rng);

  ev.arrival = rng.uniform() < m.p;
  if (ev.arrival) {
    if (m.capacity_limited && state.queue_len >= inst.capacity) {
      ev.blocked = true;
    } else {
      ++state.queue_len;
    }
  }

  // Controller: head-of-line jobs to the lowest-indexed free servers while
  // fewer than K_t jobs are in service. Running jobs are never preempted.
  int waiting = state.queue_len - busy;
  auto& servers = state.servers;
  const int pool = static_cast<int>(servers.size());
  for (int s = 0; s < pool && waiting > 0 && busy < inst.servers; ++s) {
    if (servers[s] == kIdleServer) {
      servers[s] = 0;
      ++busy;
      --waiting;
    }
  }

  for (int s = 0; s < pool; ++s) {
    if (servers[s] == kIdleServer) continue;
    bool done;
    if (m.geometric) {
      done = rng.uniform() < m.q;
    } else {
      done = ++servers[s] >= inst.service_time;
    }
    if (done) {
      servers[s] = kIdleServer;
      --busy;
      ++ev.departures;
    }
  }
  state.queue_len -= ev.departures;
  ++state.t;
  return ev;
}

void require_probability(double x, std::string_view field) {
  if (!(x >= 0.0 && x <= 1.0)) throw std::invalid_argument(fmt::format("{} = {} is not a probability", field, x));
}

}  // namespace

std::string_view to_string(Variant v) {
  for (const auto& [value, name] : kVariantNames) {
    if (value == v) return name;
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  for (const auto& [value, n] : kVariantNames) {
    if (n == name) return value;
  }
  throw std::invalid_argument(fmt::format("unknown queue variant '{}'", name));
}

std::string_view to_string(Metric m) {
  for (const auto& [value, name] : kMetricNames) {
    if (value == m) return name;
  }
  return "?";
}

Metric parse_metric(std::string_view name) {
  for (const auto& [value, n] : kMetricNames) {
    if (n == name) return value;
  }
  throw std::invalid_argument(fmt::format("unknown metric '{}'", name));
}

std::vector<std::string> parameter_names(Variant v) {
  switch (v) {
    case Variant::GeoGeo1C: return {"C"};
    case Variant::GeoD1C: return {"C", "T"};
    case Variant::GeoGeoK: return {"K"};
    case Variant::GeoDK: return {"K", "T"};
    case Variant::GeoD1T: return {"T"};
  }
  return {};
}

bool has_capacity(Variant v) { return v == Variant::GeoGeo1C || v == Variant::GeoD1C; }
bool geometric_service(Variant v) { return v == Variant::GeoGeo1C || v == Variant::GeoGeoK; }
bool multi_server(Variant v) { return v == Variant::GeoGeoK || v == Variant::GeoDK; }

void SlotModel::validate() const {
  require_probability(arrival_p, "p");
  if (geometric_service(variant)) require_probability(service_q, "q");
  const auto names = parameter_names(variant);
  for (const auto& name : names) {
    const bool is_fixed = fixed.contains(name);
    const bool is_random = randomized.contains(name);
    if (is_fixed == is_random) {
      throw std::invalid_argument(fmt::format("{}: parameter {} must be either fixed or randomized (exactly one)",
                                              to_string(variant), name));
    }
    if (is_fixed && fixed.at(name) < 1) {
      throw std::invalid_argument(fmt::format("{} = {} must be >= 1", name, fixed.at(name)));
    }
    if (is_random && randomized.at(name).domain().lo < 1) {
      throw std::invalid_argument(fmt::format("{} domain must start at >= 1", name));
    }
  }
  auto known = [&](const std::string& n) { return std::find(names.begin(), names.end(), n) != names.end(); };
  for (const auto& [name, _] : fixed) {
    if (!known(name)) throw std::invalid_argument(fmt::format("{} has no parameter {}", to_string(variant), name));
  }
  for (const auto& [name, _] : randomized) {
    if (!known(name)) throw std::invalid_argument(fmt::format("{} has no parameter {}", to_string(variant), name));
  }
}

int SlotState::in_service() const {
  return static_cast<int>(std::count_if(servers.begin(), servers.end(), [](int s) { return s != kIdleServer; }));
}

double RunMetrics::value(Metric m) const {
  switch (m) {
    case Metric::Blocking: return blocking_prob();
    case Metric::AvgJobs: return avg_jobs();
    case Metric::Throughput: return throughput();
  }
  return 0.0;
}

SlotState initial_state(const SlotModel& model) {
  const auto compiled = compile(model);
  SlotState s;
  s.servers.assign(static_cast<std::size_t>(compiled.pool), kIdleServer);
  return s;
}

SlotState step(const SlotModel& model, const SlotState& state, RandomStream& rng, SlotEvents* events) {
  const auto compiled = compile(model);
  SlotState next = state;
  if (next.servers.size() != static_cast<std::size_t>(compiled.pool)) {
    throw std::invalid_argument("slot state does not match the model's server pool");
  }
  int busy = next.in_service();
  const auto ev = advance(compiled, next, busy, rng);
  if (events) *events = ev;
  return next;
}

RunMetrics simulate(const SlotModel& model, std::int64_t horizon, std::int64_t warmup, std::uint64_t seed) {
  if (horizon < 1) throw std::invalid_argument("horizon must be >= 1");
  if (warmup < 0) throw std::invalid_argument("warmup must be >= 0");
  const auto compiled = compile(model);
  RandomStream rng(seed);
  SlotState state;
  state.servers.assign(static_cast<std::size_t>(compiled.pool), kIdleServer);
  int busy = 0;

  for (std::int64_t t = 0; t < warmup; ++t) advance(compiled, state, busy, rng);

  RunMetrics m;
  m.initial_jobs = state.queue_len;
  for (std::int64_t t = 0; t < horizon; ++t) {
    const auto ev = advance(compiled, state, busy, rng);
    m.offered += ev.arrival;
    m.blocked += ev.blocked;
    m.entered += ev.arrival && !ev.blocked;
    m.departures += ev.departures;
    m.area += state.queue_len;
  }
  m.slots = horizon;
  m.final_jobs = state.queue_len;
  m.final_in_service = busy;
  return m;
}

SlotModel embed_axis(const SweepSpec& spec, double y) {
  SlotModel model = spec.base;
  model.fixed.erase(spec.axis);
  model.randomized.erase(spec.axis);
  model.randomized.emplace(spec.axis, RandomizedParam(spec.domain, y, spec.coeff_template));
  return model;
}

std::vector<SweepRow> sweep(const SweepSpec& spec, int jobs) {
  if (spec.replications < 1) throw std::invalid_argument("replications must be >= 1");
  std::vector<SlotModel> models;
  models.reserve(spec.grid.size());
  for (double y : spec.grid) {
    if (!spec.domain.contains(y)) {
      throw DomainError(fmt::format("grid point {} outside [{}, {}]", y, spec.domain.lo, spec.domain.hi));
    }
    models.push_back(embed_axis(spec, y));
    models.back().validate();
  }

  const auto reps = static_cast<std::size_t>(spec.replications);
  std::vector<double> values(models.size() * reps);
  parallel_for(values.size(), jobs, [&](std::size_t task) {
    const std::size_t point = task / reps;
    const std::size_t rep = task % reps;
    const auto metrics = simulate(models[point], spec.horizon, spec.warmup, spec.seed0 + rep);
    values[task] = metrics.value(spec.metric);
  });

  std::vector<SweepRow> rows;
  rows.reserve(models.size());
  for (std::size_t point = 0; point < models.size(); ++point) {
    const double* v = values.data() + point * reps;
    double mean = 0.0;
    for (std::size_t i = 0; i < reps; ++i) mean += v[i];
    mean /= static_cast<double>(reps);
    double ss = 0.0;
    for (std::size_t i = 0; i < reps; ++i) ss += (v[i] - mean) * (v[i] - mean);
    const double sd = reps > 1 ? std::sqrt(ss / static_cast<double>(reps - 1)) : 0.0;
    rows.push_back({spec.grid[point], mean, sd, spec.replications, spec.horizon, spec.seed0});
  }
  return rows;
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
  out << "y,mean,std,replications,horizon,seed0\n";
  for (const auto& r : rows) {
    out << fmt::format("{},{},{},{},{},{}\n", r.y, r.mean, r.std, r.replications, r.horizon, r.seed0);
  }
}

std::vector<SweepRow> read_sweep_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty sweep CSV");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "y,mean,std,replications,horizon,seed0") {
    throw std::runtime_error(fmt::format("unexpected sweep CSV header '{}'", line));
  }
  std::vector<SweepRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream fields(line);
    SweepRow r;
    if (!(fields >> r.y >> r.mean >> r.std >> r.replications >> r.horizon >> r.seed0)) {
      throw std::runtime_error(fmt::format("malformed sweep CSV row at line {}", lineno));
    }
    rows.push_back(r);
  }
  return rows;
}

std::vector<double> make_grid(double start, double stop, double step) {
  if (!(step > 0.0) || !(stop >= start)) {
    throw std::invalid_argument(fmt::format("bad grid start={} stop={} step={}", start, stop, step));
  }
  const double span = (stop - start) / step;
  const auto count = static_cast<std::int64_t>(std::floor(span + 1e-9));
  std::vector<double> grid;
  grid.reserve(static_cast<std::size_t>(count + 2));
  for (std::int64_t i = 0; i <= count; ++i) {
    grid.push_back(std::round((start + static_cast<double>(i) * step) * 1e12) / 1e12);
  }
  if (stop - grid.back() > 1e-9) grid.push_back(stop);
  return grid;
}

}  // namespace qembed
