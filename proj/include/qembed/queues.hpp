#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "qembed/coeffs.hpp"
#include "qembed/random.hpp"

namespace qembed {

/// The five single-stage discrete-time queues.
///   GeoGeo1C  Geo arrivals, one Geo(q) server, capacity C
///   GeoD1C    Geo arrivals, one deterministic server (T), capacity C
///   GeoGeoK   Geo arrivals, K Geo(q) servers, unbounded buffer
///   GeoDK     Geo arrivals, K deterministic servers (T), unbounded buffer
///   GeoD1T    Geo arrivals, one deterministic server with service time T
enum class Variant { GeoGeo1C, GeoD1C, GeoGeoK, GeoDK, GeoD1T };

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view name);

/// Names of the integer parameters a variant exposes ("C", "K", "T").
std::vector<std::string> parameter_names(Variant v);

bool has_capacity(Variant v);
bool geometric_service(Variant v);
bool multi_server(Variant v);

/// Long-run measures reported by sweeps and oracle curves.
enum class Metric { Blocking, AvgJobs, Throughput };

std::string_view to_string(Metric m);
Metric parse_metric(std::string_view name);

struct SlotModel {
  Variant variant = Variant::GeoGeo1C;
  double arrival_p = 0.0;
  /// Per-slot completion probability; Geo service only.
  double service_q = 0.0;
  std::map<std::string, RandomizedParam> randomized;
  std::map<std::string, int> fixed;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

/// Parameter values in force during one slot.
struct InstParams {
  int capacity = 0;
  int servers = 1;
  int service_time = 1;
};

inline constexpr int kIdleServer = -1;

struct SlotState {
  std::int64_t t = 0;
  /// Jobs in the system (waiting plus in service) at the end of slot t.
  int queue_len = 0;
  /// Elapsed service slots per server, kIdleServer when free.
  std::vector<int> servers;
  InstParams inst;

  int in_service() const;
};

/// What happened during one slot.
struct SlotEvents {
  bool arrival = false;
  bool blocked = false;
  int departures = 0;
};

struct RunMetrics {
  std::int64_t slots = 0;
  std::int64_t offered = 0;
  std::int64_t blocked = 0;
  std::int64_t entered = 0;
  std::int64_t departures = 0;
  std::int64_t area = 0;
  /// Jobs present when measurement started and at the end of the run.
  std::int64_t initial_jobs = 0;
  std::int64_t final_jobs = 0;
  std::int64_t final_in_service = 0;

  double blocking_prob() const {
    return offered == 0 ? 0.0 : static_cast<double>(blocked) / static_cast<double>(offered);
  }
  double avg_jobs() const { return slots == 0 ? 0.0 : static_cast<double>(area) / static_cast<double>(slots); }
  double throughput() const {
    return slots == 0 ? 0.0 : static_cast<double>(departures) / static_cast<double>(slots);
  }
  double value(Metric m) const;

  friend bool operator==(const RunMetrics&, const RunMetrics&) = default;
};

/// Empty system sized for the model's server pool.
SlotState initial_state(const SlotModel& model);

/// One slot: resample randomized parameters, Bernoulli arrival and
/// admission, assignment of waiting jobs to free servers, service,
/// departures at the end of the slot.
SlotState step(const SlotModel& model, const SlotState& state, RandomStream& rng,
               SlotEvents* events = nullptr);

/// Runs warmup + horizon slots from an empty system; only the last horizon
/// slots are measured.
RunMetrics simulate(const SlotModel& model, std::int64_t horizon, std::int64_t warmup, std::uint64_t seed);

/// One point of a swept parameter axis: the embedding of `axis` is placed
/// at each grid value and the model is replicated with seeds seed0 + i.
struct SweepSpec {
  SlotModel base;
  std::string axis;
  DiscreteDomain domain;
  CoeffTemplate coeff_template;
  std::vector<double> grid;
  Metric metric = Metric::Blocking;
  std::int64_t horizon = 10000;
  std::int64_t warmup = 0;
  int replications = 100;
  std::uint64_t seed0 = 1;
};

struct SweepRow {
  double y = 0.0;
  double mean = 0.0;
  double std = 0.0;
  int replications = 0;
  std::int64_t horizon = 0;
  std::uint64_t seed0 = 0;
};

/// Mean and sample standard deviation of the metric at each grid point.
/// Independent runs are spread over `jobs` threads; results do not depend
/// on the thread count.
std::vector<SweepRow> sweep(const SweepSpec& spec, int jobs = 1);

/// Model with the swept axis embedded at y.
SlotModel embed_axis(const SweepSpec& spec, double y);

/// CSV with header `y,mean,std,replications,horizon,seed0`.
void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows);
std::vector<SweepRow> read_sweep_csv(std::istream& in);

/// Inclusive arithmetic grid start, start+step, ..., stop (snapped to stop).
std::vector<double> make_grid(double start, double stop, double step);

}  // namespace qembed
