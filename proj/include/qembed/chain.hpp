#pragma once

#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include "qembed/coeffs.hpp"
#include "qembed/queues.hpp"

namespace qembed {

/// Inconsistent chain inputs: mismatched state spaces, bad weights.
class StructuralError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A chain with zero or several closed communicating classes.
class NoUniqueDistribution : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Truncation or domain settings that cannot hold the requested model.
class ConfigurationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A queue variant with fixed rates and, for every integer parameter, the
/// set of lattice values the chains have to represent. A parameter that is
/// never randomized has a one-point domain.
struct QueueFamily {
  Variant variant = Variant::GeoGeo1C;
  double arrival_p = 0.0;
  double service_q = 0.0;
  std::map<std::string, DiscreteDomain> domains;

  void validate() const;
};

using LatticePoint = std::map<std::string, int>;

/// One chain state. For capacity variants the state observed at the start
/// of slot t is (jobs at the end of slot t-1, capacity in force in slot t),
/// which makes the blocking indicator a fixed function of the state.
/// `service` holds the in-service configuration: the busy-server count for
/// Geo servers when K varies, or per-elapsed-slot job counts for
/// deterministic servers.
struct StateLabel {
  int queue_len = 0;
  int capacity = -1;
  std::vector<int> service;

  friend bool operator==(const StateLabel&, const StateLabel&) = default;
};

/// Enumeration of the state space shared by all lattice chains of a family.
class StateSpace {
 public:
  StateSpace(const QueueFamily& family, int truncation);

  std::size_t size() const { return labels_.size(); }
  const StateLabel& label(std::size_t i) const { return labels_[i]; }
  std::size_t index_of(const StateLabel& label) const;

  int truncation() const { return truncation_; }
  bool tracks_capacity() const { return track_capacity_; }
  bool tracks_busy_servers() const { return track_busy_; }
  /// Longest possible elapsed service (deterministic servers), else 0.
  int max_service_time() const { return max_service_time_; }
  int max_servers() const { return max_servers_; }

  /// Two spaces are interchangeable when they enumerate identical states.
  bool same_layout(const StateSpace& other) const;

 private:
  void enumerate();

  Variant variant_;
  int truncation_;
  bool track_capacity_ = false;
  bool track_busy_ = false;
  DiscreteDomain capacities_;
  int max_servers_ = 1;
  int max_service_time_ = 0;
  std::vector<StateLabel> labels_;
  std::map<std::vector<int>, std::size_t> index_;
};

using TransitionMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

struct ChainSpec {
  std::shared_ptr<const StateSpace> space;
  TransitionMatrix matrix;

  int truncation() const { return space->truncation(); }
  std::size_t size() const { return space->size(); }
};

/// Builds the lattice chains of one family over one shared state space.
class ChainBuilder {
 public:
  ChainBuilder(QueueFamily family, int truncation);

  const QueueFamily& family() const { return family_; }
  const std::shared_ptr<const StateSpace>& space() const { return space_; }

  /// Transition matrix with every parameter held at `point`.
  ChainSpec build(const LatticePoint& point) const;

 private:
  QueueFamily family_;
  std::shared_ptr<const StateSpace> space_;
};

ChainSpec build_chain(const QueueFamily& family, const LatticePoint& point, int truncation);

/// Convex combination sum_j weights[j] * chains[j].
ChainSpec mix_chains(std::span<const ChainSpec> chains, std::span<const double> weights);

/// Closed communicating classes (strongly connected components without
/// outgoing transitions), each sorted ascending.
std::vector<std::vector<std::size_t>> closed_classes(const ChainSpec& chain);

struct StationaryDist {
  Eigen::VectorXd pi;
  /// max_s |(pi P)_s - pi_s|
  double residual = 0.0;
};

/// Direct solve of pi P = pi, sum(pi) = 1. Handles periodic and transient
/// states; throws NoUniqueDistribution unless exactly one class is closed.
StationaryDist stationary(const ChainSpec& chain);

/// Per-state cost c(s).
struct CostFn {
  std::vector<double> values;
};

/// 1{jobs >= active capacity}; for unbounded variants 1{jobs >= truncation}.
CostFn blocking_cost(const StateSpace& space);
CostFn jobs_cost(const StateSpace& space);
/// Expected admissions per slot, p * 1{arrival would be admitted}.
CostFn throughput_cost(const StateSpace& space, double arrival_p);
CostFn metric_cost(const StateSpace& space, Metric metric, double arrival_p);

double exact_value(const StationaryDist& dist, const CostFn& cost);
double exact_value(const ChainSpec& chain, const CostFn& cost);

/// Truncation policy for unbounded variants: start at `initial_truncation`
/// and double until the stationary mass at queue lengths >= B - tail_band
/// is at most tail_tolerance.
struct OracleOptions {
  int initial_truncation = 200;
  int max_truncation = 12800;
  int tail_band = 10;
  double tail_tolerance = 1e-9;
};

/// Exact long-run metric of the randomized model: the parameters listed in
/// `params` are embedded at their targets; every other family parameter
/// must have a one-point domain.
struct OracleResult {
  double value = 0.0;
  int truncation = 0;
  double tail_mass = 0.0;
  double residual = 0.0;
};

class ExactOracle {
 public:
  ExactOracle(QueueFamily family, OracleOptions options = {});

  OracleResult evaluate(std::span<const std::pair<std::string, RandomizedParam>> params, Metric metric);

  /// Single-axis convenience.
  OracleResult evaluate(const std::string& axis, const RandomizedParam& param, Metric metric);

  const QueueFamily& family() const { return family_; }

 private:
  const ChainSpec& lattice_chain(int truncation, const LatticePoint& point);

  QueueFamily family_;
  OracleOptions options_;
  int truncation_ = 0;
  std::map<int, ChainBuilder> builders_;
  std::map<std::pair<int, LatticePoint>, ChainSpec> cache_;
};

/// Exact f-hat along one axis: alphas -> beta weights -> mixture ->
/// stationary solve -> pi . c at each grid point. Rows use the sweep CSV
/// schema with std = 0 and zero run counts.
std::vector<SweepRow> interpolation_curve(const QueueFamily& family, const std::string& axis,
                                          std::span<const double> grid, const CoeffTemplate& tmpl, Metric metric,
                                          const OracleOptions& options = {});

}  // namespace qembed
