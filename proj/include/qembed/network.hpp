#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "qembed/coeffs.hpp"
#include "qembed/random.hpp"

namespace qembed {

// Three-node network:
//   external Geo(p) arrivals -> n1 (one deterministic server, T1)
//   n1 routes each finished job 50/50 to n2 or n3
//   n2: K2 Geo(q2) servers; n3: K3 deterministic servers (T3) whose jobs are
//   faulty with probability 1/T3 and then go back to n1.
// C1..C3 bound the number of jobs waiting at each node (jobs held by a
// server do not count).

inline constexpr std::size_t kNetworkDim = 7;
enum NetParam : std::size_t { C1 = 0, C2, C3, T1, T3, K2, K3 };
inline constexpr std::array<std::string_view, kNetworkDim> kNetParamNames{"C1", "C2", "C3", "T1", "T3", "K2", "K3"};
inline constexpr int kNetLo = 1;
inline constexpr int kNetHi = 10;

std::optional<std::size_t> net_param_index(std::string_view name);

/// Per-parameter (r, s) used when the whole network is embedded.
CoeffTemplate default_net_template(std::size_t param);

/// A parameter is either a fixed integer or embedded at a real target.
struct ParamSource {
  int fixed = 5;
  std::optional<RandomizedParam> randomized;

  int sample(RandomStream& rng) const { return randomized ? randomized->sample(rng) : fixed; }
  double value() const { return randomized ? randomized->target() : fixed; }
};

struct NetworkParams {
  std::array<ParamSource, kNetworkDim> sources;

  /// All seven fixed at integer values.
  static NetworkParams fixed_at(std::span<const int> values);
  /// All seven embedded at `x` with the default templates. Integer targets
  /// still go through the embedding (degenerate coefficients).
  static NetworkParams embedded(std::span<const double> x);
  static NetworkParams embedded(std::span<const double> x, std::span<const CoeffTemplate> templates);

  void validate() const;
  std::array<double, kNetworkDim> values() const;
};

struct NetworkConfig {
  double arrival_p = 0.5;
  double q2 = 0.1;
};

struct NetworkMetrics {
  std::int64_t slots = 0;
  std::int64_t arrivals = 0;
  std::int64_t admitted = 0;
  std::int64_t lost = 0;
  /// Non-faulty completions at n2 and n3.
  std::int64_t output = 0;
  std::int64_t faulty = 0;
  std::int64_t recirculated = 0;
  std::int64_t n1_stall_slots = 0;
  std::int64_t n3_stall_slots = 0;
  /// Sum over slots of jobs present at each node (waiting plus held).
  std::array<std::int64_t, 3> occupancy{};
  std::int64_t final_jobs = 0;

  double throughput() const { return slots == 0 ? 0.0 : static_cast<double>(output) / static_cast<double>(slots); }

  friend bool operator==(const NetworkMetrics&, const NetworkMetrics&) = default;
};

/// Slot-by-slot simulator. Within a slot: parameters are resampled in the
/// order C1..K3, then n3, n2, n1 are processed, then the external arrival.
class NetworkSim {
 public:
  static constexpr int kPool = kNetHi;

  NetworkSim(const NetworkParams& params, const NetworkConfig& config, std::uint64_t seed);

  void step();
  void run(std::int64_t slots);

  const NetworkMetrics& metrics() const { return metrics_; }
  /// Jobs currently inside the network, including held and stalled ones.
  int jobs_in_system() const;
  int node_jobs(int node) const;
  std::array<int, 3> waiting() const { return {q1_, q2_, q3_}; }
  int stalled_n3() const;
  bool stalled_n1() const { return n1_dest_ != 0; }
  const std::array<int, kNetworkDim>& current() const { return inst_; }

 private:
  void process_n3();
  void process_n2();
  void process_n1();

  NetworkParams params_;
  NetworkConfig config_;
  RandomStream rng_;
  std::array<int, kNetworkDim> inst_{};
  int q1_ = 0, q2_ = 0, q3_ = 0;
  // n1: elapsed service (-1 idle); destination node when stalled, else 0.
  int n1_elapsed_ = -1;
  int n1_dest_ = 0;
  std::array<bool, kPool> n2_busy_{};
  std::array<int, kPool> n3_elapsed_{};
  std::array<bool, kPool> n3_stalled_{};
  int n2_count_ = 0, n3_count_ = 0;
  NetworkMetrics metrics_;
};

NetworkMetrics simulate_network(const NetworkParams& params, std::int64_t horizon, std::uint64_t seed,
                                const NetworkConfig& config = {});

/// (C1+C2+C3) + 20/T1 + 100 K2 + 20 K3/T3, for real arguments.
double network_cost(std::span<const double> x);

/// Largest cost over the integer grid [1,10]^7, attained at
/// C = 10, T1 = 1, K2 = 10, K3 = 10, T3 = 1.
inline constexpr double kMaxNetworkCost = 1250.0;

/// cost / max cost - throughput / p, using one simulation of the embedded
/// network at x.
double network_objective(std::span<const double> x, std::int64_t horizon, std::uint64_t seed,
                         const NetworkConfig& config = {});

/// Nearest lattice point of [1,10]^7. Exact half-integers go to the
/// neighbour with the lower cost.
std::array<int, kNetworkDim> round_to_lattice(std::span<const double> x);

}  // namespace qembed
