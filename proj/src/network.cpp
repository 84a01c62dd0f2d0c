#include "qembed/network.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

namespace qembed {

std::optional<std::size_t> net_param_index(std::string_view name) {
  for (std::size_t i = 0; i < kNetworkDim; ++i) {
    if (kNetParamNames[i] == name) return i;
  }
  return std::nullopt;
}

CoeffTemplate default_net_template(std::size_t param) {
  switch (param) {
    case C1: return {1, 1.0, -2.0};
    case C2: return {1, 1.0, 1.0};
    case C3: return {1, 1.0, -2.0};
    case T1: return {1, 1.0, 1.0};
    case T3: return {1, 1.0, 1.0};
    case K2: return {1, 1.0, 4.0};
    case K3: return {1, 1.0, 1.0};
    default: throw std::out_of_range("network parameter index");
  }
}

NetworkParams NetworkParams::fixed_at(std::span<const int> values) {
  if (values.size() != kNetworkDim) throw std::invalid_argument("network point needs 7 values");
  NetworkParams p;
  for (std::size_t i = 0; i < kNetworkDim; ++i) p.sources[i].fixed = values[i];
  p.validate();
  return p;
}

NetworkParams NetworkParams::embedded(std::span<const double> x) {
  std::array<CoeffTemplate, kNetworkDim> t;
  for (std::size_t i = 0; i < kNetworkDim; ++i) t[i] = default_net_template(i);
  return embedded(x, t);
}

NetworkParams NetworkParams::embedded(std::span<const double> x, std::span<const CoeffTemplate> templates) {
  if (x.size() != kNetworkDim || templates.size() != kNetworkDim) {
    throw std::invalid_argument("network point needs 7 values");
  }
  NetworkParams p;
  const DiscreteDomain domain(kNetLo, kNetHi);
  for (std::size_t i = 0; i < kNetworkDim; ++i) {
    if (!domain.contains(x[i])) {
      throw DomainError(fmt::format("{} = {} outside [{}, {}]", kNetParamNames[i], x[i], kNetLo, kNetHi));
    }
    p.sources[i].randomized.emplace(domain, x[i], templates[i]);
  }
  return p;
}

void NetworkParams::validate() const {
  for (std::size_t i = 0; i < kNetworkDim; ++i) {
    const auto& s = sources[i];
    if (s.randomized) {
      if (!(s.randomized->domain() == DiscreteDomain(kNetLo, kNetHi))) {
        throw DomainError(fmt::format("{}: embedding domain must be [{}, {}]", kNetParamNames[i], kNetLo, kNetHi));
      }
    } else if (s.fixed < kNetLo || s.fixed > kNetHi) {
      throw DomainError(fmt::format("{} = {} outside [{}, {}]", kNetParamNames[i], s.fixed, kNetLo, kNetHi));
    }
  }
}

std::array<double, kNetworkDim> NetworkParams::values() const {
  std::array<double, kNetworkDim> v;
  for (std::size_t i = 0; i < kNetworkDim; ++i) v[i] = sources[i].value();
  return v;
}

NetworkSim::NetworkSim(const NetworkParams& params, const NetworkConfig& config, std::uint64_t seed)
    : params_(params), config_(config), rng_(seed) {
  params_.validate();
  if (!(config.arrival_p >= 0.0 && config.arrival_p <= 1.0)) throw std::invalid_argument("p must be a probability");
  if (!(config.q2 >= 0.0 && config.q2 <= 1.0)) throw std::invalid_argument("q2 must be a probability");
  n3_elapsed_.fill(-1);
}

void NetworkSim::process_n3() {
  const int cap1 = inst_[C1];
  const int servers = inst_[K3];
  const int service = inst_[T3];
  for (int s = 0; s < kPool; ++s) {
    if (n3_stalled_[s] && q1_ < cap1) {
      ++q1_;
      ++metrics_.recirculated;
      n3_stalled_[s] = false;
      n3_elapsed_[s] = -1;
      --n3_count_;
    }
  }
  for (int s = 0; s < kPool && q3_ > 0 && n3_count_ < servers; ++s) {
    if (n3_elapsed_[s] < 0) {
      n3_elapsed_[s] = 0;
      --q3_;
      ++n3_count_;
    }
  }
  const double beta = 1.0 / service;
  for (int s = 0; s < kPool; ++s) {
    if (n3_elapsed_[s] < 0) continue;
    if (n3_stalled_[s]) {
      ++metrics_.n3_stall_slots;
      continue;
    }
    if (++n3_elapsed_[s] < service) continue;
    if (rng_.uniform() < beta) {
      ++metrics_.faulty;
      if (q1_ < cap1) {
        ++q1_;
        ++metrics_.recirculated;
      } else {
        n3_stalled_[s] = true;
        ++metrics_.n3_stall_slots;
        continue;
      }
    } else {
      ++metrics_.output;
    }
    n3_elapsed_[s] = -1;
    --n3_count_;
  }
}

void NetworkSim::process_n2() {
  const int servers = inst_[K2];
  for (int s = 0; s < kPool && q2_ > 0 && n2_count_ < servers; ++s) {
    if (!n2_busy_[s]) {
      n2_busy_[s] = true;
      --q2_;
      ++n2_count_;
    }
  }
  const double q = config_.q2;
  for (int s = 0; s < kPool; ++s) {
    if (n2_busy_[s] && rng_.uniform() < q) {
      n2_busy_[s] = false;
      --n2_count_;
      ++metrics_.output;
    }
  }
}

void NetworkSim::process_n1() {
  auto push = [this](int dest) {
    int& q = dest == 2 ? q2_ : q3_;
    if (q < inst_[dest == 2 ? C2 : C3]) {
      ++q;
      n1_elapsed_ = -1;
      n1_dest_ = 0;
    } else {
      n1_dest_ = dest;
    }
  };
  if (n1_dest_ != 0) {
    push(n1_dest_);
    if (n1_dest_ != 0) {
      ++metrics_.n1_stall_slots;
      return;
    }
  }
  if (n1_elapsed_ < 0) {
    if (q1_ == 0) return;
    --q1_;
    n1_elapsed_ = 0;
  }
  if (++n1_elapsed_ >= inst_[T1]) {
    push(rng_.uniform() < 0.5 ? 2 : 3);
    if (n1_dest_ != 0) ++metrics_.n1_stall_slots;
  }
}

void NetworkSim::step() {
  for (std::size_t i = 0; i < kNetworkDim; ++i) inst_[i] = params_.sources[i].sample(rng_);
  process_n3();
  process_n2();
  process_n1();
  ++metrics_.slots;
  if (rng_.uniform() < config_.arrival_p) {
    ++metrics_.arrivals;
    if (q1_ < inst_[C1]) {
      ++q1_;
      ++metrics_.admitted;
    } else {
      ++metrics_.lost;
    }
  }
  metrics_.occupancy[0] += node_jobs(1);
  metrics_.occupancy[1] += node_jobs(2);
  metrics_.occupancy[2] += node_jobs(3);
  metrics_.final_jobs = jobs_in_system();
}

void NetworkSim::run(std::int64_t slots) {
  for (std::int64_t t = 0; t < slots; ++t) step();
}

int NetworkSim::node_jobs(int node) const {
  switch (node) {
    case 1: return q1_ + (n1_elapsed_ >= 0 ? 1 : 0);
    case 2: return q2_ + n2_count_;
    case 3: return q3_ + n3_count_;
    default: throw std::out_of_range("node must be 1, 2 or 3");
  }
}

int NetworkSim::jobs_in_system() const { return node_jobs(1) + node_jobs(2) + node_jobs(3); }

int NetworkSim::stalled_n3() const {
  return static_cast<int>(std::count(n3_stalled_.begin(), n3_stalled_.end(), true));
}

NetworkMetrics simulate_network(const NetworkParams& params, std::int64_t horizon, std::uint64_t seed,
                                const NetworkConfig& config) {
  if (horizon < 0) throw std::invalid_argument("horizon must be nonnegative");
  NetworkSim sim(params, config, seed);
  sim.run(horizon);
  return sim.metrics();
}

double network_cost(std::span<const double> x) {
  if (x.size() != kNetworkDim) throw std::invalid_argument("network point needs 7 values");
  return (x[C1] + x[C2] + x[C3]) + 20.0 / x[T1] + 100.0 * x[K2] + 20.0 * x[K3] / x[T3];
}

double network_objective(std::span<const double> x, std::int64_t horizon, std::uint64_t seed,
                         const NetworkConfig& config) {
  const auto m = simulate_network(NetworkParams::embedded(x), horizon, seed, config);
  return network_cost(x) / kMaxNetworkCost - m.throughput() / config.arrival_p;
}

std::array<int, kNetworkDim> round_to_lattice(std::span<const double> x) {
  if (x.size() != kNetworkDim) throw std::invalid_argument("network point needs 7 values");
  std::array<double, kNetworkDim> v;
  for (std::size_t i = 0; i < kNetworkDim; ++i) v[i] = std::clamp(x[i], double(kNetLo), double(kNetHi));
  std::array<bool, kNetworkDim> tie{};
  for (std::size_t i = 0; i < kNetworkDim; ++i) {
    const double fl = std::floor(v[i]);
    tie[i] = v[i] - fl == 0.5;
    if (!tie[i]) v[i] = std::round(v[i]);
  }
  // Ties are settled after the other coordinates are integral.
  for (std::size_t i = 0; i < kNetworkDim; ++i) {
    if (!tie[i]) continue;
    auto lo = v, hi = v;
    lo[i] = std::floor(v[i]);
    hi[i] = std::ceil(v[i]);
    for (std::size_t j = i + 1; j < kNetworkDim; ++j) {
      if (tie[j]) lo[j] = hi[j] = std::floor(v[j]);
    }
    v[i] = network_cost(hi) < network_cost(lo) ? hi[i] : lo[i];
  }
  std::array<int, kNetworkDim> out;
  for (std::size_t i = 0; i < kNetworkDim; ++i) out[i] = static_cast<int>(v[i]);
  return out;
}

}  // namespace qembed
