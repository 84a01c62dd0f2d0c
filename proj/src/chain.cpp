#include "qembed/chain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/SparseLU>
#include <fmt/format.h>

namespace qembed {

namespace {

// Count vectors of the given length with total at most `limit`.
void count_vectors(std::size_t length, int limit, std::vector<int>& prefix, std::vector<std::vector<int>>& out) {
  if (prefix.size() == length) {
    out.push_back(prefix);
    return;
  }
  for (int c = 0; c <= limit; ++c) {
    prefix.push_back(c);
    count_vectors(length, limit - c, prefix, out);
    prefix.pop_back();
  }
}

std::vector<int> key_of(const StateLabel& label) {
  std::vector<int> key;
  key.reserve(label.service.size() + 2);
  key.push_back(label.queue_len);
  key.push_back(label.capacity);
  key.insert(key.end(), label.service.begin(), label.service.end());
  return key;
}

double binomial_pmf(int n, int k, double q) {
  double coeff = 1.0;
  for (int i = 1; i <= k; ++i) coeff = coeff * (n - k + i) / i;
  return coeff * std::pow(q, k) * std::pow(1.0 - q, n - k);
}

struct Outcome {
  StateLabel next;
  double prob;
};

}  // namespace

void QueueFamily::validate() const {
  if (!(arrival_p >= 0.0 && arrival_p <= 1.0)) throw std::invalid_argument("p must be a probability");
  if (geometric_service(variant) && !(service_q >= 0.0 && service_q <= 1.0)) {
    throw std::invalid_argument("q must be a probability");
  }
  for (const auto& name : parameter_names(variant)) {
    auto it = domains.find(name);
    if (it == domains.end()) {
      throw std::invalid_argument(fmt::format("{}: missing domain for parameter {}", to_string(variant), name));
    }
    if (it->second.lo < 1) throw std::invalid_argument(fmt::format("{} domain must start at >= 1", name));
  }
  if (domains.size() != parameter_names(variant).size()) {
    throw std::invalid_argument(fmt::format("{}: unexpected parameter domain", to_string(variant)));
  }
}

StateSpace::StateSpace(const QueueFamily& family, int truncation)
    : variant_(family.variant), truncation_(truncation) {
  family.validate();
  track_capacity_ = has_capacity(variant_);
  if (track_capacity_) capacities_ = family.domains.at("C");
  if (multi_server(variant_)) {
    const auto& k = family.domains.at("K");
    max_servers_ = k.hi;
    track_busy_ = geometric_service(variant_) && k.size() > 1;
  }
  if (!geometric_service(variant_)) max_service_time_ = family.domains.at("T").hi;

  if (truncation_ < 1) throw ConfigurationError(fmt::format("truncation B = {} must be >= 1", truncation_));
  if (track_capacity_ && truncation_ < capacities_.hi) {
    throw ConfigurationError(
        fmt::format("truncation B = {} cannot hold the largest capacity {}", truncation_, capacities_.hi));
  }
  enumerate();
}

void StateSpace::enumerate() {
  std::vector<int> caps;
  if (track_capacity_) {
    for (int c = capacities_.lo; c <= capacities_.hi; ++c) caps.push_back(c);
  } else {
    caps.push_back(-1);
  }
  const bool deterministic = max_service_time_ > 0;
  const auto phases = deterministic ? static_cast<std::size_t>(max_service_time_ - 1) : 0;

  for (int n = 0; n <= truncation_; ++n) {
    const int limit = std::min(n, max_servers_);
    std::vector<std::vector<int>> configs;
    if (deterministic) {
      std::vector<int> prefix;
      count_vectors(phases, limit, prefix, configs);
    } else if (track_busy_) {
      for (int m = 0; m <= limit; ++m) configs.push_back({m});
    } else {
      configs.emplace_back();
    }
    for (const auto& config : configs) {
      for (int cap : caps) {
        StateLabel label{n, cap, config};
        index_.emplace(key_of(label), labels_.size());
        labels_.push_back(std::move(label));
      }
    }
  }
}

std::size_t StateSpace::index_of(const StateLabel& label) const {
  auto it = index_.find(key_of(label));
  if (it == index_.end()) throw std::out_of_range("state not in the enumerated space");
  return it->second;
}

bool StateSpace::same_layout(const StateSpace& other) const {
  return variant_ == other.variant_ && truncation_ == other.truncation_ && track_capacity_ == other.track_capacity_ &&
         track_busy_ == other.track_busy_ && capacities_ == other.capacities_ && max_servers_ == other.max_servers_ &&
         max_service_time_ == other.max_service_time_;
}

ChainBuilder::ChainBuilder(QueueFamily family, int truncation)
    : family_(std::move(family)), space_(std::make_shared<const StateSpace>(family_, truncation)) {}

ChainSpec ChainBuilder::build(const LatticePoint& point) const {
  for (const auto& [name, domain] : family_.domains) {
    auto it = point.find(name);
    if (it == point.end()) throw std::invalid_argument(fmt::format("lattice point lacks parameter {}", name));
    if (!domain.contains(it->second)) {
      throw std::invalid_argument(fmt::format("{} = {} outside [{}, {}]", name, it->second, domain.lo, domain.hi));
    }
  }
  const StateSpace& space = *space_;
  const bool capacity = space.tracks_capacity();
  const bool deterministic = space.max_service_time() > 0;
  const int next_cap = capacity ? point.at("C") : -1;
  const int servers = multi_server(family_.variant) ? point.at("K") : 1;
  const int service_time = deterministic ? point.at("T") : 0;
  const int truncation = space.truncation();
  const double p = family_.arrival_p;
  const double q = family_.service_q;

  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(space.size() * 4);
  std::vector<Outcome> outcomes;

  for (std::size_t i = 0; i < space.size(); ++i) {
    const StateLabel& s = space.label(i);
    outcomes.clear();
    for (int arrival = 1; arrival >= 0; --arrival) {
      const double pa = arrival ? p : 1.0 - p;
      if (pa == 0.0) continue;
      int jobs = s.queue_len;
      if (arrival) {
        const bool admit = capacity ? s.queue_len < s.capacity : s.queue_len < truncation;
        if (admit) ++jobs;
      }

      if (!deterministic) {
        int busy;
        if (space.tracks_busy_servers()) {
          const int carried = s.service.front();
          busy = carried + std::min(jobs - carried, std::max(0, servers - carried));
        } else {
          busy = std::min(jobs, servers);
        }
        for (int d = 0; d <= busy; ++d) {
          const double pd = binomial_pmf(busy, d, q);
          if (pd == 0.0) continue;
          StateLabel next{jobs - d, next_cap, {}};
          if (space.tracks_busy_servers()) next.service = {busy - d};
          outcomes.push_back({std::move(next), pa * pd});
        }
      } else {
        // service[e] counts jobs that have received e + 1 slots of service.
        const auto& counts = s.service;
        const int carried = std::accumulate(counts.begin(), counts.end(), 0);
        const int starts = std::min(jobs - carried, std::max(0, servers - carried));
        std::vector<int> next_counts(counts.size(), 0);
        int done = 0;
        if (1 >= service_time) {
          done += starts;
        } else {
          next_counts[0] = starts;
        }
        for (std::size_t e = 0; e < counts.size(); ++e) {
          const int elapsed = static_cast<int>(e) + 2;
          if (elapsed >= service_time) {
            done += counts[e];
          } else {
            next_counts[e + 1] += counts[e];
          }
        }
        outcomes.push_back({StateLabel{jobs - done, next_cap, std::move(next_counts)}, pa});
      }
    }
    for (const auto& o : outcomes) {
      triplets.emplace_back(static_cast<int>(i), static_cast<int>(space.index_of(o.next)), o.prob);
    }
  }

  ChainSpec chain{space_, TransitionMatrix(static_cast<int>(space.size()), static_cast<int>(space.size()))};
  chain.matrix.setFromTriplets(triplets.begin(), triplets.end());
  chain.matrix.makeCompressed();
  return chain;
}

ChainSpec build_chain(const QueueFamily& family, const LatticePoint& point, int truncation) {
  return ChainBuilder(family, truncation).build(point);
}

ChainSpec mix_chains(std::span<const ChainSpec> chains, std::span<const double> weights) {
  if (chains.empty() || chains.size() != weights.size()) {
    throw StructuralError("mix_chains needs one weight per chain");
  }
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw StructuralError("mixture weights must be nonnegative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12) throw StructuralError(fmt::format("mixture weights sum to {}", total));
  for (const auto& c : chains) {
    if (!c.space->same_layout(*chains.front().space)) throw StructuralError("chains do not share a state space");
  }
  ChainSpec mixed{chains.front().space, weights.front() * chains.front().matrix};
  for (std::size_t j = 1; j < chains.size(); ++j) {
    if (weights[j] == 0.0) continue;
    mixed.matrix += weights[j] * chains[j].matrix;
  }
  mixed.matrix.makeCompressed();
  return mixed;
}

std::vector<std::vector<std::size_t>> closed_classes(const ChainSpec& chain) {
  const auto& P = chain.matrix;
  const auto n = static_cast<std::size_t>(P.rows());
  constexpr std::size_t kUnvisited = static_cast<std::size_t>(-1);

  // Iterative Tarjan.
  std::vector<std::size_t> index(n, kUnvisited), low(n, 0), component(n, kUnvisited);
  std::vector<bool> on_stack(n, false);
  std::vector<std::size_t> stack;
  std::size_t counter = 0, components = 0;
  struct Frame {
    std::size_t v;
    TransitionMatrix::InnerIterator it;
  };
  std::vector<Frame> calls;

  for (std::size_t root = 0; root < n; ++root) {
    if (index[root] != kUnvisited) continue;
    index[root] = low[root] = counter++;
    stack.push_back(root);
    on_stack[root] = true;
    calls.push_back({root, TransitionMatrix::InnerIterator(P, static_cast<int>(root))});
    while (!calls.empty()) {
      auto& frame = calls.back();
      const std::size_t v = frame.v;
      bool descended = false;
      for (; frame.it; ++frame.it) {
        if (!(frame.it.value() > 0.0)) continue;
        const auto w = static_cast<std::size_t>(frame.it.col());
        if (index[w] == kUnvisited) {
          index[w] = low[w] = counter++;
          stack.push_back(w);
          on_stack[w] = true;
          ++frame.it;
          calls.push_back({w, TransitionMatrix::InnerIterator(P, static_cast<int>(w))});
          descended = true;
          break;
        }
        if (on_stack[w]) low[v] = std::min(low[v], index[w]);
      }
      if (descended) continue;
      if (low[v] == index[v]) {
        std::size_t w;
        do {
          w = stack.back();
          stack.pop_back();
          on_stack[w] = false;
          component[w] = components;
        } while (w != v);
        ++components;
      }
      calls.pop_back();
      if (!calls.empty()) {
        const std::size_t parent = calls.back().v;
        low[parent] = std::min(low[parent], low[v]);
      }
    }
  }

  std::vector<bool> closed(components, true);
  for (std::size_t v = 0; v < n; ++v) {
    for (TransitionMatrix::InnerIterator it(P, static_cast<int>(v)); it; ++it) {
      if (it.value() > 0.0 && component[static_cast<std::size_t>(it.col())] != component[v]) {
        closed[component[v]] = false;
      }
    }
  }
  std::vector<std::vector<std::size_t>> classes;
  std::vector<std::size_t> slot(components, kUnvisited);
  for (std::size_t v = 0; v < n; ++v) {
    const auto c = component[v];
    if (!closed[c]) continue;
    if (slot[c] == kUnvisited) {
      slot[c] = classes.size();
      classes.emplace_back();
    }
    classes[slot[c]].push_back(v);
  }
  return classes;
}

StationaryDist stationary(const ChainSpec& chain) {
  const auto classes = closed_classes(chain);
  if (classes.size() != 1) {
    throw NoUniqueDistribution(fmt::format("chain has {} closed communicating classes", classes.size()));
  }
  const auto& P = chain.matrix;
  const int n = static_cast<int>(P.rows());
  const int last = n - 1;

  // (I - P^T) pi = 0 with the last equation replaced by sum(pi) = 1.
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(static_cast<std::size_t>(P.nonZeros()) + 2 * static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    for (TransitionMatrix::InnerIterator it(P, i); it; ++it) {
      if (it.col() != last) triplets.emplace_back(static_cast<int>(it.col()), i, -it.value());
    }
  }
  for (int i = 0; i < last; ++i) triplets.emplace_back(i, i, 1.0);
  for (int j = 0; j < n; ++j) triplets.emplace_back(last, j, 1.0);
  Eigen::SparseMatrix<double> A(n, n);
  A.setFromTriplets(triplets.begin(), triplets.end());
  A.makeCompressed();

  Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> solver;
  solver.compute(A);
  if (solver.info() != Eigen::Success) {
    throw NoUniqueDistribution(fmt::format("stationary system is singular: {}", solver.lastErrorMessage()));
  }
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
  rhs[last] = 1.0;
  StationaryDist dist;
  dist.pi = solver.solve(rhs);
  if (solver.info() != Eigen::Success || !dist.pi.allFinite()) {
    throw NoUniqueDistribution("stationary solve failed");
  }
  // Round-off can leave transient states at -1e-17; anything larger is a bug.
  for (int i = 0; i < n; ++i) {
    if (dist.pi[i] < 0.0) {
      if (dist.pi[i] < -1e-10) throw std::logic_error(fmt::format("negative stationary mass {}", dist.pi[i]));
      dist.pi[i] = 0.0;
    }
  }
  dist.pi /= dist.pi.sum();
  const Eigen::VectorXd moved = P.transpose() * dist.pi;
  dist.residual = (moved - dist.pi).cwiseAbs().maxCoeff();
  return dist;
}

CostFn blocking_cost(const StateSpace& space) {
  CostFn c;
  c.values.reserve(space.size());
  for (std::size_t i = 0; i < space.size(); ++i) {
    const auto& s = space.label(i);
    const int limit = space.tracks_capacity() ? s.capacity : space.truncation();
    c.values.push_back(s.queue_len >= limit ? 1.0 : 0.0);
  }
  return c;
}

CostFn jobs_cost(const StateSpace& space) {
  CostFn c;
  c.values.reserve(space.size());
  for (std::size_t i = 0; i < space.size(); ++i) c.values.push_back(space.label(i).queue_len);
  return c;
}

CostFn throughput_cost(const StateSpace& space, double arrival_p) {
  CostFn c = blocking_cost(space);
  for (double& v : c.values) v = arrival_p * (1.0 - v);
  return c;
}

CostFn metric_cost(const StateSpace& space, Metric metric, double arrival_p) {
  switch (metric) {
    case Metric::Blocking: return blocking_cost(space);
    case Metric::AvgJobs: return jobs_cost(space);
    case Metric::Throughput: return throughput_cost(space, arrival_p);
  }
  throw std::invalid_argument("unknown metric");
}

double exact_value(const StationaryDist& dist, const CostFn& cost) {
  if (static_cast<std::size_t>(dist.pi.size()) != cost.values.size()) {
    throw StructuralError("cost vector does not match the state space");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < cost.values.size(); ++i) sum += dist.pi[static_cast<int>(i)] * cost.values[i];
  return sum;
}

double exact_value(const ChainSpec& chain, const CostFn& cost) { return exact_value(stationary(chain), cost); }

ExactOracle::ExactOracle(QueueFamily family, OracleOptions options)
    : family_(std::move(family)), options_(options) {
  family_.validate();
}

const ChainSpec& ExactOracle::lattice_chain(int truncation, const LatticePoint& point) {
  auto key = std::make_pair(truncation, point);
  if (auto it = cache_.find(key); it != cache_.end()) return it->second;
  auto builder = builders_.find(truncation);
  if (builder == builders_.end()) builder = builders_.emplace(truncation, ChainBuilder(family_, truncation)).first;
  return cache_.emplace(std::move(key), builder->second.build(point)).first->second;
}

OracleResult ExactOracle::evaluate(std::span<const std::pair<std::string, RandomizedParam>> params, Metric metric) {
  std::vector<std::string> names;
  std::vector<RandomizedParam> randomized;
  for (const auto& [name, param] : params) {
    auto it = family_.domains.find(name);
    if (it == family_.domains.end()) {
      throw std::invalid_argument(fmt::format("{} has no parameter {}", to_string(family_.variant), name));
    }
    if (!(it->second == param.domain())) {
      throw std::invalid_argument(fmt::format("parameter {}: embedding domain differs from the family domain", name));
    }
    names.push_back(name);
    randomized.push_back(param);
  }
  LatticePoint base;
  for (const auto& [name, domain] : family_.domains) {
    if (std::find(names.begin(), names.end(), name) != names.end()) continue;
    if (domain.size() != 1) {
      throw std::invalid_argument(fmt::format("parameter {} is neither embedded nor fixed", name));
    }
    base[name] = domain.lo;
  }
  const auto weights = beta_weights(randomized);

  const bool bounded = has_capacity(family_.variant);
  int truncation = bounded ? family_.domains.at("C").hi : options_.initial_truncation;
  if (!bounded && multi_server(family_.variant)) {
    truncation = std::max(truncation, family_.domains.at("K").hi + options_.tail_band + 1);
  }
  for (;;) {
    std::vector<ChainSpec> chains;
    std::vector<double> probs;
    for (const auto& w : weights) {
      LatticePoint point = base;
      for (std::size_t k = 0; k < names.size(); ++k) point[names[k]] = w.point[k];
      chains.push_back(lattice_chain(truncation, point));
      probs.push_back(w.probability);
    }
    const ChainSpec mixed = chains.size() == 1 ? chains.front() : mix_chains(chains, probs);
    const auto dist = stationary(mixed);
    OracleResult result;
    result.value = exact_value(dist, metric_cost(*mixed.space, metric, family_.arrival_p));
    result.truncation = truncation;
    result.residual = dist.residual;
    if (!bounded) {
      for (std::size_t i = 0; i < mixed.size(); ++i) {
        if (mixed.space->label(i).queue_len >= truncation - options_.tail_band) {
          result.tail_mass += dist.pi[static_cast<int>(i)];
        }
      }
      if (result.tail_mass > options_.tail_tolerance) {
        if (truncation * 2 > options_.max_truncation) {
          throw ConfigurationError(fmt::format("tail mass {} at truncation {} exceeds {}; the model is unstable or "
                                               "needs a larger max_truncation",
                                               result.tail_mass, truncation, options_.tail_tolerance));
        }
        truncation *= 2;
        continue;
      }
    }
    return result;
  }
}

OracleResult ExactOracle::evaluate(const std::string& axis, const RandomizedParam& param, Metric metric) {
  const std::pair<std::string, RandomizedParam> one{axis, param};
  return evaluate(std::span(&one, 1), metric);
}

std::vector<SweepRow> interpolation_curve(const QueueFamily& family, const std::string& axis,
                                          std::span<const double> grid, const CoeffTemplate& tmpl, Metric metric,
                                          const OracleOptions& options) {
  ExactOracle oracle(family, options);
  const auto domain_it = family.domains.find(axis);
  if (domain_it == family.domains.end()) {
    throw std::invalid_argument(fmt::format("{} has no parameter {}", to_string(family.variant), axis));
  }
  std::vector<SweepRow> rows;
  rows.reserve(grid.size());
  for (double y : grid) {
    const RandomizedParam param(domain_it->second, y, tmpl);
    rows.push_back({y, oracle.evaluate(axis, param, metric).value, 0.0, 0, 0, 0});
  }
  return rows;
}

}  // namespace qembed
