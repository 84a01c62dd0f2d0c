#pragma once

#include <cstdint>
#include <random>

namespace qembed {

/// A seeded stream of uniform variates. Each replication, optimization run
/// and objective evaluation owns one; streams are never shared across threads.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : engine_(seed) {}

  /// Uniform on [0, 1) with 53 random bits. Bit-reproducible across
  /// standard libraries, unlike std::uniform_real_distribution.
  double uniform() {
    ++draws_;
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// +1 or -1 with equal probability.
  double rademacher() { return uniform() < 0.5 ? -1.0 : 1.0; }

  std::uint64_t draws() const { return draws_; }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::uint64_t draws_ = 0;
};

/// Derives a child seed from a parent seed and a stream index (splitmix64
/// finalizer). Used to give replications and evaluations independent streams
/// that do not depend on scheduling order.
constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index) {
  std::uint64_t z = parent + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace qembed
