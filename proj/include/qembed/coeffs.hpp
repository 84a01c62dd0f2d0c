#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "qembed/random.hpp"

namespace qembed {

/// Raised when a continuous target lies outside its parameter's range.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Consecutive integers {lo, ..., hi}.
struct DiscreteDomain {
  int lo = 1;
  int hi = 1;

  DiscreteDomain() = default;
  DiscreteDomain(int lo_, int hi_);

  bool contains(int x) const { return lo <= x && x <= hi; }
  bool contains(double y) const;
  int size() const { return hi - lo + 1; }

  friend bool operator==(const DiscreteDomain&, const DiscreteDomain&) = default;
};

/// Shape of the interpolation coefficients: stencil half-width N (stencil
/// size at most 2N), spread r > 0 and skew s != 0.
struct CoeffTemplate {
  int half_width = 1;
  double spread = 1.0;
  double skew = 1.0;

  CoeffTemplate() = default;
  CoeffTemplate(int half_width_, double spread_, double skew_);

  /// Template from the (stencil size, r, s) triple used in configuration files.
  static CoeffTemplate from_stencil_size(int stencil_size, double spread, double skew);

  int stencil_size() const { return 2 * half_width; }

  friend bool operator==(const CoeffTemplate&, const CoeffTemplate&) = default;
};

/// Probabilities over the stencil points; zero weight everywhere else.
struct CoeffVector {
  std::vector<int> support;
  std::vector<double> weights;

  double weight_of(int x) const;
  bool degenerate() const { return support.size() == 1; }
};

/// Values within this distance of an integer are treated as lattice points.
inline constexpr double kLatticeSnap = 1e-9;

/// Returns the integer y snaps to, if any.
bool snaps_to_lattice(double y, int* lattice = nullptr);

/// Ordered stencil around y, truncated to the domain.
std::vector<int> stencil(double y, const DiscreteDomain& domain, int half_width);

/// Unnormalized coefficient of stencil point k at y.
double coeff_l(int k, double y, std::span<const int> stencil, double skew, double spread);

/// Normalized interpolation coefficients at y.
CoeffVector alphas(double y, const DiscreteDomain& domain, const CoeffTemplate& tmpl);

/// A discrete parameter embedded at a continuous target. The coefficient
/// vector is recomputed only when the target changes.
class RandomizedParam {
 public:
  RandomizedParam(DiscreteDomain domain, double target, CoeffTemplate tmpl);

  const DiscreteDomain& domain() const { return domain_; }
  double target() const { return target_; }
  const CoeffTemplate& coeff_template() const { return template_; }
  const CoeffVector& cached() const { return cached_; }

  void set_target(double target);

  /// Draw the value for one slot. Singleton supports consume no randomness.
  int sample(RandomStream& rng) const {
    const auto n = cached_.support.size();
    if (n == 1) return cached_.support.front();
    // First index whose running sum exceeds u; counted without branches.
    const double u = rng.uniform();
    std::size_t i = 0;
    for (double edge : edges_) i += u >= edge;
    return cached_.support[i];
  }

 private:
  DiscreteDomain domain_;
  double target_;
  CoeffTemplate template_;
  CoeffVector cached_;
  std::vector<double> edges_;

  void cache_edges();
};

inline int sample_gamma(const RandomizedParam& param, RandomStream& rng) {
  return param.sample(rng);
}

/// Joint probability of one lattice point of the product of stencils.
struct LatticeWeight {
  std::vector<int> point;
  double probability = 0.0;
};

/// Joint lattice weights of independently randomized parameters, in
/// lexicographic order of the points (first parameter varies slowest).
std::vector<LatticeWeight> beta_weights(std::span<const RandomizedParam> params);

}  // namespace qembed
