#include "qembed/coeffs.hpp"

#include <cassert>
#include <cmath>

#include <fmt/format.h>

namespace qembed {

DiscreteDomain::DiscreteDomain(int lo_, int hi_) : lo(lo_), hi(hi_) {
  if (lo > hi) throw std::invalid_argument(fmt::format("empty domain [{}, {}]", lo, hi));
}

bool DiscreteDomain::contains(double y) const {
  return y >= lo - kLatticeSnap && y <= hi + kLatticeSnap;
}

CoeffTemplate::CoeffTemplate(int half_width_, double spread_, double skew_)
    : half_width(half_width_), spread(spread_), skew(skew_) {
  if (half_width < 1) throw std::invalid_argument("stencil half-width must be >= 1");
  if (!(spread > 0.0)) throw std::invalid_argument("spread r must be > 0");
  if (skew == 0.0 || !std::isfinite(skew)) throw std::invalid_argument("skew s must be nonzero");
}

CoeffTemplate CoeffTemplate::from_stencil_size(int stencil_size, double spread, double skew) {
  if (stencil_size < 2 || stencil_size % 2 != 0) {
    throw std::invalid_argument(fmt::format("stencil size must be a positive even number, got {}", stencil_size));
  }
  return CoeffTemplate(stencil_size / 2, spread, skew);
}

double CoeffVector::weight_of(int x) const {
  for (std::size_t i = 0; i < support.size(); ++i) {
    if (support[i] == x) return weights[i];
  }
  return 0.0;
}

bool snaps_to_lattice(double y, int* lattice) {
  const double nearest = std::round(y);
  if (std::abs(y - nearest) > kLatticeSnap) return false;
  if (lattice) *lattice = static_cast<int>(nearest);
  return true;
}

namespace {

void check_range(double y, const DiscreteDomain& domain) {
  if (!std::isfinite(y) || !domain.contains(y)) {
    throw DomainError(fmt::format("target {} outside [{}, {}]", y, domain.lo, domain.hi));
  }
}

}  // namespace

std::vector<int> stencil(double y, const DiscreteDomain& domain, int half_width) {
  check_range(y, domain);
  if (half_width < 1) throw std::invalid_argument("stencil half-width must be >= 1");
  int lattice = 0;
  if (snaps_to_lattice(y, &lattice)) return {lattice};

  const int below = static_cast<int>(std::floor(y));
  const int first = std::max(domain.lo, below - half_width + 1);
  const int last = std::min(domain.hi, below + half_width);  // ceil(y) + N - 1
  std::vector<int> points;
  points.reserve(static_cast<std::size_t>(last - first + 1));
  for (int k = first; k <= last; ++k) points.push_back(k);
  return points;
}

double coeff_l(int k, double y, std::span<const int> stencil, double skew, double spread) {
  assert(!stencil.empty());
  const int m = stencil.front();
  const double base_y = y - m + 1.0;
  assert(base_y >= 1.0 - kLatticeSnap);
  const double shifted_y = std::pow(base_y, skew);
  double product = 1.0;
  for (int j : stencil) {
    if (j == k) continue;
    const double base_j = static_cast<double>(j - m + 1);
    assert(base_j >= 1.0);
    const double gap = std::abs(shifted_y - std::pow(base_j, skew));
    product *= spread == 1.0 ? gap : std::pow(gap, spread);
  }
  return product;
}

CoeffVector alphas(double y, const DiscreteDomain& domain, const CoeffTemplate& tmpl) {
  CoeffVector out;
  out.support = stencil(y, domain, tmpl.half_width);
  if (out.support.size() == 1) {
    out.weights = {1.0};
    return out;
  }
  out.weights.reserve(out.support.size());
  double total = 0.0;
  for (int k : out.support) {
    const double l = coeff_l(k, y, out.support, tmpl.skew, tmpl.spread);
    out.weights.push_back(l);
    total += l;
  }
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw std::logic_error(fmt::format("degenerate coefficient normalization at y={}", y));
  }
  for (double& w : out.weights) w /= total;
  return out;
}

RandomizedParam::RandomizedParam(DiscreteDomain domain, double target, CoeffTemplate tmpl)
    : domain_(domain), target_(target), template_(tmpl), cached_(alphas(target, domain, tmpl)) {
  cache_edges();
}

void RandomizedParam::set_target(double target) {
  cached_ = alphas(target, domain_, template_);
  target_ = target;
  cache_edges();
}

void RandomizedParam::cache_edges() {
  edges_.clear();
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < cached_.weights.size(); ++i) {
    acc += cached_.weights[i];
    edges_.push_back(acc);
  }
}

std::vector<LatticeWeight> beta_weights(std::span<const RandomizedParam> params) {
  std::vector<LatticeWeight> out{{{}, 1.0}};
  for (const auto& param : params) {
    const auto& coeffs = param.cached();
    std::vector<LatticeWeight> next;
    next.reserve(out.size() * coeffs.support.size());
    for (const auto& partial : out) {
      for (std::size_t k = 0; k < coeffs.support.size(); ++k) {
        LatticeWeight w{partial.point, partial.probability * coeffs.weights[k]};
        w.point.push_back(coeffs.support[k]);
        next.push_back(std::move(w));
      }
    }
    out = std::move(next);
  }
  return out;
}

}  // namespace qembed
