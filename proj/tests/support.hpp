#pragma once

#include <cmath>
#include <fstream>
#include <string>

#include <Eigen/Dense>
#include <json.hpp>

#include "qembed/random.hpp"

namespace qembed::test {

inline nlohmann::json frozen_values() {
  std::ifstream in(std::string(QEMBED_ORACLE_DIR) + "/frozen_values.json");
  return nlohmann::json::parse(in);
}

// sum (x_i - 3)^2 plus N(0, sd^2) noise drawn from the evaluation's stream.
// Box-Muller keeps the draws identical across standard libraries.
inline double noisy_quadratic(const Eigen::VectorXd& x, std::uint64_t stream, double sd) {
  double f = (x.array() - 3.0).square().sum();
  if (sd > 0.0) {
    RandomStream rng(stream);
    const double u1 = 1.0 - rng.uniform();
    const double u2 = rng.uniform();
    f += sd * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }
  return f;
}

inline double dist_to_optimum(const Eigen::VectorXd& x) { return (x.array() - 3.0).abs().maxCoeff(); }

}  // namespace qembed::test
