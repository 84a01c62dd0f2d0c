#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "qembed/random.hpp"

namespace qembed {

struct Box {
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;

  Box(Eigen::VectorXd lo_, Eigen::VectorXd hi_);
  static Box uniform(std::size_t dim, double lo, double hi);

  std::size_t dim() const { return static_cast<std::size_t>(lo.size()); }
  bool contains(const Eigen::VectorXd& x) const;
  Eigen::VectorXd clip(const Eigen::VectorXd& x) const;
};

/// Noisy black box. `stream` names the random stream an evaluation should
/// use; optimizers pass the same stream for evaluations meant to share
/// common random numbers.
using Objective = std::function<double(const Eigen::VectorXd& x, std::uint64_t stream)>;

enum class SpsaMode { Continuous, Discrete };

struct SpsaConfig {
  /// a <= 0 asks for calibration: a is set so the first step has
  /// infinity-norm `first_step`, from `calibration_estimates` gradient
  /// estimates at x0 (their evaluations count against the budget).
  double a = 0.0;
  double c = 1.0;
  /// A as a fraction of the evaluation budget.
  double stability_fraction = 0.1;
  double alpha = 0.602;
  double gamma = 0.101;
  double first_step = 0.5;
  int calibration_estimates = 2;
  int max_evals = 1000;
  SpsaMode mode = SpsaMode::Continuous;
  /// Both evaluations of an iteration share one random stream.
  bool paired = true;
  std::uint64_t seed = 1;

  void validate() const;
};

struct TrustRegionConfig {
  double rho_beg = 5.0;
  double rho_end = 0.1;
  int max_evals = 1000;

  void validate() const;
};

struct OptimizerResult {
  Eigen::VectorXd x;
  /// Best objective value observed (trust region) or last iterate value
  /// estimate (SPSA: not available, NaN).
  double f = 0.0;
  int evals = 0;
  int iterations = 0;
  /// Resolved SPSA gains.
  double a = 0.0;
  double stability = 0.0;
  /// Trust radius at exit, and every radius value taken.
  double rho = 0.0;
  std::vector<double> rho_history;
  /// Every point handed to the objective, in order.
  std::vector<Eigen::VectorXd> evaluated;
};

/// One two-sided SPSA estimate at x with perturbation size ck; the
/// perturbed points are clipped to the box (and rounded in discrete mode).
Eigen::VectorXd spsa_gradient(const Objective& f, const Eigen::VectorXd& x, double ck, const Box& box,
                              RandomStream& rng, std::uint64_t stream_plus, std::uint64_t stream_minus,
                              bool discrete = false, std::vector<Eigen::VectorXd>* evaluated = nullptr);

OptimizerResult spsa(const Objective& f, const Eigen::VectorXd& x0, const Box& box, const SpsaConfig& cfg);

/// Linear-model trust-region method on an (n+1)-point simplex.
OptimizerResult cobyla_style(const Objective& f, const Eigen::VectorXd& x0, const Box& box,
                             const TrustRegionConfig& cfg);

enum class Method { TrustRegion, Spsa, DiscreteSpsa };

std::string_view to_string(Method m);
Method parse_method(std::string_view name);

struct RunRecord {
  int run = 0;
  std::uint64_t seed = 0;
  std::vector<double> initial;
  std::vector<double> final_point;
  std::vector<int> rounded;
  double objective = 0.0;
  int evals = 0;
  /// SPSA gain a after calibration (0 for the trust region).
  double gain_a = 0.0;
  double seconds = 0.0;
};

struct CampaignSummary {
  std::string method;
  int runs = 0;
  double best = 0.0;
  std::vector<int> best_point;
  double avg = 0.0;
  double std = 0.0;
  double avg_evals = 0.0;
  double avg_seconds = 0.0;
};

struct CampaignResult {
  Method method = Method::TrustRegion;
  std::vector<RunRecord> runs;
  CampaignSummary summary;
};

struct CampaignSpec {
  int runs = 100;
  int budget = 1000;
  std::uint64_t seed = 1;
  TrustRegionConfig trust;
  SpsaConfig spsa;
};

/// Starting points drawn uniformly in the box; the same set is used by
/// every method of a campaign.
std::vector<Eigen::VectorXd> initial_points(const Box& box, int count, std::uint64_t seed);

/// Lattice projection applied to the final point of every run.
using Rounder = std::function<std::vector<int>(const Eigen::VectorXd&)>;
/// Objective used by runs and by the final evaluation at the rounded point;
/// evaluation e of run i draws from derive_seed(run seed, e).
using SeededObjective = std::function<double(const Eigen::VectorXd&, std::uint64_t seed)>;

CampaignResult campaign(Method method, const SeededObjective& f, const Box& box,
                        const std::vector<Eigen::VectorXd>& starts, const CampaignSpec& spec, const Rounder& round,
                        int jobs = 1);

CampaignSummary summarize(std::string_view method, const std::vector<RunRecord>& runs);

/// Stream used for the evaluation at the rounded final point.
inline constexpr std::uint64_t kFinalStream = ~std::uint64_t{0};

}  // namespace qembed
