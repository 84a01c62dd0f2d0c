#include "qembed/optimizers.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>

#include "qembed/parallel.hpp"

namespace qembed {

Box::Box(Eigen::VectorXd lo_, Eigen::VectorXd hi_) : lo(std::move(lo_)), hi(std::move(hi_)) {
  if (lo.size() != hi.size() || lo.size() == 0) throw std::invalid_argument("box bounds must have equal, nonzero size");
  for (Eigen::Index i = 0; i < lo.size(); ++i) {
    if (!(lo[i] < hi[i])) throw std::invalid_argument(fmt::format("box dimension {}: lo must be below hi", i));
  }
}

Box Box::uniform(std::size_t dim, double lo, double hi) {
  const auto n = static_cast<Eigen::Index>(dim);
  return Box(Eigen::VectorXd::Constant(n, lo), Eigen::VectorXd::Constant(n, hi));
}

bool Box::contains(const Eigen::VectorXd& x) const {
  return x.size() == lo.size() && (x.array() >= lo.array()).all() && (x.array() <= hi.array()).all();
}

Eigen::VectorXd Box::clip(const Eigen::VectorXd& x) const { return x.cwiseMax(lo).cwiseMin(hi); }

void SpsaConfig::validate() const {
  if (!(c > 0.0)) throw std::invalid_argument("spsa: c must be positive");
  if (!(gamma > 0.0 && gamma < alpha && alpha <= 1.0)) {
    throw std::invalid_argument("spsa: need 0 < gamma < alpha <= 1");
  }
  if (!(stability_fraction >= 0.0)) throw std::invalid_argument("spsa: stability fraction must be nonnegative");
  if (a <= 0.0 && !(first_step > 0.0)) throw std::invalid_argument("spsa: first_step must be positive");
  if (calibration_estimates < 1) throw std::invalid_argument("spsa: calibration needs at least one estimate");
  if (max_evals < 0) throw std::invalid_argument("spsa: max_evals must be nonnegative");
}

void TrustRegionConfig::validate() const {
  if (!(rho_end > 0.0 && rho_beg > rho_end)) throw std::invalid_argument("trust region: need rho_beg > rho_end > 0");
  if (max_evals < 0) throw std::invalid_argument("trust region: max_evals must be nonnegative");
}

namespace {

Eigen::VectorXd rounded(const Eigen::VectorXd& x) { return x.array().round().matrix(); }

void check_start(const Eigen::VectorXd& x0, const Box& box) {
  if (!box.contains(x0)) throw std::invalid_argument("initial point lies outside the box");
}

}  // namespace

Eigen::VectorXd spsa_gradient(const Objective& f, const Eigen::VectorXd& x, double ck, const Box& box,
                              RandomStream& rng, std::uint64_t stream_plus, std::uint64_t stream_minus,
                              bool discrete, std::vector<Eigen::VectorXd>* evaluated) {
  const auto n = x.size();
  Eigen::VectorXd delta(n);
  for (Eigen::Index i = 0; i < n; ++i) delta[i] = rng.rademacher();
  Eigen::VectorXd xp = box.clip(x + ck * delta);
  Eigen::VectorXd xm = box.clip(x - ck * delta);
  if (discrete) {
    xp = box.clip(rounded(xp));
    xm = box.clip(rounded(xm));
  }
  if (evaluated) {
    evaluated->push_back(xp);
    evaluated->push_back(xm);
  }
  const double fp = f(xp, stream_plus);
  const double fm = f(xm, stream_minus);
  // Divide by the realized difference: clipping or rounding can shrink it.
  Eigen::VectorXd g(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double diff = xp[i] - xm[i];
    g[i] = diff != 0.0 ? (fp - fm) / diff : 0.0;
  }
  return g;
}

OptimizerResult spsa(const Objective& f, const Eigen::VectorXd& x0, const Box& box, const SpsaConfig& cfg) {
  cfg.validate();
  check_start(x0, box);
  const bool discrete = cfg.mode == SpsaMode::Discrete;
  RandomStream rng(cfg.seed);
  OptimizerResult res;
  res.x = x0;
  res.f = std::numeric_limits<double>::quiet_NaN();
  res.stability = cfg.stability_fraction * cfg.max_evals;
  const double A = res.stability;

  auto estimate = [&](const Eigen::VectorXd& x, double ck) {
    const std::uint64_t sp = static_cast<std::uint64_t>(res.evals);
    const std::uint64_t sm = cfg.paired ? sp : sp + 1;
    res.evals += 2;
    return spsa_gradient(f, x, ck, box, rng, sp, sm, discrete, &res.evaluated);
  };

  const double fallback = cfg.first_step * std::pow(A + 1.0, cfg.alpha);
  res.a = cfg.a;
  if (res.a <= 0.0) {
    res.a = fallback;
    if (cfg.max_evals >= 2 * cfg.calibration_estimates + 2) {
      double mag = 0.0;
      for (int k = 0; k < cfg.calibration_estimates; ++k) mag += estimate(x0, cfg.c).cwiseAbs().maxCoeff();
      mag /= cfg.calibration_estimates;
      if (mag > 0.0 && std::isfinite(mag)) res.a = cfg.first_step * std::pow(A + 1.0, cfg.alpha) / mag;
    }
  }

  Eigen::VectorXd x = x0;
  for (int k = 0; res.evals + 2 <= cfg.max_evals; ++k) {
    const double ak = res.a / std::pow(k + 1.0 + A, cfg.alpha);
    const double ck = cfg.c / std::pow(k + 1.0, cfg.gamma);
    x = box.clip(x - ak * estimate(x, ck));
    ++res.iterations;
  }
  res.x = x;
  return res;
}

namespace {

// Largest step d with |d| <= rho inside the box along the steepest descent
// path clamp(-t g): the exact minimizer of g.d over ball and box.
Eigen::VectorXd trust_step(const Eigen::VectorXd& g, const Eigen::VectorXd& x, const Box& box, double rho) {
  const auto n = g.size();
  struct Break {
    double t;
    Eigen::Index i;
    double limit;
  };
  std::vector<Break> breaks;
  double free_g2 = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (g[i] == 0.0) continue;
    const double limit = g[i] < 0.0 ? box.hi[i] - x[i] : x[i] - box.lo[i];
    breaks.push_back({limit / std::abs(g[i]), i, limit});
    free_g2 += g[i] * g[i];
  }
  std::sort(breaks.begin(), breaks.end(), [](const Break& a, const Break& b) { return a.t < b.t; });
  double sat = 0.0;
  double t = std::numeric_limits<double>::infinity();
  for (const auto& b : breaks) {
    if (sat + b.t * b.t * free_g2 >= rho * rho) {
      t = std::sqrt(std::max(0.0, rho * rho - sat) / free_g2);
      break;
    }
    sat += b.limit * b.limit;
    free_g2 -= g[b.i] * g[b.i];
  }
  Eigen::VectorXd d = Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (g[i] == 0.0) continue;
    const double move = std::isinf(t) ? -std::copysign(std::numeric_limits<double>::infinity(), g[i]) : -t * g[i];
    d[i] = std::clamp(move, box.lo[i] - x[i], box.hi[i] - x[i]);
  }
  return d;
}

}  // namespace

OptimizerResult cobyla_style(const Objective& f, const Eigen::VectorXd& x0, const Box& box,
                             const TrustRegionConfig& cfg) {
  cfg.validate();
  check_start(x0, box);
  const auto n = x0.size();
  OptimizerResult res;
  double rho = cfg.rho_beg;
  res.rho_history.push_back(rho);

  std::vector<Eigen::VectorXd> V;
  std::vector<double> F;
  auto evaluate = [&](const Eigen::VectorXd& x) {
    res.evaluated.push_back(x);
    const double v = f(x, static_cast<std::uint64_t>(res.evals));
    ++res.evals;
    return v;
  };
  auto finish = [&]() {
    const auto b = static_cast<std::size_t>(std::min_element(F.begin(), F.end()) - F.begin());
    res.x = V.empty() ? x0 : V[b];
    res.f = F.empty() ? std::numeric_limits<double>::quiet_NaN() : F[b];
    res.rho = rho;
    return res;
  };
  if (cfg.max_evals < 1) return finish();

  V.push_back(x0);
  F.push_back(evaluate(x0));
  for (Eigen::Index i = 0; i < n; ++i) {
    if (res.evals >= cfg.max_evals) return finish();
    const double up = box.hi[i] - x0[i], down = x0[i] - box.lo[i];
    double step = up >= rho ? rho : down >= rho ? -rho : (up >= down ? up : -down);
    Eigen::VectorXd v = x0;
    v[i] += step;
    V.push_back(box.clip(v));
    F.push_back(evaluate(V.back()));
  }

  // rho halves (snapping to rho_end near the end); false once rho_end is spent.
  auto reduce = [&]() {
    if (rho <= cfg.rho_end) return false;
    rho *= 0.5;
    if (rho <= 1.5 * cfg.rho_end) rho = cfg.rho_end;
    res.rho_history.push_back(rho);
    return true;
  };

  int geometry_run = 0;
  while (res.evals < cfg.max_evals) {
    ++res.iterations;
    const auto b = static_cast<std::size_t>(std::min_element(F.begin(), F.end()) - F.begin());
    std::vector<std::size_t> others;
    for (std::size_t j = 0; j < V.size(); ++j) {
      if (j != b) others.push_back(j);
    }
    Eigen::MatrixXd D(n, n);
    Eigen::VectorXd dF(n);
    for (Eigen::Index r = 0; r < n; ++r) {
      D.row(r) = (V[others[r]] - V[b]).transpose();
      dF[r] = F[others[r]] - F[b];
    }

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(D, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    if (sv[n - 1] <= 1e-10 * std::max(rho, sv[0])) {
      // Flat simplex: move the vertex most involved in the dependency along
      // the missing direction.
      const Eigen::VectorXd dir = svd.matrixV().col(n - 1);
      Eigen::Index r;
      svd.matrixU().col(n - 1).cwiseAbs().maxCoeff(&r);
      const Eigen::VectorXd plus = box.clip(V[b] + rho * dir), minus = box.clip(V[b] - rho * dir);
      const Eigen::VectorXd& pick =
          std::abs(dir.dot(plus - V[b])) >= std::abs(dir.dot(minus - V[b])) ? plus : minus;
      V[others[r]] = pick;
      F[others[r]] = evaluate(pick);
      continue;
    }

    const Eigen::MatrixXd W = D.inverse();
    const Eigen::VectorXd g = W * dF;

    if (geometry_run <= n) {
      Eigen::Index bad = -1;
      double worst_dist = 2.1 * rho;
      for (Eigen::Index r = 0; r < n; ++r) {
        const double dist = D.row(r).norm();
        if (dist > worst_dist) {
          worst_dist = dist;
          bad = r;
        }
      }
      double sigma_bad = 0.25 * rho;
      if (bad < 0) {
        for (Eigen::Index r = 0; r < n; ++r) {
          const double sigma = 1.0 / W.col(r).norm();
          if (sigma < sigma_bad) {
            sigma_bad = sigma;
            bad = r;
          }
        }
      } else {
        sigma_bad = 1.0 / W.col(bad).norm();
      }
      if (bad >= 0) {
        const Eigen::VectorXd normal = W.col(bad).normalized();
        const Eigen::VectorXd plus = box.clip(V[b] + rho * normal), minus = box.clip(V[b] - rho * normal);
        const double sp = std::abs(normal.dot(plus - V[b])), sm = std::abs(normal.dot(minus - V[b]));
        const Eigen::VectorXd& pick =
            sp > sm || (sp == sm && g.dot(plus - V[b]) <= g.dot(minus - V[b])) ? plus : minus;
        const double sigma_new = std::max(sp, sm);
        // A box wall may stop the repair; accept the simplex then.
        if (worst_dist > 2.1 * rho || sigma_new > sigma_bad) {
          V[others[bad]] = pick;
          F[others[bad]] = evaluate(pick);
          ++geometry_run;
          continue;
        }
      }
    }
    geometry_run = 0;

    const Eigen::VectorXd d = trust_step(g, V[b], box, rho);
    if (d.norm() < 0.5 * rho) {
      if (!reduce()) break;
      continue;
    }
    const Eigen::VectorXd x_new = box.clip(V[b] + d);
    const double f_new = evaluate(x_new);
    const double predicted = -g.dot(d);
    const double ratio = predicted > 0.0 ? (F[b] - f_new) / predicted : -std::numeric_limits<double>::infinity();

    const Eigen::VectorXd lambda = W.transpose() * d;
    Eigen::Index replace = 0;
    double score = -1.0;
    for (Eigen::Index r = 0; r < n; ++r) {
      const double s = std::abs(lambda[r]) * std::max(1.0, D.row(r).norm() / rho);
      if (s > score) {
        score = s;
        replace = r;
      }
    }
    V[others[replace]] = x_new;
    F[others[replace]] = f_new;
    if (ratio < 0.1 && !reduce()) break;
  }
  return finish();
}

std::string_view to_string(Method m) {
  switch (m) {
    case Method::TrustRegion: return "cobyla";
    case Method::Spsa: return "spsa";
    case Method::DiscreteSpsa: return "discrete-spsa";
  }
  return "?";
}

Method parse_method(std::string_view name) {
  for (auto m : {Method::TrustRegion, Method::Spsa, Method::DiscreteSpsa}) {
    if (to_string(m) == name) return m;
  }
  throw std::invalid_argument(fmt::format("unknown method '{}' (cobyla, spsa, discrete-spsa)", name));
}

std::vector<Eigen::VectorXd> initial_points(const Box& box, int count, std::uint64_t seed) {
  RandomStream rng(derive_seed(seed, 0));
  std::vector<Eigen::VectorXd> pts;
  for (int i = 0; i < count; ++i) {
    Eigen::VectorXd x(box.lo.size());
    for (Eigen::Index d = 0; d < x.size(); ++d) x[d] = box.lo[d] + (box.hi[d] - box.lo[d]) * rng.uniform();
    pts.push_back(std::move(x));
  }
  return pts;
}

CampaignSummary summarize(std::string_view method, const std::vector<RunRecord>& runs) {
  CampaignSummary s;
  s.method = std::string(method);
  s.runs = static_cast<int>(runs.size());
  if (runs.empty()) return s;
  std::size_t best = 0;
  double sum = 0.0, evals = 0.0, secs = 0.0;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (runs[i].objective < runs[best].objective) best = i;
    sum += runs[i].objective;
    evals += runs[i].evals;
    secs += runs[i].seconds;
  }
  const double n = static_cast<double>(runs.size());
  s.best = runs[best].objective;
  s.best_point = runs[best].rounded;
  s.avg = sum / n;
  double ss = 0.0;
  for (const auto& r : runs) ss += (r.objective - s.avg) * (r.objective - s.avg);
  s.std = runs.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  s.avg_evals = evals / n;
  s.avg_seconds = secs / n;
  return s;
}

CampaignResult campaign(Method method, const SeededObjective& f, const Box& box,
                        const std::vector<Eigen::VectorXd>& starts, const CampaignSpec& spec, const Rounder& round,
                        int jobs) {
  if (static_cast<int>(starts.size()) < spec.runs) throw std::invalid_argument("fewer initial points than runs");
  CampaignResult result;
  result.method = method;
  result.runs.resize(static_cast<std::size_t>(spec.runs));
  parallel_for(result.runs.size(), jobs, [&](std::size_t i) {
    const std::uint64_t run_seed = derive_seed(spec.seed, i + 1);
    const Objective obj = [&](const Eigen::VectorXd& x, std::uint64_t stream) {
      return f(x, derive_seed(run_seed, stream));
    };
    const auto t0 = std::chrono::steady_clock::now();
    OptimizerResult opt;
    if (method == Method::TrustRegion) {
      TrustRegionConfig cfg = spec.trust;
      cfg.max_evals = spec.budget;
      opt = cobyla_style(obj, starts[i], box, cfg);
    } else {
      SpsaConfig cfg = spec.spsa;
      cfg.max_evals = spec.budget;
      cfg.mode = method == Method::DiscreteSpsa ? SpsaMode::Discrete : SpsaMode::Continuous;
      cfg.seed = derive_seed(run_seed, kFinalStream - 1);
      opt = spsa(obj, starts[i], box, cfg);
    }
    RunRecord& rec = result.runs[i];
    rec.run = static_cast<int>(i);
    rec.seed = run_seed;
    rec.initial.assign(starts[i].data(), starts[i].data() + starts[i].size());
    rec.final_point.assign(opt.x.data(), opt.x.data() + opt.x.size());
    rec.rounded = round(opt.x);
    Eigen::VectorXd xr(static_cast<Eigen::Index>(rec.rounded.size()));
    for (std::size_t d = 0; d < rec.rounded.size(); ++d) xr[static_cast<Eigen::Index>(d)] = rec.rounded[d];
    rec.objective = f(xr, derive_seed(run_seed, kFinalStream));
    rec.evals = opt.evals;
    rec.gain_a = opt.a;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  });
  result.summary = summarize(to_string(method), result.runs);
  return result;
}

}  // namespace qembed
