#pragma once

#include "ttsa/core.hpp"
#include "ttsa/mixing.hpp"
#include "ttsa/parallel.hpp"
#include "ttsa/rng.hpp"
#include "ttsa/trace.hpp"
#include "ttsa/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace ttsa {

// ---------------------------------------------------------------------------
// Mini-batch variance probe

struct VarianceProbeOptions {
  std::vector<std::size_t> Ms{10, 30, 100, 300, 1000};
  std::size_t reps = 2000;
  std::uint64_t seed = 0;
  /// Windows start from mu; otherwise from `start_state`.
  bool stationary_start = true;
  std::size_t start_state = 0;
  std::size_t jobs = 1;
  std::size_t mixing_horizon = 200;
};

struct VarianceProbeResult {
  std::vector<std::size_t> Ms;
  std::vector<double> empirical;  // mean over windows of ||X(M) - X~||^2
  std::vector<double> std_error;
  std::vector<double> bound;      // 8 C_x^2 mix / M
  std::size_t reps = 0;
  double C_x = 0.0;
  MixingFit mixing;
  LineFit slope;  // log empirical against log M

  bool within_bound(double sigmas = 3.0) const {
    for (std::size_t i = 0; i < Ms.size(); ++i)
      if (empirical[i] - sigmas * std_error[i] > bound[i]) return false;
    return true;
  }
};

/**
 * E||X(M) - X~||^2 for the average X(M) of X over M consecutive chain states, where
 * row s of `X` is X(s) flattened (matrices in any fixed order) and X~ = sum_s mu(s) X(s).
 */
inline VarianceProbeResult batch_variance_probe(const Mat& chain, const Vec& mu, const RowMat& X, double C_x,
                                                const VarianceProbeOptions& opt = {}) {
  const Eigen::Index n = chain.rows();
  require(chain.cols() == n && mu.size() == n && X.rows() == n, ErrorKind::dimension, "probe shape mismatch");
  require(!opt.Ms.empty() && opt.reps >= 2, ErrorKind::config, "probe needs batch sizes and at least 2 reps");
  require(max_row_norm(X) <= C_x * (1.0 + 1e-12), ErrorKind::precondition, "X(s) exceeds the claimed bound C_x");

  VarianceProbeResult res;
  res.Ms = opt.Ms;
  res.reps = opt.reps;
  res.C_x = C_x;
  res.mixing = fit_geometric_mixing(chain, mu, opt.mixing_horizon);
  const Vec x_bar = X.transpose() * mu;

  const std::size_t nm = opt.Ms.size();
  std::vector<double> dev(nm * opt.reps);
  const std::uint64_t base = stream_key(opt.seed, static_cast<std::uint64_t>(Stream::probe));
  parallel_for(nm * opt.reps, opt.jobs, [&](std::size_t task) {
    const std::size_t mi = task / opt.reps, rep = task % opt.reps;
    CounterRng rng(base ^ CounterRng::finalize((static_cast<std::uint64_t>(mi) << 40) + rep + 1));
    std::size_t s = opt.stationary_start ? draw_state(mu, rng) : opt.start_state;
    ChainWalker walker(chain, rng);
    Vec acc = Vec::Zero(X.cols());
    const std::size_t M = opt.Ms[mi];
    for (std::size_t j = 0; j < M; ++j) {
      acc += X.row(static_cast<Eigen::Index>(s)).transpose();
      s = walker.step(s);
    }
    dev[task] = (acc / static_cast<double>(M) - x_bar).squaredNorm();
  });

  std::vector<double> lx, ly;
  for (std::size_t mi = 0; mi < nm; ++mi) {
    double m = 0.0, q = 0.0;
    for (std::size_t r = 0; r < opt.reps; ++r) m += dev[mi * opt.reps + r];
    m /= static_cast<double>(opt.reps);
    for (std::size_t r = 0; r < opt.reps; ++r) q += (dev[mi * opt.reps + r] - m) * (dev[mi * opt.reps + r] - m);
    res.empirical.push_back(m);
    res.std_error.push_back(std::sqrt(q / static_cast<double>(opt.reps - 1) / static_cast<double>(opt.reps)));
    res.bound.push_back(8.0 * C_x * C_x * res.mixing.factor() / static_cast<double>(opt.Ms[mi]));
    if (m > 0) {
      lx.push_back(std::log(static_cast<double>(opt.Ms[mi])));
      ly.push_back(std::log(m));
    }
  }
  if (lx.size() >= 2) res.slope = fit_line(lx, ly);
  return res;
}

// ---------------------------------------------------------------------------
// Contraction fits

struct RateFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  double factor = 0.0;  // exp(slope): fitted per-iteration contraction
  double floor = 0.0;
  std::size_t first = 0;
  std::size_t last = 0;  // inclusive range of iterations used
};

/**
 * Fit log(delta_t - floor) against t from `burn_in` on. The floor is the mean of the
 * last 20% of the sequence, or zero when that tail is itself still decaying (second
 * half of the tail below half the first half). Points are used while the excess stays
 * above 100 times the tail's standard deviation.
 */
inline RateFit fit_contraction(const std::vector<double>& delta, std::size_t burn_in = 0) {
  const std::size_t n = delta.size();
  require(n >= 10 && burn_in + 5 < n, ErrorKind::insufficient_signal, "trace too short for a contraction fit");
  const std::size_t tail0 = n - std::max<std::size_t>(2, n / 5);
  const std::size_t mid = tail0 + (n - tail0) / 2;
  double m1 = 0.0, m2 = 0.0, mean = 0.0, var = 0.0;
  for (std::size_t t = tail0; t < mid; ++t) m1 += delta[t];
  for (std::size_t t = mid; t < n; ++t) m2 += delta[t];
  m1 /= double(mid - tail0);
  m2 /= double(n - mid);
  for (std::size_t t = tail0; t < n; ++t) mean += delta[t];
  mean /= double(n - tail0);
  for (std::size_t t = tail0; t < n; ++t) var += (delta[t] - mean) * (delta[t] - mean);
  const double sd = std::sqrt(var / double(n - tail0));

  RateFit fit;
  const bool decaying = m1 > 0 && m2 < 0.5 * m1;
  fit.floor = decaying ? 0.0 : mean;
  const double threshold = decaying ? 0.0 : 100.0 * sd;
  std::vector<double> xs, ys;
  fit.first = burn_in;
  for (std::size_t t = burn_in; t < tail0; ++t) {
    const double ex = delta[t] - fit.floor;
    if (!(ex > threshold) || !(ex > 0.0)) break;
    xs.push_back(double(t));
    ys.push_back(std::log(ex));
    fit.last = t;
  }
  require(xs.size() >= 5, ErrorKind::insufficient_signal, "trace is floor-dominated after burn-in");
  const LineFit lf = fit_line(xs, ys);
  fit.slope = lf.slope;
  fit.intercept = lf.intercept;
  fit.r_squared = std::clamp(lf.r_squared, 0.0, 1.0);
  fit.factor = std::exp(lf.slope);
  return fit;
}

/// Fit on the theta error of a (seed-averaged) trace.
inline RateFit fit_contraction(const std::vector<TraceRecord>& records, std::size_t burn_in = 0) {
  std::vector<double> d;
  d.reserve(records.size());
  for (const auto& r : records) {
    require(r.theta_err_sq.has_value(), ErrorKind::precondition, "trace has no theta error");
    d.push_back(*r.theta_err_sq);
  }
  return fit_contraction(d, burn_in);
}

inline RateFit fit_contraction(const RunTrace& trace, std::size_t burn_in = 0) {
  return fit_contraction(trace.records, burn_in);
}

// ---------------------------------------------------------------------------
// Tracking-error recursions on seed-averaged ensembles

/// Constants of the linear w-recursions.
struct LinearRecursionConstants {
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  double rho_max = 0.0;
  double r_max = 0.0;
  double R_theta = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
  double mix = 1.0;
  double M = 1.0;
  double alpha_bound = 0.0;  // largest compliant alpha
};

struct NonlinearRecursionConstants {
  double lambda_v = 0.0;
  double L_w = 0.0;
  double D_1 = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
  double mix = 1.0;
  double M = 1.0;
  double alpha_bound = 0.0;
};

struct GqRecursionConstants {
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  double rho_max = 0.0;
  double r_max = 0.0;
  double R_theta = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
  double mix = 1.0;
  double M = 1.0;
  double alpha_bound = 0.0;
};

enum class LinearRecursion {
  /// ||w_{t+1} - w*(theta_{t+1})||^2 against x_t and e_t.
  tracking,
  /// ||w_{t+1} - w*(theta_t)||^2: the w-step alone at frozen theta.
  one_step,
};

struct RecursionStep {
  std::size_t t = 0;
  double lhs = 0.0;
  double rhs = 0.0;
};

struct RecursionReport {
  std::string which;
  std::size_t checked = 0;
  std::size_t satisfied = 0;
  double fraction = 1.0;
  double worst_margin = 0.0;  // max (lhs - rhs) / max(rhs, tiny); positive means a violation
  bool compliant = true;      // alpha within the stepsize condition the inequality assumes
  std::vector<RecursionStep> steps;
};

namespace detail {
inline std::vector<TraceRecord> ensemble_mean(const std::vector<RunTrace>& runs) {
  require(runs.size() >= 20, ErrorKind::precondition, "recursion checks need at least 20 seeds");
  return average_traces(runs);
}

inline void score(RecursionReport& rep, std::size_t t, double lhs, double rhs) {
  rep.steps.push_back({t, lhs, rhs});
  ++rep.checked;
  // Both sides vanish on degenerate runs; round-off on a zero rhs is not a violation.
  const bool ok = lhs <= rhs * (1.0 + 1e-12) + 1e-300;
  if (ok) ++rep.satisfied;
  const double margin = (lhs - rhs) / std::max(std::abs(rhs), 1e-300);
  rep.worst_margin = rep.checked == 1 ? margin : std::max(rep.worst_margin, margin);
}

inline void finish(RecursionReport& rep) {
  rep.fraction = rep.checked ? double(rep.satisfied) / double(rep.checked) : 1.0;
  if (rep.checked == 0) rep.worst_margin = 0.0;
}
}  // namespace detail

/**
 * Linear tracking recursions, with x_t = ||w_t - w*(theta_t)||^2 and e_t = ||theta_t - theta*||^2:
 *
 *   tracking: x_{t+1} <= (1 - l2 b / 4 + 16 r^2 a^2 / (l2^2 b)) x_t + (96 a^2 / (l2^2 b) + l1 a / 4) e_t
 *                        + 32 (4 R^2 r^2 + rm^2)(32 a^2 / (l2^2 b) + 2 b / l2 + 2 b^2) mix / M
 *   one_step: ||w_{t+1} - w*(theta_t)||^2 <= (1 - l2 b / 2) x_t
 *                        + 128 (r^2 + 1 / l2^2)(2 b / l2 + 2 b^2) mix / M e_t
 *                        + 32 (4 R^2 r^2 + rm^2)(2 b / l2 + 2 b^2) mix / M
 */
inline RecursionReport tracking_recursion_check(const std::vector<RunTrace>& runs, const LinearRecursionConstants& k,
                                                LinearRecursion which = LinearRecursion::tracking) {
  const auto mean = detail::ensemble_mean(runs);
  RecursionReport rep;
  rep.which = which == LinearRecursion::tracking ? "linear" : "linear-one-step";
  rep.compliant = k.alpha <= k.alpha_bound * (1.0 + 1e-12);
  const double l1 = k.lambda1, l2 = k.lambda2, a = k.alpha, b = k.beta, r2 = k.rho_max * k.rho_max;
  const double noise = 32.0 * (4.0 * k.R_theta * k.R_theta * r2 + k.r_max * k.r_max) * k.mix / k.M;
  for (std::size_t t = 0; t + 1 < mean.size(); ++t) {
    const double x = mean[t].tracking_err_sq.value(), e = mean[t].theta_err_sq.value();
    if (which == LinearRecursion::tracking) {
      const double rhs = (1.0 - l2 * b / 4.0 + 16.0 * r2 * a * a / (l2 * l2 * b)) * x +
                         (96.0 * a * a / (l2 * l2 * b) + l1 * a / 4.0) * e +
                         noise * (32.0 * a * a / (l2 * l2 * b) + 2.0 * b / l2 + 2.0 * b * b);
      detail::score(rep, t, mean[t + 1].tracking_err_sq.value(), rhs);
    } else {
      const double inner = 2.0 * b / l2 + 2.0 * b * b;
      const double rhs = (1.0 - l2 * b / 2.0) * x + 128.0 * (r2 + 1.0 / (l2 * l2)) * inner * k.mix / k.M * e +
                         noise * inner;
      detail::score(rep, t, mean[t + 1].pre_tracking_err_sq.value(), rhs);
    }
  }
  detail::finish(rep);
  return rep;
}

/// x_t <= (1 - l_v b / 8) x_{t-1} + (2 L_w^2 a^2 / (l_v b)) ||grad J(theta_{t-1})||^2 + D_1 mix / M.
inline RecursionReport tracking_recursion_check(const std::vector<RunTrace>& runs,
                                                const NonlinearRecursionConstants& k) {
  const auto mean = detail::ensemble_mean(runs);
  RecursionReport rep;
  rep.which = "nonlinear";
  rep.compliant = k.alpha <= k.alpha_bound * (1.0 + 1e-12);
  const double lv = k.lambda_v, a = k.alpha, b = k.beta;
  for (std::size_t t = 1; t < mean.size(); ++t) {
    const double rhs = (1.0 - lv * b / 8.0) * mean[t - 1].tracking_err_sq.value() +
                       2.0 * k.L_w * k.L_w * a * a / (lv * b) * mean[t - 1].grad_norm_sq.value() +
                       k.D_1 * k.mix / k.M;
    detail::score(rep, t, mean[t].tracking_err_sq.value(), rhs);
  }
  detail::finish(rep);
  return rep;
}

/**
 * x_{t+1} <= (1 - l2 b / 8) x_t + (100 l1^2 a^2 / (l2^2 b)) ||grad J(theta_t)||^2
 *            + 32 (4 R^2 r^2 + rm^2)(32 a^2 / (l2^2 b) + 2 b / l2 + 2 b^2) mix / M.
 */
inline RecursionReport tracking_recursion_check(const std::vector<RunTrace>& runs, const GqRecursionConstants& k) {
  const auto mean = detail::ensemble_mean(runs);
  RecursionReport rep;
  rep.which = "greedy-gq";
  rep.compliant = k.alpha <= k.alpha_bound * (1.0 + 1e-12);
  const double l1 = k.lambda1, l2 = k.lambda2, a = k.alpha, b = k.beta, r2 = k.rho_max * k.rho_max;
  const double noise = 32.0 * (4.0 * k.R_theta * k.R_theta * r2 + k.r_max * k.r_max) *
                       (32.0 * a * a / (l2 * l2 * b) + 2.0 * b / l2 + 2.0 * b * b) * k.mix / k.M;
  for (std::size_t t = 0; t + 1 < mean.size(); ++t) {
    const double rhs = (1.0 - l2 * b / 8.0) * mean[t].tracking_err_sq.value() +
                       100.0 * l1 * l1 * a * a / (l2 * l2 * b) * mean[t].grad_norm_sq.value() + noise;
    detail::score(rep, t, mean[t + 1].tracking_err_sq.value(), rhs);
  }
  detail::finish(rep);
  return rep;
}

// ---------------------------------------------------------------------------
// Sample-complexity sweeps

struct SweepPoint {
  std::uint64_t T = 0;
  std::uint64_t M = 0;
  double samples() const { return double(T) * double(M); }
};

/**
 * `ladder(eps)` lists candidate schedules; `metric(point, eps, seed)` returns the per-seed
 * criterion value (final theta error for linear, stationarity at the output index otherwise).
 */
struct SweepRunner {
  std::string algo;
  std::function<std::vector<SweepPoint>(double)> ladder;
  std::function<double(const SweepPoint&, double, std::uint64_t)> metric;
};

struct SweepEntry {
  double eps = 0.0;
  bool reached = false;
  SweepPoint point;
  double metric = 0.0;  // seed average at `point`
  std::size_t evaluated = 0;
};

struct SweepResult {
  std::string algo;
  std::vector<SweepEntry> entries;
  LineFit fit;  // log TM against log(1/eps), reached entries only
  bool partial = false;
};

/**
 * For each eps (largest first) walk the ladder in order of T M, starting no lower
 * than the schedule found for the previous eps, and keep the first schedule whose
 * seed-averaged metric is at most eps. Schedules beyond `sample_cap` are not run.
 */
inline SweepResult complexity_sweep(const SweepRunner& runner, std::vector<double> eps_list,
                                    const std::vector<std::uint64_t>& seeds, double sample_cap = 1e10,
                                    std::size_t jobs = 1) {
  require(eps_list.size() >= 2, ErrorKind::config, "sweep needs at least two eps values");
  require(!seeds.empty(), ErrorKind::config, "sweep needs seeds");
  std::sort(eps_list.rbegin(), eps_list.rend());
  require(eps_list.front() >= 10.0 * eps_list.back() * (1.0 - 1e-12), ErrorKind::config,
          "eps list must span at least one decade");
  SweepResult res;
  res.algo = runner.algo;
  double floor_samples = 0.0;
  std::vector<double> lx, ly;
  for (double eps : eps_list) {
    SweepEntry entry;
    entry.eps = eps;
    auto ladder = runner.ladder(eps);
    std::stable_sort(ladder.begin(), ladder.end(),
                     [](const SweepPoint& a, const SweepPoint& b) { return a.samples() < b.samples(); });
    for (const auto& p : ladder) {
      if (p.samples() < floor_samples) continue;
      if (p.samples() > sample_cap) break;
      std::vector<double> vals(seeds.size());
      parallel_for(seeds.size(), jobs, [&](std::size_t i) { vals[i] = runner.metric(p, eps, seeds[i]); });
      double m = 0.0;
      for (double v : vals) m += v;
      m /= double(vals.size());
      ++entry.evaluated;
      entry.point = p;
      entry.metric = m;
      if (m <= eps) {
        entry.reached = true;
        break;
      }
    }
    if (entry.reached) {
      floor_samples = entry.point.samples();
      lx.push_back(std::log(1.0 / eps));
      ly.push_back(std::log(entry.point.samples()));
    } else {
      res.partial = true;
    }
    res.entries.push_back(entry);
  }
  if (lx.size() >= 2) res.fit = fit_line(lx, ly);
  return res;
}

}  // namespace ttsa
