#pragma once

#include "ttsa/core.hpp"
#include "ttsa/mdp.hpp"
#include "ttsa/mixing.hpp"
#include "ttsa/trace.hpp"
#include "ttsa/trajectory.hpp"

#include <array>
#include <span>

namespace ttsa {

/// State features, one row per state, every row with Euclidean norm at most one.
struct LinearFeatureMap {
  RowMat phi;

  LinearFeatureMap() = default;
  explicit LinearFeatureMap(RowMat m) : phi(std::move(m)) {
    require(phi.rows() > 0 && phi.cols() > 0, ErrorKind::config, "empty feature matrix");
    require(max_row_norm(phi) <= 1.0 + 1e-12, ErrorKind::config, "feature rows must have norm <= 1");
  }
  std::size_t dim() const { return static_cast<std::size_t>(phi.cols()); }
  std::size_t n_rows() const { return static_cast<std::size_t>(phi.rows()); }
  auto row(std::size_t s) const { return phi.row(static_cast<Eigen::Index>(s)); }
};

/**
 * Closed-form off-policy evaluation quantities under the behavior stationary
 * distribution mu_b, with psi(s) = E_pi[phi(s') | s]:
 *
 *   A      = E[phi(s) (gamma psi(s) - phi(s))^T]
 *   b      = E[r_pi(s) phi(s)]
 *   Sigma  = E[phi phi^T] = -C
 *   B      = gamma E[psi(s) phi(s)^T]
 *
 * so that A theta + b = E[E_pi[delta | s] phi(s)] and theta* = -A^{-1} b.
 */
struct LinearTdcExact {
  double gamma = 0.0;
  Vec mu_b;
  Mat A;
  Vec b;
  Mat Sigma;
  Mat C;
  Mat B;
  Mat Sigma_inv;
  Vec theta_star;
  double lambda1 = 0.0;          // lambda_min(A^T Sigma^{-1} A)
  double lambda1_literal = 0.0;  // |lambda_max(A^T C^{-1} A)|
  double lambda2 = 0.0;          // lambda_min(Sigma)
  double lambda2_literal = 0.0;  // |lambda_max(C)|
  double rho_max = 0.0;
  double r_max = 0.0;
  double R_theta = 0.0;
  RowMat phi;
  Mat rho_table;  // pi(a|s) / pi_b(a|s), zero where pi_b vanishes

  std::size_t dim() const { return static_cast<std::size_t>(phi.cols()); }

  Vec residual(const Vec& theta) const { return A * theta + b; }
  Vec w_of_theta(const Vec& theta) const { return Sigma_inv * residual(theta); }
  double mspbe(const Vec& theta) const {
    const Vec e = residual(theta);
    return e.dot(Sigma_inv * e);
  }
  /// -1/2 grad J(theta) = (A theta + b) - B w(theta).
  Vec descent_direction(const Vec& theta) const { return residual(theta) - B * w_of_theta(theta); }
  Vec gradient(const Vec& theta) const { return -2.0 * descent_direction(theta); }
};

inline LinearTdcExact build_linear_exact(const MdpModel& mdp, const PolicyTable& behavior,
                                         const PolicyTable& target, const LinearFeatureMap& features) {
  mdp.validate();
  behavior.validate(mdp);
  target.validate(mdp);
  require(features.n_rows() == mdp.n_states, ErrorKind::dimension, "feature rows must match states");
  require(features.dim() <= mdp.n_states, ErrorKind::dimension, "more features than states");

  LinearTdcExact ex;
  ex.gamma = mdp.gamma;
  ex.phi = features.phi;
  ex.rho_max = max_importance_ratio(target, behavior);
  ex.r_max = mdp.r_max();
  ex.mu_b = stationary_distribution(induced_chain(mdp, behavior));

  const auto n = static_cast<Eigen::Index>(mdp.n_states);
  ex.rho_table = Mat::Zero(n, static_cast<Eigen::Index>(mdp.n_actions));
  for (Eigen::Index s = 0; s < n; ++s)
    for (Eigen::Index a = 0; a < ex.rho_table.cols(); ++a)
      if (behavior.probs(s, a) > 0) ex.rho_table(s, a) = target.probs(s, a) / behavior.probs(s, a);

  const Mat phi = ex.phi;
  const Mat psi = induced_chain(mdp, target) * phi;
  const Vec r_pi = policy_reward(mdp, target);
  const Mat D = ex.mu_b.asDiagonal();

  ex.Sigma = phi.transpose() * D * phi;
  ex.Sigma = 0.5 * (ex.Sigma + ex.Sigma.transpose());
  ex.C = -ex.Sigma;
  ex.A = phi.transpose() * D * (mdp.gamma * psi - phi);
  ex.b = phi.transpose() * D * r_pi;
  ex.B = mdp.gamma * psi.transpose() * D * phi;

  require(condition_number(ex.Sigma) <= kConditionCap, ErrorKind::singularity,
          "feature covariance is singular or ill-conditioned");
  ex.Sigma_inv = ex.Sigma.inverse();
  ex.theta_star = -guarded_solve(ex.A, ex.b, "A");

  Mat ata = ex.A.transpose() * ex.Sigma_inv * ex.A;
  ata = 0.5 * (ata + ata.transpose());
  ex.lambda1 = min_eigenvalue(ata);
  Mat atca = ex.A.transpose() * ex.C.inverse() * ex.A;
  atca = 0.5 * (atca + atca.transpose());
  ex.lambda1_literal = std::abs(max_eigenvalue(atca));
  ex.lambda2 = min_eigenvalue(ex.Sigma);
  ex.lambda2_literal = std::abs(max_eigenvalue(ex.C));
  ex.R_theta = std::max(ex.r_max / ex.lambda1, ex.theta_star.norm());
  return ex;
}

namespace detail {
inline void linear_accumulate(const LinearTdcExact& ex, const Transition& x, const Vec& theta, const Vec& w,
                              Vec& dtheta, Vec& dw) {
  const auto f = ex.phi.row(static_cast<Eigen::Index>(x.s));
  const auto fn = ex.phi.row(static_cast<Eigen::Index>(x.s_next));
  const double rho = ex.rho_table(static_cast<Eigen::Index>(x.s), static_cast<Eigen::Index>(x.a));
  const double delta = x.r + ex.gamma * fn.dot(theta) - f.dot(theta);
  const double fw = f.dot(w);
  dw.noalias() += (rho * delta - fw) * f.transpose();
  dtheta.noalias() += rho * delta * f.transpose() - rho * ex.gamma * fw * fn.transpose();
}
}  // namespace detail

/// One TDC update on a mini-batch; both directions are evaluated at (theta_t, w_t).
inline void linear_tdc_step(const LinearTdcExact& ex, Vec& theta, Vec& w, std::span<const Transition> batch,
                            double alpha, double beta) {
  require(!batch.empty(), ErrorKind::precondition, "empty batch");
  const auto d = static_cast<Eigen::Index>(ex.dim());
  Vec dtheta = Vec::Zero(d), dw = Vec::Zero(d);
  for (const auto& x : batch) detail::linear_accumulate(ex, x, theta, w, dtheta, dw);
  const double inv_m = 1.0 / static_cast<double>(batch.size());
  theta += alpha * inv_m * dtheta;
  w += beta * inv_m * dw;
}

inline TraceRecord linear_record(const LinearTdcExact& ex, std::uint64_t t, std::uint64_t samples,
                                 const Vec& theta, const Vec& w) {
  TraceRecord r;
  r.t = t;
  r.samples = samples;
  r.theta_err_sq = (theta - ex.theta_star).squaredNorm();
  r.tracking_err_sq = (w - ex.w_of_theta(theta)).squaredNorm();
  r.objective = ex.mspbe(theta);
  r.grad_norm_sq = ex.gradient(theta).squaredNorm();
  return r;
}

/**
 * Mini-batch TDC along a single behavior trajectory started from mu_b.
 * Batches are consecutive windows of that trajectory.
 */
inline RunTrace run_linear_tdc(const LinearTdcExact& ex, const MdpModel& mdp, const PolicyTable& behavior,
                               const TwoTimescaleConfig& cfg, std::uint64_t seed,
                               std::optional<Vec> theta0 = std::nullopt, std::optional<Vec> w0 = std::nullopt) {
  cfg.validate();
  const auto d = static_cast<Eigen::Index>(ex.dim());
  Vec theta = theta0.value_or(Vec::Zero(d));
  Vec w = w0.value_or(Vec::Zero(d));
  require(theta.size() == d && w.size() == d, ErrorKind::dimension, "initial iterate dimension");

  CounterRng init = make_stream(seed, Stream::init);
  TrajectoryStream stream(mdp, behavior, make_stream(seed, Stream::trajectory), draw_state(ex.mu_b, init));

  RunTrace run;
  run.algo = "linear-tdc";
  run.seed = seed;
  run.records.reserve(cfg.iterations + 1);
  run.records.push_back(linear_record(ex, 0, 0, theta, w));

  const double inv_m = 1.0 / static_cast<double>(cfg.batch_size);
  Vec dtheta(d), dw(d);
  for (std::uint64_t t = 0; t < cfg.iterations; ++t) {
    dtheta.setZero();
    dw.setZero();
    for (std::uint64_t j = 0; j < cfg.batch_size; ++j) detail::linear_accumulate(ex, stream.next(), theta, w, dtheta, dw);
    const Vec w_star_prev = ex.w_of_theta(theta);
    theta += cfg.alpha * inv_m * dtheta;
    w += cfg.beta * inv_m * dw;
    TraceRecord rec = linear_record(ex, t + 1, (t + 1) * cfg.batch_size, theta, w);
    rec.pre_tracking_err_sq = (w - w_star_prev).squaredNorm();
    run.records.push_back(rec);
  }
  run.theta_final = theta;
  run.w_final = w;
  run.theta_output = theta;
  return run;
}

/// Mixing-dependent constant of the linear TDC error floor.
inline double compute_A1(double lambda1, double lambda2, double rho_max, double r_max, double R_theta,
                         double alpha, double beta, double kappa, double rho) {
  const double rate = std::min(lambda2 * beta, lambda1 * alpha);
  const double lead = 256.0 * (4.0 * R_theta * R_theta * rho_max * rho_max + r_max * r_max) / rate;
  const double poly = 32.0 * alpha * alpha / (lambda2 * lambda2 * beta) + 2.0 * beta / lambda2 +
                      2.0 * beta * beta + 2.0 * alpha / lambda1 + 3.0 * alpha * alpha;
  return lead * poly * mixing_factor(kappa, rho);
}

/// Stepsizes, batch size and iteration count prescribed by the finite-sample guarantee.
struct Theorem1Config {
  double alpha = 0.0;
  double beta = 0.0;
  std::array<double, 6> alpha_terms{};
  double batch_lower_bound = 0.0;
  double A1 = 0.0;
  double mix = 1.0;
  double rate = 0.0;  // min{lambda1 alpha, lambda2 beta}
  double delta0 = 0.0;
  double target_eps = 0.0;
  double batch_size = 0.0;
  double iterations = 0.0;
  double total_samples = 0.0;

  TwoTimescaleConfig schedule() const {
    return {alpha, beta, static_cast<std::uint64_t>(batch_size), static_cast<std::uint64_t>(iterations)};
  }
  /// (1 - rate/8)^T Delta_0 + A1 / M for arbitrary (T, M).
  double bound(double T, double M) const { return std::pow(1.0 - rate / 8.0, T) * delta0 + A1 / M; }
};

inline constexpr double kDefaultBatchCap = 1e12;

inline Theorem1Config theorem1_config(double lambda1, double lambda2, double rho_max, double r_max,
                                      double R_theta, double kappa, double rho, double target_eps,
                                      double delta0, double batch_cap = kDefaultBatchCap) {
  require(lambda1 > 0 && lambda2 > 0 && rho_max > 0, ErrorKind::precondition, "constants must be positive");
  require(target_eps > 0, ErrorKind::config, "target_eps must be positive");
  require(rho >= 0 && rho < 1 && kappa > 0, ErrorKind::precondition, "mixing constants out of range");
  Theorem1Config c;
  c.target_eps = target_eps;
  c.delta0 = delta0;
  c.mix = mixing_factor(kappa, rho);
  c.beta = std::min(1.0 / (8.0 * lambda2), lambda2 / 4.0);
  const double b = c.beta, r2 = rho_max * rho_max;
  c.alpha_terms = {1.0 / (8.0 * lambda1),
                   lambda1 * lambda2 / 12.0,
                   std::sqrt(lambda2 * b) / (4.0 * std::sqrt(6.0) * rho_max),
                   lambda2 * std::sqrt(lambda2) * b / (16.0 * r2),
                   lambda1 * lambda2 * b / (64.0 * r2),
                   lambda1 * lambda2 * lambda2 * b / 768.0};
  c.alpha = *std::min_element(c.alpha_terms.begin(), c.alpha_terms.end());
  const double a = c.alpha;
  c.rate = std::min(lambda1 * a, lambda2 * b);
  c.batch_lower_bound = 128.0 * (r2 + 1.0 / (lambda2 * lambda2)) * c.mix *
                        std::max({1.0, (8.0 * b + 8.0 * lambda2 * b * b) / (lambda1 * lambda2 * a),
                                  (8.0 + 12.0 * lambda1 * a) / lambda1});
  c.A1 = compute_A1(lambda1, lambda2, rho_max, r_max, R_theta, a, b, kappa, rho);
  c.batch_size = std::max(std::ceil(c.batch_lower_bound), std::ceil(2.0 * c.A1 / target_eps));
  const double log_arg = 2.0 * delta0 / target_eps;
  c.iterations = log_arg > 1.0 ? std::ceil(8.0 / c.rate * std::log(log_arg)) : 0.0;
  c.total_samples = c.batch_size * c.iterations;
  require(c.batch_size <= batch_cap, ErrorKind::resource,
          "prescribed batch size " + std::to_string(c.batch_size) + " exceeds cap");
  return c;
}

inline Theorem1Config theorem1_config(const LinearTdcExact& ex, const MixingFit& mix, double target_eps,
                                      double delta0, double batch_cap = kDefaultBatchCap) {
  return theorem1_config(ex.lambda1, ex.lambda2, ex.rho_max, ex.r_max, ex.R_theta, mix.kappa, mix.rho,
                         target_eps, delta0, batch_cap);
}

/// Delta_0 = ||theta_0 - theta*||^2 + ||w_0 - w*(theta_0)||^2.
inline double linear_delta0(const LinearTdcExact& ex, const Vec& theta0, const Vec& w0) {
  return (theta0 - ex.theta_star).squaredNorm() + (w0 - ex.w_of_theta(theta0)).squaredNorm();
}

inline double mspbe(const LinearTdcExact& ex, const Vec& theta) { return ex.mspbe(theta); }
inline Vec w_of_theta(const LinearTdcExact& ex, const Vec& theta) { return ex.w_of_theta(theta); }
/// Returns -1/2 grad J(theta).
inline Vec tdc_gradient(const LinearTdcExact& ex, const Vec& theta) { return ex.descent_direction(theta); }

}  // namespace ttsa
