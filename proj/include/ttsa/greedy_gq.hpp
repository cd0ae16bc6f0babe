#pragma once

#include "ttsa/core.hpp"
#include "ttsa/mdp.hpp"
#include "ttsa/mixing.hpp"
#include "ttsa/trace.hpp"
#include "ttsa/trajectory.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <limits>
#include <span>
#include <string>

namespace ttsa {

/// State-action features, row s * n_actions + a, every row with norm at most one.
struct StateActionFeatureMap {
  RowMat phi;
  std::size_t n_states = 0;
  std::size_t n_actions = 0;

  StateActionFeatureMap() = default;
  StateActionFeatureMap(RowMat m, std::size_t ns, std::size_t na) : phi(std::move(m)), n_states(ns), n_actions(na) {
    require(ns > 0 && na > 0, ErrorKind::config, "empty state or action set");
    require(static_cast<std::size_t>(phi.rows()) == ns * na, ErrorKind::dimension,
            "feature rows must equal n_states * n_actions");
    require(phi.cols() > 0, ErrorKind::config, "empty feature matrix");
    require(max_row_norm(phi) <= 1.0 + 1e-12, ErrorKind::config, "feature rows must have norm <= 1");
  }
  std::size_t dim() const { return static_cast<std::size_t>(phi.cols()); }
  auto row(std::size_t s, std::size_t a) const { return phi.row(static_cast<Eigen::Index>(s * n_actions + a)); }
};

/// pi_theta(a|s) proportional to exp(tau phi(s,a)^T theta), computed with max subtraction.
inline PolicyTable softmax_policy(const StateActionFeatureMap& f, const Vec& theta, double tau) {
  require(tau > 0 && std::isfinite(tau), ErrorKind::config, "temperature must be positive");
  require(theta.size() == f.phi.cols(), ErrorKind::dimension, "theta dimension");
  const auto ns = static_cast<Eigen::Index>(f.n_states), na = static_cast<Eigen::Index>(f.n_actions);
  const Vec logits = tau * (f.phi * theta);
  PolicyTable pi;
  pi.probs.resize(ns, na);
  for (Eigen::Index s = 0; s < ns; ++s) {
    const auto row = logits.segment(s * na, na);
    const double top = row.maxCoeff();
    double z = 0.0;
    for (Eigen::Index a = 0; a < na; ++a) z += pi.probs(s, a) = std::exp(row(a) - top);
    pi.probs.row(s) /= z;
  }
  return pi;
}

/// Exact quantities at one theta.
struct GqPoint {
  PolicyTable pi;
  RowMat phi_bar;  // sum_b pi(b|s) phi(s, b), one row per state
  Vec q;           // mu_b(s) pi_theta(a|s) per state-action row
  Mat A;
  Vec b;
  Mat B;           // gamma E_q[psi_bar phi^T]
  Vec residual;    // A theta + b
  Vec w;
  double J = 0.0;
  Vec half_grad;   // stated 1/2 grad J = -residual + B w
};

/**
 * Greedy-GQ objective pieces under behavior sampling. Samples (s, a) come from
 * d_b(s, a) = mu_b(s) pi_b(a|s); the ratio at the current pair reweights them to
 * q_theta(s, a) = mu_b(s) pi_theta(a|s). Sigma = E_{d_b}[phi phi^T] does not depend on theta.
 */
struct GreedyGqExact {
  StateActionFeatureMap features;
  PolicyTable behavior;
  double gamma = 0.0;
  double tau = 1.0;
  double r_max = 0.0;
  Vec mu_b;
  Vec d_b;
  RowMat P_sa;  // P(s' | s, a), row s * n_actions + a
  Vec r_sa;     // E[r | s, a]
  Mat Sigma;
  Mat C;
  Mat Sigma_inv;
  double lambda2 = 0.0;
  /// 1 / max over probed theta of lambda_min(A^T Sigma^-1 A), i.e. (max |lambda_max(A^T C^-1 A)|)^-1.
  double lambda1 = 0.0;
  /// 1 / min of the same; infinite once the softmax saturates somewhere on the probe ball.
  double lambda1_conservative = 0.0;
  double sigma_min = std::numeric_limits<double>::infinity();  // over probed theta
  double sigma_max = 0.0;
  double probe_radius = 0.0;
  double R_theta = 0.0;
  double cap_radius = 0.0;
  double rho_max = 0.0;  // sup of pi_theta / pi_b over the cap ball
  double L_J = 0.0;      // difference-quotient estimate of the stated gradient, before safety factor

  std::size_t dim() const { return features.dim(); }

  GqPoint at(const Vec& theta) const {
    GqPoint p;
    p.pi = softmax_policy(features, theta, tau);
    const auto ns = static_cast<Eigen::Index>(features.n_states), na = static_cast<Eigen::Index>(features.n_actions);
    const auto d = static_cast<Eigen::Index>(dim());
    p.phi_bar = RowMat::Zero(ns, d);
    p.q.resize(ns * na);
    for (Eigen::Index s = 0; s < ns; ++s)
      for (Eigen::Index a = 0; a < na; ++a) {
        p.phi_bar.row(s) += p.pi.probs(s, a) * features.phi.row(s * na + a);
        p.q(s * na + a) = mu_b(s) * p.pi.probs(s, a);
      }
    const Mat psi_bar = P_sa * p.phi_bar;  // E[phi_bar(s') | s, a]
    const Mat phi = features.phi;
    const Mat qphi = p.q.asDiagonal() * phi;
    p.A = qphi.transpose() * (gamma * psi_bar - phi);
    p.b = qphi.transpose() * r_sa;
    p.B = gamma * psi_bar.transpose() * qphi;
    p.residual = p.A * theta + p.b;
    p.w = Sigma_inv * p.residual;
    p.J = std::max(0.0, p.residual.dot(p.w));
    p.half_grad = -p.residual + p.B * p.w;
    return p;
  }

  /// sigma(theta) = lambda_min(A_theta^T Sigma^-1 A_theta).
  double sigma(const GqPoint& p) const {
    Mat m = p.A.transpose() * Sigma_inv * p.A;
    return min_eigenvalue(Mat(0.5 * (m + m.transpose())));
  }

  double rho(const PolicyTable& pi, std::size_t s, std::size_t a) const {
    const auto si = static_cast<Eigen::Index>(s), ai = static_cast<Eigen::Index>(a);
    return pi.probs(si, ai) / behavior.probs(si, ai);
  }
};

inline double gq_objective(const GreedyGqExact& ex, const Vec& theta) { return ex.at(theta).J; }
inline Vec gq_w_of_theta(const GreedyGqExact& ex, const Vec& theta) { return ex.at(theta).w; }
/// The stated gradient 2 (-(A theta + b) + B w(theta)); the stationarity measure of the analysis.
inline Vec gq_gradient(const GreedyGqExact& ex, const Vec& theta) { return 2.0 * ex.at(theta).half_grad; }

struct GqBuildOptions {
  std::size_t probe_count = 1000;
  std::uint64_t probe_seed = 0;
};

/// Upper bound on pi_theta(a|s) over ||theta|| <= R, from the worst logit gaps.
inline double softmax_sup(const StateActionFeatureMap& f, double tau, double R, std::size_t s, std::size_t a) {
  double denom = 1.0;
  for (std::size_t b = 0; b < f.n_actions; ++b)
    if (b != a) denom += std::exp(-tau * R * (f.row(s, b) - f.row(s, a)).norm());
  return 1.0 / denom;
}

/**
 * Fold `thetas` into the running lambda1 and L_J estimates. Call again with visited
 * iterates to widen the probe set; both estimates only move in the conservative direction.
 */
inline void gq_probe_constants(GreedyGqExact& ex, const std::vector<Vec>& thetas, CounterRng& rng) {
  const auto d = static_cast<Eigen::Index>(ex.dim());
  for (const Vec& th : thetas) {
    const GqPoint p = ex.at(th);
    const double sg = ex.sigma(p);
    ex.sigma_min = std::min(ex.sigma_min, sg);
    ex.sigma_max = std::max(ex.sigma_max, sg);
    Vec u(d);
    for (Eigen::Index i = 0; i < d; ++i) u(i) = 2.0 * rng.uniform() - 1.0;
    u *= 1e-4 * (1.0 + th.norm()) / std::max(u.norm(), 1e-300);
    const GqPoint p2 = ex.at(th + u);
    ex.L_J = std::max(ex.L_J, 2.0 * (p2.half_grad - p.half_grad).norm() / u.norm());
  }
  require(ex.sigma_max > 0, ErrorKind::singularity, "A_theta^T Sigma^-1 A_theta is singular on the whole probe grid");
  ex.lambda1 = 1.0 / ex.sigma_max;
  ex.lambda1_conservative = ex.sigma_min > 0 ? 1.0 / ex.sigma_min : std::numeric_limits<double>::infinity();
}

/// `count` points uniform in the ball of radius `radius`, plus the origin.
inline std::vector<Vec> ball_grid(Eigen::Index d, double radius, std::size_t count, CounterRng& rng) {
  std::vector<Vec> grid{Vec::Zero(d)};
  for (std::size_t k = 0; k < count; ++k) {
    Vec u(d);
    for (Eigen::Index i = 0; i < d; ++i) u(i) = 2.0 * rng.uniform() - 1.0;
    grid.push_back(u * (radius * std::pow(rng.uniform(), 1.0 / double(d)) / std::max(u.norm(), 1e-300)));
  }
  return grid;
}

/**
 * R_theta is the larger of r_max / lambda1 and r_max / ((1 - gamma) sqrt(lambda2)), the
 * parameter norm of any Q-hat whose d_b-norm stays within the range of true action values.
 * lambda1 is probed on the cap ball of radius 10 R_theta and rho_max is certified on it.
 */
inline GreedyGqExact build_greedy_gq_exact(const MdpModel& mdp, const PolicyTable& behavior,
                                           const StateActionFeatureMap& features, double tau,
                                           const GqBuildOptions& opt = {}) {
  mdp.validate();
  behavior.validate(mdp);
  require(tau > 0, ErrorKind::config, "temperature must be positive");
  require(features.n_states == mdp.n_states && features.n_actions == mdp.n_actions, ErrorKind::dimension,
          "feature map shape does not match the MDP");
  for (Eigen::Index s = 0; s < behavior.probs.rows(); ++s)
    for (Eigen::Index a = 0; a < behavior.probs.cols(); ++a)
      require(behavior.probs(s, a) > 0, ErrorKind::support,
              "behavior policy must give every action positive probability");

  GreedyGqExact ex;
  ex.features = features;
  ex.behavior = behavior;
  ex.gamma = mdp.gamma;
  ex.tau = tau;
  ex.r_max = mdp.r_max();
  ex.mu_b = stationary_distribution(induced_chain(mdp, behavior));
  const auto ns = static_cast<Eigen::Index>(mdp.n_states), na = static_cast<Eigen::Index>(mdp.n_actions);
  ex.P_sa.resize(ns * na, ns);
  ex.r_sa.resize(ns * na);
  ex.d_b.resize(ns * na);
  for (std::size_t s = 0; s < mdp.n_states; ++s)
    for (std::size_t a = 0; a < mdp.n_actions; ++a) {
      const auto row = static_cast<Eigen::Index>(s * mdp.n_actions + a);
      for (std::size_t s2 = 0; s2 < mdp.n_states; ++s2) ex.P_sa(row, static_cast<Eigen::Index>(s2)) = mdp.p(s, a, s2);
      ex.r_sa(row) = mdp.mean_reward(s, a);
      ex.d_b(row) = ex.mu_b(static_cast<Eigen::Index>(s)) * behavior(s, a);
    }
  const Mat phi = features.phi;
  ex.Sigma = phi.transpose() * ex.d_b.asDiagonal() * phi;
  ex.Sigma = 0.5 * (ex.Sigma + ex.Sigma.transpose());
  require(condition_number(ex.Sigma) <= kConditionCap, ErrorKind::singularity,
          "state-action feature covariance is singular or ill-conditioned");
  ex.C = -ex.Sigma;
  ex.Sigma_inv = ex.Sigma.inverse();
  ex.lambda2 = min_eigenvalue(ex.Sigma);

  const double value_scale = ex.r_max > 0 ? ex.r_max / ((1.0 - ex.gamma) * std::sqrt(ex.lambda2)) : 1.0;
  CounterRng rng = make_stream(opt.probe_seed, Stream::probe);
  const auto d = static_cast<Eigen::Index>(features.dim());
  ex.probe_radius = 10.0 * value_scale;
  gq_probe_constants(ex, ball_grid(d, ex.probe_radius, opt.probe_count, rng), rng);
  ex.R_theta = std::max(ex.r_max / ex.lambda1, value_scale);
  ex.cap_radius = 10.0 * ex.R_theta;
  if (ex.cap_radius > ex.probe_radius) {
    ex.probe_radius = ex.cap_radius;
    gq_probe_constants(ex, ball_grid(d, ex.probe_radius, opt.probe_count, rng), rng);
  }
  for (std::size_t s = 0; s < mdp.n_states; ++s)
    for (std::size_t a = 0; a < mdp.n_actions; ++a)
      ex.rho_max = std::max(ex.rho_max, softmax_sup(features, tau, ex.cap_radius, s, a) / behavior(s, a));
  return ex;
}

namespace detail {
struct GqStepCache {
  PolicyTable pi;
  RowMat phi_bar;
  Vec q_bar;  // phi_bar(s)^T theta
};

inline GqStepCache gq_cache(const GreedyGqExact& ex, const Vec& theta) {
  GqStepCache c;
  c.pi = softmax_policy(ex.features, theta, ex.tau);
  const auto ns = static_cast<Eigen::Index>(ex.features.n_states), na = static_cast<Eigen::Index>(ex.features.n_actions);
  c.phi_bar = RowMat::Zero(ns, theta.size());
  for (Eigen::Index s = 0; s < ns; ++s)
    for (Eigen::Index a = 0; a < na; ++a) c.phi_bar.row(s) += c.pi.probs(s, a) * ex.features.phi.row(s * na + a);
  c.q_bar = c.phi_bar * theta;
  return c;
}

inline void gq_accumulate(const GreedyGqExact& ex, const GqStepCache& c, const Transition& x, const Vec& theta,
                          const Vec& w, bool sampled_next, Vec& dtheta, Vec& dw) {
  const auto f = ex.features.row(x.s, x.a);
  const double fw = f.dot(w);
  const double ft = f.dot(theta);
  const double rho = ex.rho(c.pi, x.s, x.a);
  const double delta = x.r + ex.gamma * c.q_bar(static_cast<Eigen::Index>(x.s_next)) - ft;
  dw.noalias() += (rho * delta - fw) * f.transpose();
  if (!sampled_next) {
    dtheta.noalias() += rho * delta * f.transpose() - rho * ex.gamma * fw * c.phi_bar.row(static_cast<Eigen::Index>(x.s_next)).transpose();
  } else {
    const auto fn = ex.features.row(x.s_next, x.a_next);
    const double rho_n = ex.rho(c.pi, x.s_next, x.a_next);
    const double delta_n = x.r + ex.gamma * fn.dot(theta) - ft;
    dtheta.noalias() += rho_n * (delta_n * f.transpose() - ex.gamma * fw * fn.transpose());
  }
}
}  // namespace detail

/**
 * One Greedy-GQ update. The default theta-direction uses the expected next feature
 * under pi_theta; `sampled_next` uses the sampled next pair and its ratio instead.
 */
inline void greedy_gq_step(const GreedyGqExact& ex, Vec& theta, Vec& w, std::span<const Transition> batch,
                           double alpha, double beta, bool sampled_next = false) {
  require(!batch.empty(), ErrorKind::precondition, "empty batch");
  const detail::GqStepCache c = detail::gq_cache(ex, theta);
  const auto d = static_cast<Eigen::Index>(ex.dim());
  Vec dtheta = Vec::Zero(d), dw = Vec::Zero(d);
  for (const auto& x : batch) detail::gq_accumulate(ex, c, x, theta, w, sampled_next, dtheta, dw);
  const double inv_m = 1.0 / static_cast<double>(batch.size());
  theta += alpha * inv_m * dtheta;
  w += beta * inv_m * dw;
}

inline TraceRecord gq_record(const GqPoint& p, std::uint64_t t, std::uint64_t samples, const Vec& w) {
  TraceRecord r;
  r.t = t;
  r.samples = samples;
  r.tracking_err_sq = (w - p.w).squaredNorm();
  r.objective = p.J;
  r.grad_norm_sq = 4.0 * p.half_grad.squaredNorm();
  return r;
}

struct GqRunOptions {
  bool sampled_next = false;
  /// When a visited ratio exceeds rho_max: project theta onto the cap ball (true) or throw.
  bool project_on_violation = true;
};

/**
 * Greedy-GQ along one behavior trajectory from mu_b. The ratio bound is checked on
 * every batch before the update; a violation is logged in `events`.
 */
inline RunTrace run_greedy_gq(const GreedyGqExact& ex, const MdpModel& mdp, const TwoTimescaleConfig& cfg,
                              std::uint64_t seed, std::optional<Vec> theta0 = std::nullopt,
                              std::optional<Vec> w0 = std::nullopt, const GqRunOptions& opt = {}) {
  cfg.validate();
  require(cfg.iterations >= 1, ErrorKind::config, "iterations must be at least 1");
  const auto d = static_cast<Eigen::Index>(ex.dim());
  Vec theta = theta0.value_or(Vec::Zero(d));
  Vec w = w0.value_or(Vec::Zero(d));
  require(theta.size() == d && w.size() == d, ErrorKind::dimension, "initial iterate dimension");

  CounterRng pick = make_stream(seed, Stream::output_index);
  const std::uint64_t out_idx = 1 + pick.below(cfg.iterations);
  CounterRng init = make_stream(seed, Stream::init);
  TrajectoryStream stream(mdp, ex.behavior, make_stream(seed, Stream::trajectory), draw_state(ex.mu_b, init));

  RunTrace run;
  run.algo = "greedy-gq";
  run.seed = seed;
  run.output_index = out_idx;
  run.records.reserve(cfg.iterations + 1);
  run.records.push_back(gq_record(ex.at(theta), 0, 0, w));

  std::vector<Transition> batch(cfg.batch_size);
  const double inv_m = 1.0 / static_cast<double>(cfg.batch_size);
  Vec dtheta(d), dw(d);
  for (std::uint64_t t = 0; t < cfg.iterations; ++t) {
    for (auto& x : batch) x = stream.next();
    detail::GqStepCache c = detail::gq_cache(ex, theta);
    double worst = 0.0;
    for (const auto& x : batch) {
      worst = std::max(worst, ex.rho(c.pi, x.s, x.a));
      if (opt.sampled_next) worst = std::max(worst, ex.rho(c.pi, x.s_next, x.a_next));
    }
    if (worst > ex.rho_max * (1.0 + 1e-12)) {
      const std::string msg = "iteration " + std::to_string(t) + ": ratio " + std::to_string(worst) +
                              " exceeds rho_max " + std::to_string(ex.rho_max);
      require(opt.project_on_violation, ErrorKind::assumption, msg);
      if (theta.norm() > ex.cap_radius) theta *= ex.cap_radius / theta.norm();
      run.events.push_back(msg + "; theta projected onto the cap ball");
      c = detail::gq_cache(ex, theta);
    }
    dtheta.setZero();
    dw.setZero();
    for (const auto& x : batch) detail::gq_accumulate(ex, c, x, theta, w, opt.sampled_next, dtheta, dw);
    const Vec w_star_prev = ex.at(theta).w;
    theta += cfg.alpha * inv_m * dtheta;
    w += cfg.beta * inv_m * dw;
    TraceRecord rec = gq_record(ex.at(theta), t + 1, (t + 1) * cfg.batch_size, w);
    rec.pre_tracking_err_sq = (w - w_star_prev).squaredNorm();
    run.records.push_back(rec);
    if (t + 1 == out_idx) run.theta_output = theta;
  }
  run.theta_final = theta;
  run.w_final = w;
  return run;
}

/// C_2 of the Greedy-GQ analysis.
inline double compute_C2(double rho_max, double R_theta, double r_max) {
  const double r1 = rho_max + 1.0;
  return 32.0 * (2.0 * r1 * r1 * r1 * r1 * R_theta * R_theta + (r_max * r_max + 1.0) * rho_max * rho_max);
}

inline double compute_C1(double rho_max, double R_theta, double r_max, double lambda2, double alpha, double beta) {
  const double r2 = rho_max * rho_max;
  return compute_C2(rho_max, R_theta, r_max) +
         192.0 * r2 / (lambda2 * beta) * (4.0 * R_theta * R_theta * r2 + r_max * r_max) *
             (32.0 * alpha * alpha / (lambda2 * lambda2 * beta) + 2.0 * beta / lambda2 + 2.0 * beta * beta);
}

inline double compute_C1(const GreedyGqExact& ex, double alpha, double beta) {
  return compute_C1(ex.rho_max, ex.R_theta, ex.r_max, ex.lambda2, alpha, beta);
}

struct Theorem3Config {
  double alpha = 0.0;
  double beta = 0.0;
  std::array<double, 3> alpha_terms{};
  double L_J = 0.0;  // value used, safety factor included
  double mix = 1.0;
  double C1 = 0.0;
  double C2 = 0.0;
  double batch_lower_bound = 0.0;
  double J0 = 0.0;
  double w0_err_sq = 0.0;
  double lambda2 = 0.0;
  double rho_max = 0.0;
  double target_eps = 0.0;
  double batch_size = 0.0;
  double iterations = 0.0;
  double total_samples = 0.0;

  TwoTimescaleConfig schedule() const {
    return {alpha, beta, static_cast<std::uint64_t>(batch_size), static_cast<std::uint64_t>(iterations)};
  }
  /// 8 (J0 - J_T) / (alpha T) + 192 rho^2 ||w0 - w(theta0)||^2 / (lambda2 beta T) + 32 C1 mix / M.
  double bound(double T, double M, double J_T = 0.0) const {
    return 8.0 * (J0 - J_T) / (alpha * T) + 192.0 * rho_max * rho_max / (lambda2 * beta) * w0_err_sq / T +
           32.0 * C1 * mix / M;
  }
};

inline Theorem3Config theorem3_config(double lambda1, double lambda2, double rho_max, double r_max, double R_theta,
                                      double L_J, double kappa, double rho, double target_eps, double J0,
                                      double w0_err_sq, double batch_cap = 1e12) {
  require(lambda1 > 0 && lambda2 > 0 && rho_max > 0 && L_J > 0, ErrorKind::precondition,
          "constants must be positive");
  require(target_eps > 0, ErrorKind::config, "target_eps must be positive");
  require(rho >= 0 && rho < 1 && kappa > 0, ErrorKind::precondition, "mixing constants out of range");
  Theorem3Config c;
  c.L_J = L_J;
  c.mix = mixing_factor(kappa, rho);
  c.J0 = J0;
  c.w0_err_sq = w0_err_sq;
  c.lambda2 = lambda2;
  c.rho_max = rho_max;
  c.target_eps = target_eps;
  c.beta = std::min(lambda2 / 4.0, 8.0 / lambda2);
  const double b = c.beta, r2 = rho_max * rho_max;
  c.alpha_terms = {1.0 / (8.0 * L_J), lambda2 * std::sqrt(lambda2) * b / (8.0 * std::sqrt(2.0) * rho_max),
                   L_J * lambda2 * lambda2 * lambda2 * b * b / (5312.0 * r2 * lambda1 * lambda1)};
  c.alpha = *std::min_element(c.alpha_terms.begin(), c.alpha_terms.end());
  const double a = c.alpha;
  const double r1 = rho_max + 1.0;
  c.batch_lower_bound =
      c.mix * std::max(128.0 * (r2 + 1.0 / (lambda2 * lambda2)) *
                           (1.0 + lambda2 * lambda2 * b / (4.0 * a * a) * (2.0 * b / lambda2 + 2.0 * b * b)),
                       b * b * lambda2 * lambda2 * lambda2 * r1 * r1 * r1 * r1 / (r2 * a * a));
  c.C2 = compute_C2(rho_max, R_theta, r_max);
  c.C1 = compute_C1(rho_max, R_theta, r_max, lambda2, a, b);
  c.batch_size = std::max(std::ceil(c.batch_lower_bound), std::ceil(64.0 * c.C1 * c.mix / target_eps));
  c.iterations = std::max(
      1.0, std::ceil(2.0 / target_eps * (8.0 * J0 / a + 192.0 * r2 * w0_err_sq / (lambda2 * b))));
  c.total_samples = c.batch_size * c.iterations;
  require(c.batch_size <= batch_cap, ErrorKind::resource,
          "prescribed batch size " + std::to_string(c.batch_size) + " exceeds cap");
  return c;
}

/// Safety factor on the estimated L_J.
inline constexpr double kGqLipschitzSafety = 2.0;

inline Theorem3Config theorem3_config(const GreedyGqExact& ex, const MixingFit& mix, double target_eps,
                                      const Vec& theta0, const Vec& w0, double batch_cap = 1e12) {
  const GqPoint p = ex.at(theta0);
  return theorem3_config(ex.lambda1, ex.lambda2, ex.rho_max, ex.r_max, ex.R_theta,
                         kGqLipschitzSafety * std::max(ex.L_J, 1e-12), mix.kappa, mix.rho, target_eps, p.J,
                         (w0 - p.w).squaredNorm(), batch_cap);
}

/// Relative gap between the stated gradient and central differences of the objective.
inline double gq_gradient_discrepancy(const GreedyGqExact& ex, const Vec& theta, double h = 1e-6) {
  Vec fd(theta.size());
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    Vec tp = theta, tm = theta;
    tp(i) += h;
    tm(i) -= h;
    fd(i) = (gq_objective(ex, tp) - gq_objective(ex, tm)) / (2.0 * h);
  }
  return (gq_gradient(ex, theta) - fd).norm() / std::max(fd.norm(), 1e-300);
}

}  // namespace ttsa
