#pragma once

#include "ttsa/core.hpp"
#include "ttsa/mdp.hpp"
#include "ttsa/mixing.hpp"
#include "ttsa/trace.hpp"
#include "ttsa/trajectory.hpp"
#include "ttsa/value_models.hpp"

#include <array>
#include <limits>
#include <span>
#include <string>

namespace ttsa {

/// Everything the exact oracles need at one theta.
struct NonlinearPoint {
  ModelEval eval;
  Vec delta_bar;  // E[delta(theta) | s]
  Mat gram;       // E[phi phi^T]
  Vec drift;      // E[delta phi]
  Mat cross;      // E[phi(s') phi(s)^T]
  Vec w;          // gram^{-1} drift
  double J = 0.0;
};

/**
 * On-policy exact quantities for a smooth value model. All expectations are under
 * the stationary distribution mu of the chain induced by the evaluated policy.
 */
template <ValueModel Model>
struct NonlinearExact {
  Model model;
  double gamma = 0.0;
  double r_max = 0.0;
  Vec mu;
  Mat P;
  Vec r_pi;
  ModelConstants declared;

  std::size_t dim() const { return model.dim(); }

  NonlinearPoint at(const Vec& theta) const {
    NonlinearPoint p;
    p.eval = evaluate(model, theta);
    const Mat phi = p.eval.phi;
    p.delta_bar = r_pi + gamma * (P * p.eval.v) - p.eval.v;
    const Mat dphi = mu.asDiagonal() * phi;
    p.gram = phi.transpose() * dphi;
    p.gram = 0.5 * (p.gram + p.gram.transpose());
    p.drift = dphi.transpose() * p.delta_bar;
    p.cross = (P * phi).transpose() * dphi;
    require(condition_number(p.gram) <= kConditionCap, ErrorKind::singularity,
            "feature Gram matrix is singular or ill-conditioned at this theta");
    p.w = p.gram.ldlt().solve(p.drift);
    p.J = std::max(0.0, p.drift.dot(p.w));
    return p;
  }

  /// E[(delta - phi^T u) H u].
  Vec h(const NonlinearPoint& p, const Vec& u) const {
    Vec out = Vec::Zero(static_cast<Eigen::Index>(dim()));
    if (p.eval.zero_hessian) return out;
    for (Eigen::Index s = 0; s < mu.size(); ++s) {
      const double coef = mu(s) * (p.delta_bar(s) - p.eval.phi.row(s).dot(u));
      out.noalias() += coef * (p.eval.hess[static_cast<std::size_t>(s)] * u);
    }
    return out;
  }

  /// -1/2 grad J = drift - gamma cross w(theta) - h(theta, w(theta)).
  Vec descent(const NonlinearPoint& p) const { return p.drift - gamma * p.cross * p.w - h(p, p.w); }
  Vec gradient(const NonlinearPoint& p) const { return -2.0 * descent(p); }

  Vec w_of_theta(const Vec& theta) const { return at(theta).w; }
  double J(const Vec& theta) const { return at(theta).J; }
  Vec gradient(const Vec& theta) const { return gradient(at(theta)); }
};

template <ValueModel Model>
NonlinearExact<Model> build_nonlinear_exact(const MdpModel& mdp, const PolicyTable& pi, Model model) {
  mdp.validate();
  pi.validate(mdp);
  require(model.n_states() == mdp.n_states, ErrorKind::dimension, "model states must match the MDP");
  NonlinearExact<Model> ex;
  ex.model = std::move(model);
  ex.gamma = mdp.gamma;
  ex.r_max = mdp.r_max();
  ex.P = induced_chain(mdp, pi);
  ex.mu = stationary_distribution(ex.P);
  ex.r_pi = policy_reward(mdp, pi);
  ex.declared = ex.model.declared(ex.mu);
  return ex;
}

template <ValueModel Model>
Vec w_of_theta_nl(const NonlinearExact<Model>& ex, const Vec& theta) { return ex.w_of_theta(theta); }

template <ValueModel Model>
double nonlinear_J(const NonlinearExact<Model>& ex, const Vec& theta) { return ex.J(theta); }

/// Full gradient of J.
template <ValueModel Model>
Vec nonlinear_grad(const NonlinearExact<Model>& ex, const Vec& theta) { return ex.gradient(theta); }

template <ValueModel Model>
Vec h_term(const NonlinearExact<Model>& ex, const Vec& theta, const Vec& u) { return ex.h(ex.at(theta), u); }

/// Single-sample h_j(theta, u) = (delta_j - phi(s_j)^T u) H(s_j) u.
inline Vec h_sample(const ModelEval& e, double gamma, const Transition& x, const Vec& u) {
  const auto s = static_cast<Eigen::Index>(x.s);
  if (e.zero_hessian) return Vec::Zero(u.size());
  const double delta = x.r + gamma * e.v(static_cast<Eigen::Index>(x.s_next)) - e.v(s);
  return (delta - e.phi.row(s).dot(u)) * (e.hess[x.s] * u);
}

/// theta-direction g(theta, w, x) of a single transition, before averaging.
inline Vec nonlinear_sample_direction(const ModelEval& e, double gamma, const Transition& x, const Vec& w) {
  const auto s = static_cast<Eigen::Index>(x.s);
  const auto sn = static_cast<Eigen::Index>(x.s_next);
  const double delta = x.r + gamma * e.v(sn) - e.v(s);
  const double fw = e.phi.row(s).dot(w);
  Vec g = delta * e.phi.row(s).transpose() - gamma * fw * e.phi.row(sn).transpose();
  if (!e.zero_hessian) g.noalias() -= (delta - fw) * (e.hess[x.s] * w);
  return g;
}

namespace detail {
inline void nonlinear_accumulate(const ModelEval& e, double gamma, const Transition& x, const Vec& w,
                                 Vec& dtheta, Vec& dw) {
  const auto s = static_cast<Eigen::Index>(x.s);
  const auto sn = static_cast<Eigen::Index>(x.s_next);
  const double delta = x.r + gamma * e.v(sn) - e.v(s);
  const double fw = e.phi.row(s).dot(w);
  dw.noalias() += (delta - fw) * e.phi.row(s).transpose();
  dtheta.noalias() += delta * e.phi.row(s).transpose() - gamma * fw * e.phi.row(sn).transpose();
  if (!e.zero_hessian) dtheta.noalias() -= (delta - fw) * (e.hess[x.s] * w);
}
}  // namespace detail

/// One nonlinear TDC update; the model is evaluated once at theta_t for the whole batch.
template <ValueModel Model>
void nonlinear_tdc_step(const Model& model, double gamma, Vec& theta, Vec& w, std::span<const Transition> batch,
                        double alpha, double beta) {
  require(!batch.empty(), ErrorKind::precondition, "empty batch");
  const ModelEval e = evaluate(model, theta);
  const auto d = static_cast<Eigen::Index>(model.dim());
  Vec dtheta = Vec::Zero(d), dw = Vec::Zero(d);
  for (const auto& x : batch) detail::nonlinear_accumulate(e, gamma, x, w, dtheta, dw);
  const double inv_m = 1.0 / static_cast<double>(batch.size());
  theta += alpha * inv_m * dtheta;
  w += beta * inv_m * dw;
}

template <ValueModel Model>
TraceRecord nonlinear_record(const NonlinearExact<Model>& ex, const NonlinearPoint& p, std::uint64_t t,
                             std::uint64_t samples, const Vec& w) {
  TraceRecord r;
  r.t = t;
  r.samples = samples;
  r.tracking_err_sq = (w - p.w).squaredNorm();
  r.objective = p.J;
  r.grad_norm_sq = ex.gradient(p).squaredNorm();
  return r;
}

/**
 * Nonlinear TDC along one on-policy trajectory started from mu. The output iterate
 * is theta at an index drawn uniformly from {1..T}. With `guard` set, a Gram matrix
 * whose smallest eigenvalue drops below lambda_v / 2 aborts the run.
 */
template <ValueModel Model>
RunTrace run_nonlinear_tdc(const NonlinearExact<Model>& ex, const MdpModel& mdp, const PolicyTable& pi,
                           const TwoTimescaleConfig& cfg, std::uint64_t seed,
                           std::optional<Vec> theta0 = std::nullopt, std::optional<Vec> w0 = std::nullopt,
                           bool guard = true) {
  cfg.validate();
  require(cfg.iterations >= 1, ErrorKind::config, "iterations must be at least 1");
  const auto d = static_cast<Eigen::Index>(ex.dim());
  Vec theta = theta0.value_or(Vec::Zero(d));
  Vec w = w0.value_or(Vec::Zero(d));
  require(theta.size() == d && w.size() == d, ErrorKind::dimension, "initial iterate dimension");

  CounterRng pick = make_stream(seed, Stream::output_index);
  const std::uint64_t out_idx = 1 + pick.below(cfg.iterations);
  CounterRng init = make_stream(seed, Stream::init);
  TrajectoryStream stream(mdp, pi, make_stream(seed, Stream::trajectory), draw_state(ex.mu, init));

  const double floor = 0.5 * ex.declared.lambda_v;
  auto check = [&](const NonlinearPoint& p, std::uint64_t t) {
    if (!guard) return;
    const double lam = min_eigenvalue(p.gram);
    require(lam >= floor, ErrorKind::assumption,
            "Gram eigenvalue " + std::to_string(lam) + " below lambda_v/2 at iteration " + std::to_string(t));
  };

  RunTrace run;
  run.algo = "nonlinear-tdc";
  run.seed = seed;
  run.output_index = out_idx;
  run.records.reserve(cfg.iterations + 1);
  NonlinearPoint p = ex.at(theta);
  check(p, 0);
  run.records.push_back(nonlinear_record(ex, p, 0, 0, w));

  const double inv_m = 1.0 / static_cast<double>(cfg.batch_size);
  Vec dtheta(d), dw(d);
  for (std::uint64_t t = 0; t < cfg.iterations; ++t) {
    dtheta.setZero();
    dw.setZero();
    for (std::uint64_t j = 0; j < cfg.batch_size; ++j)
      detail::nonlinear_accumulate(p.eval, ex.gamma, stream.next(), w, dtheta, dw);
    const Vec w_star_prev = p.w;
    theta += cfg.alpha * inv_m * dtheta;
    w += cfg.beta * inv_m * dw;
    p = ex.at(theta);
    check(p, t + 1);
    TraceRecord rec = nonlinear_record(ex, p, t + 1, (t + 1) * cfg.batch_size, w);
    rec.pre_tracking_err_sq = (w - w_star_prev).squaredNorm();
    run.records.push_back(rec);
    if (t + 1 == out_idx) run.theta_output = theta;
  }
  run.theta_final = theta;
  run.w_final = w;
  return run;
}

/// Model constants plus the derived constants of the nonlinear analysis.
struct SmoothnessLedger {
  ModelConstants model;
  double gamma = 0.0;
  double r_max = 0.0;
  double L_J = 0.0;
  double L_e = 0.0;
  double R_w = 0.0;
  double L_w = 0.0;
  double C_g = 0.0;
  double C_f = 0.0;
  // Stepsize dependent; filled by theorem2_config.
  double D_1 = 0.0;
  double B_1 = 0.0;
  double B_2 = 0.0;
};

inline double compute_Rw(const ModelConstants& k, double r_max) {
  return k.C_phi * (r_max + 2.0 * k.C_v) / k.lambda_v;
}

/// Lipschitz modulus of theta -> w(theta).
inline double compute_Lw(const ModelConstants& k, double r_max, double gamma) {
  const double lv = k.lambda_v;
  const double e = r_max + (1.0 + gamma) * k.C_v;
  return 2.0 * k.C_phi * k.L_phi / (lv * lv) * e + (k.L_v * k.C_phi * (1.0 + gamma) + k.L_phi * e) / lv;
}

/// Bound on the single-sample direction g(theta, w(theta), x).
inline double compute_Cg(const ModelConstants& k, double r_max, double gamma, double R_w) {
  const double e = r_max + (gamma + 1.0) * k.C_v;
  return e * k.C_phi + gamma * k.C_phi * k.C_phi * R_w + (e + k.C_phi * R_w) * k.D_v * R_w;
}

inline double compute_Cf(const ModelConstants& k, double r_max, double R_w) {
  const double c2 = k.C_phi * k.C_phi;
  return 6.0 * (c2 * (r_max + 2.0 * k.C_v) * (r_max + 2.0 * k.C_v) + c2 * c2 * R_w);
}

/// Fill the stepsize-free part of the ledger from model constants and estimated L_J, L_e.
inline SmoothnessLedger make_ledger(const ModelConstants& k, double r_max, double gamma, double L_J, double L_e) {
  require(k.lambda_v > 0 && k.C_phi > 0, ErrorKind::precondition, "lambda_v and C_phi must be positive");
  require(L_J > 0 && L_e > 0, ErrorKind::precondition, "L_J and L_e must be positive");
  SmoothnessLedger l;
  l.model = k;
  l.gamma = gamma;
  l.r_max = r_max;
  l.L_J = L_J;
  l.L_e = L_e;
  l.R_w = compute_Rw(k, r_max);
  l.L_w = compute_Lw(k, r_max, gamma);
  l.C_g = compute_Cg(k, r_max, gamma, l.R_w);
  l.C_f = compute_Cf(k, r_max, l.R_w);
  return l;
}

struct Theorem2Config {
  SmoothnessLedger ledger;
  double alpha = 0.0;
  double beta = 0.0;
  std::array<double, 3> alpha_terms{};
  double mix = 1.0;
  double J0 = 0.0;
  double w0_err_sq = 0.0;
  double target_eps = 0.0;
  double tracking_batch_lower_bound = 0.0;  // batch size the w-recursion needs
  double batch_size = 0.0;
  double iterations = 0.0;
  double total_samples = 0.0;

  TwoTimescaleConfig schedule() const {
    return {alpha, beta, static_cast<std::uint64_t>(batch_size), static_cast<std::uint64_t>(iterations)};
  }
  /// 8 J0 / (alpha T) + B1 ||w0 - w(theta0)||^2 / T + B2 / M.
  double bound(double T, double M) const {
    return 8.0 * J0 / (alpha * T) + ledger.B_1 * w0_err_sq / T + ledger.B_2 / M;
  }
};

/// D_1 of the w-recursion for given stepsizes.
inline double compute_D1(const SmoothnessLedger& l, double alpha, double beta) {
  const double lv = l.model.lambda_v;
  return 128.0 * l.L_w * l.L_w * l.C_g * l.C_g * alpha * alpha / (lv * beta) +
         4.0 * l.C_f * l.C_f * (beta / lv + 2.0 * beta * beta);
}

/**
 * Largest admissible stepsizes and the batch size / iteration count for an
 * eps-stationary output. M also respects the batch floor of the w-recursion.
 */
inline Theorem2Config theorem2_config(SmoothnessLedger l, double kappa, double rho, double target_eps, double J0,
                                      double w0_err_sq, double batch_cap = 1e12) {
  require(target_eps > 0, ErrorKind::config, "target_eps must be positive");
  require(rho >= 0 && rho < 1 && kappa > 0, ErrorKind::precondition, "mixing constants out of range");
  const double lv = l.model.lambda_v, cp = l.model.C_phi;
  Theorem2Config c;
  c.mix = mixing_factor(kappa, rho);
  c.target_eps = target_eps;
  c.J0 = J0;
  c.w0_err_sq = w0_err_sq;
  c.beta = std::min(lv / (8.0 * cp * cp * cp * cp), 8.0 / lv);
  const double b = c.beta;
  c.alpha_terms = {1.0 / (2.0 * l.L_J), lv * b / (8.0 * std::sqrt(2.0) * l.L_w * l.L_e),
                   l.L_J * lv * lv * b * b / (384.0 * l.L_w * l.L_w * l.L_e * l.L_e)};
  c.alpha = *std::min_element(c.alpha_terms.begin(), c.alpha_terms.end());
  const double a = c.alpha;
  l.D_1 = compute_D1(l, a, b);
  l.B_1 = 64.0 * (1.0 + l.L_J * a) * l.L_e * l.L_e / (lv * b);
  l.B_2 = 64.0 * (1.0 + l.L_J * a) * (l.C_g * l.C_g + 2.0 * l.D_1 * l.L_e * l.L_e / (lv * b)) * c.mix;
  c.ledger = l;
  c.tracking_batch_lower_bound = (1.0 / lv + 2.0 * b) * 96.0 * cp * cp * cp * cp * c.mix / lv;
  c.batch_size = std::max(std::ceil(2.0 * l.B_2 / target_eps), std::ceil(c.tracking_batch_lower_bound));
  c.iterations = std::max(1.0, std::ceil(2.0 / target_eps * (8.0 * J0 / a + l.B_1 * w0_err_sq)));
  c.total_samples = c.batch_size * c.iterations;
  require(c.batch_size <= batch_cap, ErrorKind::resource,
          "prescribed batch size " + std::to_string(c.batch_size) + " exceeds cap");
  return c;
}

/// Empirical counterparts of the model constants on a probe grid.
struct ModelConstantsReport {
  ModelConstants declared;
  ModelConstants empirical;
  double L_J = 0.0;
  double L_e = 0.0;
  std::size_t probes = 0;
  std::vector<std::string> violations;

  bool ok() const { return violations.empty(); }
};

/**
 * Probe bounds on `thetas` and difference quotients on pairs: every grid pair plus a
 * nearby perturbation of each grid point. L_e is probed with w, w' in the R_w ball
 * over `samples` transitions drawn from the on-policy kernel.
 */
template <ValueModel Model>
ModelConstantsReport estimate_model_constants(const NonlinearExact<Model>& ex, const MdpModel& mdp,
                                              const PolicyTable& pi, const std::vector<Vec>& thetas,
                                              std::size_t samples, std::uint64_t seed) {
  require(!thetas.empty(), ErrorKind::config, "empty theta grid");
  ModelConstantsReport rep;
  rep.declared = ex.declared;
  ModelConstants& m = rep.empirical;
  m.lambda_v = std::numeric_limits<double>::infinity();
  const auto n = static_cast<Eigen::Index>(ex.model.n_states());
  const auto d = static_cast<Eigen::Index>(ex.dim());

  CounterRng rng = make_stream(seed, Stream::probe);
  auto rand_unit = [&] {
    Vec u(d);
    for (Eigen::Index i = 0; i < d; ++i) u(i) = 2.0 * rng.uniform() - 1.0;
    return Vec(u / std::max(u.norm(), 1e-300));
  };

  std::vector<Vec> probe = thetas;
  for (const Vec& th : thetas) probe.push_back(th + 1e-3 * (1.0 + th.norm()) * rand_unit());

  std::vector<NonlinearPoint> pts;
  std::vector<Vec> grads;
  for (const Vec& th : probe) {
    pts.push_back(ex.at(th));
    grads.push_back(ex.gradient(pts.back()));
  }
  // Bounds on the supplied grid; the perturbed copies only feed the quotients.
  for (std::size_t i = 0; i < thetas.size(); ++i) {
    const NonlinearPoint& p = pts[i];
    for (Eigen::Index s = 0; s < n; ++s) {
      m.C_phi = std::max(m.C_phi, p.eval.phi.row(s).norm());
      m.C_v = std::max(m.C_v, std::abs(p.eval.v(s)));
      if (!p.eval.zero_hessian) m.D_v = std::max(m.D_v, p.eval.hess[static_cast<std::size_t>(s)].norm());
    }
    m.lambda_v = std::min(m.lambda_v, min_eigenvalue(p.gram));
  }
  for (std::size_t i = 0; i < probe.size(); ++i)
    for (std::size_t j = i + 1; j < probe.size(); ++j) {
      const double dt = (probe[i] - probe[j]).norm();
      if (dt == 0.0) continue;
      const auto &a = pts[i].eval, &b = pts[j].eval;
      for (Eigen::Index s = 0; s < n; ++s) {
        m.L_v = std::max(m.L_v, std::abs(a.v(s) - b.v(s)) / dt);
        m.L_phi = std::max(m.L_phi, (a.phi.row(s) - b.phi.row(s)).norm() / dt);
        if (!a.zero_hessian)
          m.L_h = std::max(m.L_h, (a.hess[static_cast<std::size_t>(s)] - b.hess[static_cast<std::size_t>(s)]).norm() / dt);
      }
      rep.L_J = std::max(rep.L_J, (grads[i] - grads[j]).norm() / dt);
    }
  rep.probes = probe.size();

  const double R_w = compute_Rw(ex.declared, ex.r_max);
  TrajectoryStream stream(mdp, pi, make_stream(seed, Stream::trajectory), draw_state(ex.mu, rng));
  for (std::size_t k = 0; k < samples; ++k) {
    const Transition x = stream.next();
    const NonlinearPoint& p = pts[k % pts.size()];
    const Vec w1 = R_w * rng.uniform() * rand_unit();
    const Vec w2 = R_w * rng.uniform() * rand_unit();
    const double dw = (w1 - w2).norm();
    if (dw == 0.0) continue;
    const Vec g1 = nonlinear_sample_direction(p.eval, ex.gamma, x, w1);
    const Vec g2 = nonlinear_sample_direction(p.eval, ex.gamma, x, w2);
    rep.L_e = std::max(rep.L_e, (g1 - g2).norm() / dw);
  }

  const double tol = 1e-9;
  auto flag = [&](const char* name, double emp, double dec) {
    if (emp > dec * (1.0 + tol) + tol) rep.violations.push_back(std::string(name) + " exceeds declared value");
  };
  flag("C_phi", m.C_phi, ex.declared.C_phi);
  flag("C_v", m.C_v, ex.declared.C_v);
  flag("D_v", m.D_v, ex.declared.D_v);
  flag("L_v", m.L_v, ex.declared.L_v);
  flag("L_phi", m.L_phi, ex.declared.L_phi);
  flag("L_h", m.L_h, ex.declared.L_h);
  if (m.lambda_v < ex.declared.lambda_v * (1.0 - tol) - tol)
    rep.violations.push_back("Gram eigenvalue below declared lambda_v");
  return rep;
}

/// Safety factor applied to numerically estimated L_J and L_e before use in calculators.
inline constexpr double kLipschitzSafety = 2.0;

template <ValueModel Model>
SmoothnessLedger ledger_from_report(const NonlinearExact<Model>& ex, const ModelConstantsReport& rep) {
  return make_ledger(ex.declared, ex.r_max, ex.gamma, kLipschitzSafety * std::max(rep.L_J, 1e-12),
                     kLipschitzSafety * std::max(rep.L_e, 1e-12));
}

}  // namespace ttsa
