#pragma once
// Independent reference computations used only by the tests. None of these call
// into the library's solvers.

#include "ttsa/core.hpp"
#include "ttsa/mdp.hpp"

#include <Eigen/Eigenvalues>

#include <functional>

namespace oracle {

using ttsa::Mat;
using ttsa::Vec;

/// Left Perron eigenvector of a row-stochastic matrix, via a general eigensolver.
inline Vec perron_vector(const Mat& chain) {
  Eigen::EigenSolver<Mat> es(chain.transpose());
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < es.eigenvalues().size(); ++i)
    if (std::abs(es.eigenvalues()(i) - 1.0) < std::abs(es.eigenvalues()(best) - 1.0)) best = i;
  Vec v = es.eigenvectors().col(best).real();
  return v / v.sum();
}

/// P_pi built by looping over the tensor.
inline Mat chain_by_loops(const ttsa::MdpModel& m, const Mat& pi) {
  Mat P = Mat::Zero(static_cast<Eigen::Index>(m.n_states), static_cast<Eigen::Index>(m.n_states));
  for (std::size_t s = 0; s < m.n_states; ++s)
    for (std::size_t s2 = 0; s2 < m.n_states; ++s2) {
      double acc = 0.0;
      for (std::size_t a = 0; a < m.n_actions; ++a) acc += pi(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a)) * m.p(s, a, s2);
      P(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(s2)) = acc;
    }
  return P;
}

inline Vec reward_by_loops(const ttsa::MdpModel& m, const Mat& pi) {
  Vec r = Vec::Zero(static_cast<Eigen::Index>(m.n_states));
  for (std::size_t s = 0; s < m.n_states; ++s)
    for (std::size_t a = 0; a < m.n_actions; ++a)
      for (std::size_t s2 = 0; s2 < m.n_states; ++s2)
        r(static_cast<Eigen::Index>(s)) += pi(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a)) * m.p(s, a, s2) * m.r(s, a, s2);
  return r;
}

/// Value iteration to machine precision.
inline Vec value_iteration(const ttsa::MdpModel& m, const Mat& pi) {
  const Mat P = chain_by_loops(m, pi);
  const Vec r = reward_by_loops(m, pi);
  Vec v = Vec::Zero(r.size());
  for (int it = 0; it < 100000; ++it) {
    Vec next = r + m.gamma * P * v;
    if ((next - v).cwiseAbs().maxCoeff() < 1e-15 * (1.0 + next.cwiseAbs().maxCoeff())) return next;
    v = next;
  }
  return v;
}

/**
 * Projected Bellman error ||Pi (T v - v)||_D^2 for v = Phi theta, with the projection
 * matrix formed explicitly over the state space.
 */
inline double mspbe_projection(const Mat& phi, const Vec& mu, const Mat& P_target, const Vec& r_target,
                               double gamma, const Vec& theta) {
  const Mat D = mu.asDiagonal();
  const Mat proj = phi * (phi.transpose() * D * phi).inverse() * phi.transpose() * D;
  const Vec v = phi * theta;
  const Vec err = proj * (r_target + gamma * P_target * v - v);
  return err.dot(D * err);
}

/// ||Pi (T v - v)||_D^2 for arbitrary state values v and tangent features (n x d).
inline double projected_bellman_error(const Vec& v, const Mat& tangent, const Vec& mu, const Mat& P,
                                      const Vec& r, double gamma) {
  const Mat D = mu.asDiagonal();
  const Mat proj = tangent * (tangent.transpose() * D * tangent).inverse() * tangent.transpose() * D;
  const Vec err = proj * (r + gamma * P * v - v);
  return err.dot(D * err);
}

/// Central finite-difference Jacobian of a vector map; column i is d f / d x_i.
inline Mat fd_jacobian(const std::function<Vec(const Vec&)>& f, const Vec& x, double h) {
  const Vec f0 = f(x);
  Mat J(f0.size(), x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vec xp = x, xm = x;
    xp(i) += h;
    xm(i) -= h;
    J.col(i) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return J;
}

/// Central finite-difference gradient.
inline Vec fd_gradient(const std::function<double(const Vec&)>& f, const Vec& x, double h) {
  Vec g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vec xp = x, xm = x;
    xp(i) += h;
    xm(i) -= h;
    g(i) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return g;
}

inline double rel_err(const Vec& a, const Vec& b) {
  return (a - b).norm() / std::max(b.norm(), 1e-300);
}

}  // namespace oracle
