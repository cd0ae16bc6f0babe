#pragma once

#include "ttsa/builtins.hpp"
#include "ttsa/core.hpp"

#include <concepts>
#include <vector>

namespace ttsa {

/// Bounds and Lipschitz moduli a smooth value model declares about itself.
struct ModelConstants {
  double C_phi = 0.0;  // sup ||phi_theta(s)||
  double C_v = 0.0;    // sup |v(s, theta)|
  double D_v = 0.0;    // sup ||H_theta(s)||_F
  double L_v = 0.0;    // |v(s, theta) - v(s, theta')| <= L_v ||theta - theta'||
  double L_phi = 0.0;  // same for phi_theta(s)
  double L_h = 0.0;    // same for H_theta(s), Frobenius norm
  double lambda_v = 0.0;  // floor on lambda_min(E[phi_theta phi_theta^T])
};

/// Values, gradient features and Hessians of every state at one theta.
struct ModelEval {
  Vec v;
  RowMat phi;
  std::vector<Mat> hess;
  bool zero_hessian = false;
};

template <class M>
concept ValueModel = requires(const M& m, std::size_t s, const Vec& theta, const Vec& mu) {
  { m.dim() } -> std::convertible_to<std::size_t>;
  { m.n_states() } -> std::convertible_to<std::size_t>;
  { m.value(s, theta) } -> std::convertible_to<double>;
  { m.gradient(s, theta) } -> std::convertible_to<Vec>;
  { m.hessian(s, theta) } -> std::convertible_to<Mat>;
  { m.declared(mu) } -> std::same_as<ModelConstants>;
  { m.has_zero_hessian() } -> std::convertible_to<bool>;
};

template <ValueModel M>
ModelEval evaluate(const M& model, const Vec& theta) {
  const auto n = static_cast<Eigen::Index>(model.n_states());
  const auto d = static_cast<Eigen::Index>(model.dim());
  require(theta.size() == d, ErrorKind::dimension, "theta dimension does not match model");
  ModelEval e;
  e.v.resize(n);
  e.phi.resize(n, d);
  e.zero_hessian = model.has_zero_hessian();
  if (!e.zero_hessian) e.hess.reserve(static_cast<std::size_t>(n));
  for (Eigen::Index s = 0; s < n; ++s) {
    const auto su = static_cast<std::size_t>(s);
    e.v(s) = model.value(su, theta);
    e.phi.row(s) = model.gradient(su, theta).transpose();
    if (!e.zero_hessian) e.hess.push_back(model.hessian(su, theta));
  }
  return e;
}

/// v(s, theta) = phi(s)^T theta.
class LinearValueModel {
 public:
  LinearValueModel() = default;
  /// `radius` bounds the parameter region over which C_v is declared.
  explicit LinearValueModel(RowMat phi, double radius = 10.0) : phi_(std::move(phi)), radius_(radius) {
    require(phi_.rows() > 0 && phi_.cols() > 0, ErrorKind::config, "empty feature matrix");
    require(radius_ > 0, ErrorKind::config, "radius must be positive");
  }

  std::size_t dim() const { return static_cast<std::size_t>(phi_.cols()); }
  std::size_t n_states() const { return static_cast<std::size_t>(phi_.rows()); }
  double radius() const { return radius_; }
  const RowMat& features() const { return phi_; }
  bool has_zero_hessian() const { return true; }

  double value(std::size_t s, const Vec& theta) const { return phi_.row(idx(s)).dot(theta); }
  Vec gradient(std::size_t s, const Vec&) const { return phi_.row(idx(s)).transpose(); }
  Mat hessian(std::size_t, const Vec&) const { return Mat::Zero(phi_.cols(), phi_.cols()); }

  ModelConstants declared(const Vec& mu) const {
    ModelConstants c;
    c.C_phi = max_row_norm(phi_);
    c.C_v = c.C_phi * radius_;
    c.L_v = c.C_phi;
    c.lambda_v = min_eigenvalue(Mat(phi_.transpose() * mu.asDiagonal() * phi_));
    return c;
  }

 private:
  static Eigen::Index idx(std::size_t s) { return static_cast<Eigen::Index>(s); }
  RowMat phi_;
  double radius_ = 10.0;
};

/**
 * v(s, theta) = c tanh(z) + kappa_lin z with z = psi(s)^T theta.
 *
 * phi_theta(s) = g'(z) psi(s) with g'(z) = c sech^2(z) + kappa_lin, and
 * H_theta(s) = c tanh''(z) psi(s) psi(s)^T. The linear part keeps g' away from zero
 * when kappa_lin > max(0, -c); with kappa_lin = 0 the declared lambda_v is zero.
 */
class TanhLinearModel {
 public:
  TanhLinearModel() = default;
  TanhLinearModel(RowMat psi, double c, double kappa_lin, double radius = 10.0)
      : psi_(std::move(psi)), c_(c), kappa_(kappa_lin), radius_(radius) {
    require(psi_.rows() > 0 && psi_.cols() > 0, ErrorKind::config, "empty base features");
    require(kappa_ >= 0 && kappa_ + std::min(0.0, c_) >= 0, ErrorKind::config,
            "kappa_lin must be at least max(0, -c)");
    require(c_ != 0.0 || kappa_ > 0, ErrorKind::config, "model is identically zero");
    require(radius_ > 0, ErrorKind::config, "radius must be positive");
  }

  std::size_t dim() const { return static_cast<std::size_t>(psi_.cols()); }
  std::size_t n_states() const { return static_cast<std::size_t>(psi_.rows()); }
  double c() const { return c_; }
  double kappa_lin() const { return kappa_; }
  double radius() const { return radius_; }
  const RowMat& base_features() const { return psi_; }
  bool has_zero_hessian() const { return c_ == 0.0; }

  double value(std::size_t s, const Vec& theta) const {
    const double z = z_of(s, theta);
    return c_ * std::tanh(z) + kappa_ * z;
  }
  Vec gradient(std::size_t s, const Vec& theta) const {
    const double t = std::tanh(z_of(s, theta));
    return (c_ * (1.0 - t * t) + kappa_) * psi_.row(idx(s)).transpose();
  }
  Mat hessian(std::size_t s, const Vec& theta) const {
    const double t = std::tanh(z_of(s, theta));
    const double g2 = -2.0 * t * (1.0 - t * t);
    const Vec p = psi_.row(idx(s)).transpose();
    return c_ * g2 * p * p.transpose();
  }

  /// Global bounds except C_v, which holds on the ball ||theta|| <= radius.
  ModelConstants declared(const Vec& mu) const {
    const double pm = max_row_norm(psi_);
    const double ac = std::abs(c_);
    const double g_min = kappa_ + std::min(0.0, c_);
    ModelConstants k;
    k.C_phi = (std::max(c_, 0.0) + kappa_) * pm;
    k.C_v = ac + kappa_ * pm * radius_;
    k.D_v = ac * kTanh2Max * pm * pm;  // sup |tanh''| = 4 / (3 sqrt 3)
    k.L_v = k.C_phi;
    k.L_phi = k.D_v;
    k.L_h = 2.0 * ac * pm * pm * pm;  // sup |tanh'''| = 2
    k.lambda_v = g_min * g_min * min_eigenvalue(Mat(psi_.transpose() * mu.asDiagonal() * psi_));
    return k;
  }

  static constexpr double kTanh2Max = 0.769800358919501;  // 4 / (3 sqrt(3))

 private:
  static Eigen::Index idx(std::size_t s) { return static_cast<Eigen::Index>(s); }
  double z_of(std::size_t s, const Vec& theta) const { return psi_.row(idx(s)).dot(theta); }

  RowMat psi_;
  double c_ = 0.0;
  double kappa_ = 1.0;
  double radius_ = 10.0;
};

inline TanhLinearModel tanh_linear_model(std::size_t n_states, std::size_t d, double c, double kappa_lin,
                                         std::uint64_t base_seed, double radius = 10.0) {
  return TanhLinearModel(random_features(n_states, d, base_seed), c, kappa_lin, radius);
}

}  // namespace ttsa
