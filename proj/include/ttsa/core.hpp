#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace ttsa {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Failure categories. The CLI maps these onto exit codes.
enum class ErrorKind {
  config,
  dimension,
  ergodicity,
  singularity,
  support,
  assumption,
  resource,
  insufficient_signal,
  precondition,
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::config: return "config";
    case ErrorKind::dimension: return "dimension";
    case ErrorKind::ergodicity: return "ergodicity";
    case ErrorKind::singularity: return "singularity";
    case ErrorKind::support: return "support";
    case ErrorKind::assumption: return "assumption-violation";
    case ErrorKind::resource: return "resource-cap";
    case ErrorKind::insufficient_signal: return "insufficient-signal";
    case ErrorKind::precondition: return "precondition";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline void require(bool ok, ErrorKind kind, const std::string& what) {
  if (!ok) throw Error(kind, what);
}

/// Largest condition number accepted before a solve is refused.
inline constexpr double kConditionCap = 1e12;

inline double min_eigenvalue(const Mat& sym) {
  Eigen::SelfAdjointEigenSolver<Mat> es(sym, Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

inline double max_eigenvalue(const Mat& sym) {
  Eigen::SelfAdjointEigenSolver<Mat> es(sym, Eigen::EigenvaluesOnly);
  return es.eigenvalues()(es.eigenvalues().size() - 1);
}

/// Ratio of extreme singular values; infinity for a singular matrix.
inline double condition_number(const Mat& m) {
  Eigen::JacobiSVD<Mat> svd(m);
  const auto& s = svd.singularValues();
  if (s.size() == 0) return 1.0;
  const double lo = s(s.size() - 1);
  if (!(lo > 0.0)) return std::numeric_limits<double>::infinity();
  return s(0) / lo;
}

/// Solve m x = rhs, refusing ill-conditioned systems.
inline Vec guarded_solve(const Mat& m, const Vec& rhs, const char* what,
                         double cap = kConditionCap) {
  require(m.rows() == m.cols() && m.rows() == rhs.size(), ErrorKind::dimension,
          std::string(what) + ": shape mismatch");
  const double c = condition_number(m);
  require(c <= cap, ErrorKind::singularity,
          std::string(what) + ": condition number " + std::to_string(c) + " exceeds cap");
  return m.fullPivLu().solve(rhs);
}

/// Largest Euclidean row norm.
inline double max_row_norm(const RowMat& m) {
  double best = 0.0;
  for (Eigen::Index i = 0; i < m.rows(); ++i) best = std::max(best, m.row(i).norm());
  return best;
}

/// Least-squares line through (x, y). Returns slope, intercept and r^2.
struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};

inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size() && x.size() >= 2, ErrorKind::insufficient_signal,
          "line fit needs at least two points");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  require(sxx > 0, ErrorKind::insufficient_signal, "line fit needs distinct abscissae");
  LineFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r_squared = syy > 0 ? std::clamp(sxy * sxy / (sxx * syy), 0.0, 1.0) : 1.0;
  return f;
}

/// The factor (1 + (kappa - 1) rho) / (1 - rho) that every batch-noise bound carries.
inline double mixing_factor(double kappa, double rho) {
  return (1.0 + (kappa - 1.0) * rho) / (1.0 - rho);
}

}  // namespace ttsa
