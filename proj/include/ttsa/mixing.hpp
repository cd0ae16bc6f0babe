#pragma once

#include "ttsa/core.hpp"

#include <Eigen/Eigenvalues>

#include <vector>

namespace ttsa {

/// Geometric envelope max_s d_TV(P^t(s, .), mu) <= kappa rho^t over t <= horizon.
struct MixingFit {
  double kappa = 1.0;
  double rho = 0.0;
  double slem = 0.0;          // second-largest eigenvalue modulus of the chain
  double max_residual = 0.0;  // largest excess of d_TV over the envelope
  std::size_t horizon = 0;
  std::vector<double> tv;     // worst-case TV distance per t

  double factor() const { return mixing_factor(kappa, rho); }
};

inline constexpr double kMixingRhoFloor = 1e-6;

/// TV values below this are treated as exact zeros.
inline constexpr double kTvZero = 1e-13;

/// Absolute round-off allowance when testing d_t against an envelope.
inline constexpr double kTvSlack = 1e-12;

inline double second_largest_modulus(const Mat& chain) {
  if (chain.rows() < 2) return 0.0;
  Eigen::EigenSolver<Mat> es(chain, false);
  std::vector<double> mods;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) mods.push_back(std::abs(es.eigenvalues()(i)));
  std::sort(mods.rbegin(), mods.rend());
  return mods[1];
}

/**
 * Fit (kappa, rho) to the worst-case TV decay of `chain` towards `mu`.
 *
 * Candidates are rho in {0.01, ..., 0.99}, the chain's SLEM, and the floor 1e-6;
 * those below the SLEM are skipped. For a candidate, kappa(rho) = max_t d_t / rho^t
 * over the first half of the horizon. A candidate is admissible when the
 * envelope fitted on the first half of the resolvable horizon (d_t above 1e-13) also
 * covers the second half, so it is not an artefact of truncation. The smallest admissible rho wins.
 */
inline MixingFit fit_geometric_mixing(const Mat& chain, const Vec& mu, std::size_t horizon = 200) {
  const Eigen::Index n = chain.rows();
  require(chain.cols() == n && mu.size() == n, ErrorKind::dimension, "chain/mu shape mismatch");
  require(horizon >= 4, ErrorKind::config, "mixing horizon must be at least 4");

  MixingFit fit;
  fit.horizon = horizon;
  fit.slem = second_largest_modulus(chain);
  fit.tv.resize(horizon + 1);
  Mat pt = Mat::Identity(n, n);
  for (std::size_t t = 0; t <= horizon; ++t) {
    double worst = 0.0;
    for (Eigen::Index s = 0; s < n; ++s) worst = std::max(worst, 0.5 * (pt.row(s).transpose() - mu).cwiseAbs().sum());
    fit.tv[t] = worst < kTvZero ? 0.0 : worst;
    pt = pt * chain;
  }
  require(fit.tv[horizon] < fit.tv[0] || fit.tv[0] == 0.0, ErrorKind::ergodicity,
          "TV distance does not decrease over the horizon");

  std::vector<double> candidates{kMixingRhoFloor, std::max(fit.slem, kMixingRhoFloor)};
  for (int k = 1; k <= 99; ++k) candidates.push_back(0.01 * k);
  std::sort(candidates.begin(), candidates.end());

  // Only the part of the horizon where d_t is resolvable carries information.
  std::size_t last = 0;
  for (std::size_t t = 0; t <= horizon; ++t)
    if (fit.tv[t] > 0.0) last = t;
  const std::size_t half = last / 2;
  for (double rho : candidates) {
    if (!(rho > 0.0 && rho < 1.0)) continue;
    // No envelope valid for all t can decay faster than the SLEM.
    if (rho < fit.slem * (1.0 - 1e-9)) continue;
    // Log ratios over the first half: for small rho the ratios themselves overflow.
    double head = -std::numeric_limits<double>::infinity();
    const double log_rho = std::log(rho);
    for (std::size_t t = 0; t <= half; ++t)
      if (fit.tv[t] > 0.0) head = std::max(head, std::log(fit.tv[t]) - static_cast<double>(t) * log_rho);
    const double kappa = std::exp(head);
    if (!std::isfinite(kappa)) continue;
    // The second half must stay under the envelope up to round-off in d_t.
    bool ok = true;
    for (std::size_t t = half + 1; t <= last && ok; ++t)
      ok = fit.tv[t] <= kappa * std::pow(rho, static_cast<double>(t)) * (1.0 + 1e-9) + kTvSlack;
    if (ok) {
      fit.rho = rho;
      fit.kappa = kappa;
      break;
    }
  }
  require(fit.rho > 0.0, ErrorKind::ergodicity, "no admissible geometric envelope within horizon");

  for (std::size_t t = 0; t <= horizon; ++t) {
    const double env = fit.kappa * std::pow(fit.rho, static_cast<double>(t));
    fit.max_residual = std::max(fit.max_residual, fit.tv[t] - env);
  }
  fit.max_residual = std::max(fit.max_residual, 0.0);
  return fit;
}

}  // namespace ttsa
