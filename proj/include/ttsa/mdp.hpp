#pragma once

#include "ttsa/core.hpp"
#include "ttsa/rng.hpp"

#include <numeric>
#include <queue>
#include <string>
#include <vector>

namespace ttsa {

/// Finite discounted MDP with dense transition and reward tensors indexed [s][a][s'].
struct MdpModel {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  double gamma = 0.0;
  std::vector<double> transition;
  std::vector<double> reward;
  std::string name;

  std::size_t index(std::size_t s, std::size_t a, std::size_t s2) const {
    return (s * n_actions + a) * n_states + s2;
  }
  double p(std::size_t s, std::size_t a, std::size_t s2) const { return transition[index(s, a, s2)]; }
  double r(std::size_t s, std::size_t a, std::size_t s2) const { return reward[index(s, a, s2)]; }

  /// Pointer to the next-state distribution of (s, a).
  const double* row(std::size_t s, std::size_t a) const { return transition.data() + index(s, a, 0); }

  /// max |r(s, a, s')| over entries reachable with positive probability.
  double r_max() const {
    double m = 0.0;
    for (std::size_t i = 0; i < reward.size(); ++i)
      if (transition[i] > 0.0) m = std::max(m, std::abs(reward[i]));
    return m;
  }

  /// Expected one-step reward of (s, a).
  double mean_reward(std::size_t s, std::size_t a) const {
    double acc = 0.0;
    for (std::size_t s2 = 0; s2 < n_states; ++s2) acc += p(s, a, s2) * r(s, a, s2);
    return acc;
  }

  void validate() const {
    require(n_states > 0 && n_actions > 0, ErrorKind::config, "MDP needs states and actions");
    require(gamma >= 0.0 && gamma < 1.0, ErrorKind::config, "discount must lie in [0, 1)");
    const std::size_t n = n_states * n_actions * n_states;
    require(transition.size() == n && reward.size() == n, ErrorKind::dimension,
            "transition/reward tensor size mismatch");
    for (std::size_t s = 0; s < n_states; ++s)
      for (std::size_t a = 0; a < n_actions; ++a) {
        double sum = 0.0;
        for (std::size_t s2 = 0; s2 < n_states; ++s2) {
          const double q = p(s, a, s2);
          require(q >= 0.0 && std::isfinite(q), ErrorKind::config, "negative transition probability");
          require(std::isfinite(r(s, a, s2)), ErrorKind::config, "non-finite reward");
          sum += q;
        }
        require(std::abs(sum - 1.0) <= 1e-12, ErrorKind::config,
                "transition row (" + std::to_string(s) + "," + std::to_string(a) +
                    ") does not sum to one");
      }
  }
};

/// Stochastic policy table, rows indexed by state.
struct PolicyTable {
  Mat probs;  // n_states x n_actions

  std::size_t n_states() const { return static_cast<std::size_t>(probs.rows()); }
  std::size_t n_actions() const { return static_cast<std::size_t>(probs.cols()); }
  double operator()(std::size_t s, std::size_t a) const {
    return probs(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a));
  }

  static PolicyTable uniform(std::size_t ns, std::size_t na) {
    return {Mat::Constant(static_cast<Eigen::Index>(ns), static_cast<Eigen::Index>(na),
                          1.0 / static_cast<double>(na))};
  }

  static PolicyTable deterministic(std::size_t ns, std::size_t na, std::size_t action) {
    require(action < na, ErrorKind::config, "deterministic policy action out of range");
    Mat m = Mat::Zero(static_cast<Eigen::Index>(ns), static_cast<Eigen::Index>(na));
    m.col(static_cast<Eigen::Index>(action)).setOnes();
    return {m};
  }

  /// Same action distribution in every state.
  static PolicyTable state_independent(std::size_t ns, const std::vector<double>& dist) {
    Mat m(static_cast<Eigen::Index>(ns), static_cast<Eigen::Index>(dist.size()));
    for (Eigen::Index s = 0; s < m.rows(); ++s)
      for (Eigen::Index a = 0; a < m.cols(); ++a) m(s, a) = dist[static_cast<std::size_t>(a)];
    return {m};
  }

  /// Random policy with every probability at least `floor` / n_actions.
  static PolicyTable random(std::size_t ns, std::size_t na, std::uint64_t seed, double floor = 0.2) {
    CounterRng rng(seed);
    Mat m(static_cast<Eigen::Index>(ns), static_cast<Eigen::Index>(na));
    for (Eigen::Index s = 0; s < m.rows(); ++s) {
      double sum = 0.0;
      for (Eigen::Index a = 0; a < m.cols(); ++a) {
        m(s, a) = floor + (1.0 - floor) * rng.uniform();
        sum += m(s, a);
      }
      m.row(s) /= sum;
    }
    return {m};
  }

  void validate(const MdpModel& mdp) const {
    require(n_states() == mdp.n_states && n_actions() == mdp.n_actions, ErrorKind::dimension,
            "policy shape does not match MDP");
    for (Eigen::Index s = 0; s < probs.rows(); ++s) {
      require((probs.row(s).array() >= 0.0).all(), ErrorKind::config, "negative policy probability");
      require(std::abs(probs.row(s).sum() - 1.0) <= 1e-12, ErrorKind::config,
              "policy row " + std::to_string(s) + " does not sum to one");
    }
  }
};

/// State chain p(s'|s) = sum_a P(s'|s,a) pi(a|s).
inline Mat induced_chain(const MdpModel& mdp, const PolicyTable& pi) {
  pi.validate(mdp);
  const auto n = static_cast<Eigen::Index>(mdp.n_states);
  Mat chain = Mat::Zero(n, n);
  for (std::size_t s = 0; s < mdp.n_states; ++s)
    for (std::size_t a = 0; a < mdp.n_actions; ++a) {
      const double w = pi(s, a);
      if (w == 0.0) continue;
      for (std::size_t s2 = 0; s2 < mdp.n_states; ++s2)
        chain(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(s2)) += w * mdp.p(s, a, s2);
    }
  return chain;
}

/// Expected one-step reward r_pi(s).
inline Vec policy_reward(const MdpModel& mdp, const PolicyTable& pi) {
  Vec r = Vec::Zero(static_cast<Eigen::Index>(mdp.n_states));
  for (std::size_t s = 0; s < mdp.n_states; ++s)
    for (std::size_t a = 0; a < mdp.n_actions; ++a)
      r(static_cast<Eigen::Index>(s)) += pi(s, a) * mdp.mean_reward(s, a);
  return r;
}

namespace detail {

/// Irreducible and aperiodic, decided on the support graph. The period is the gcd of
/// level(u) + 1 - level(v) over all edges, with levels from a BFS.
inline bool is_primitive(const Mat& chain) {
  const auto n = static_cast<std::size_t>(chain.rows());
  auto reach = [&](bool forward) {
    std::vector<int> level(n, -1);
    std::queue<std::size_t> q;
    level[0] = 0;
    q.push(0);
    while (!q.empty()) {
      const std::size_t u = q.front();
      q.pop();
      for (std::size_t v = 0; v < n; ++v) {
        const double w = forward ? chain(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(v))
                                 : chain(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(u));
        if (w > 0.0 && level[v] < 0) {
          level[v] = level[u] + 1;
          q.push(v);
        }
      }
    }
    return level;
  };
  const auto fwd = reach(true);
  const auto bwd = reach(false);
  for (std::size_t i = 0; i < n; ++i)
    if (fwd[i] < 0 || bwd[i] < 0) return false;
  long period = 0;
  for (std::size_t u = 0; u < n; ++u)
    for (std::size_t v = 0; v < n; ++v)
      if (chain(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(v)) > 0.0)
        period = std::gcd(period, static_cast<long>(std::abs(fwd[u] + 1 - fwd[v])));
  return period == 1;
}

}  // namespace detail

/// Residual threshold and iteration cap for the stationary solve.
inline constexpr double kStationaryTol = 1e-12;
inline constexpr std::size_t kStationaryMaxIter = 1000000;

/**
 * Unique stationary distribution of an ergodic chain.
 *
 * The support graph must be irreducible and aperiodic. A direct linear solve gives a
 * starting point that power iteration then polishes until the residual
 * max|mu P - mu| is at most 1e-12; failure within 1e6 iterations is reported as
 * non-ergodic.
 */
inline Vec stationary_distribution(const Mat& chain) {
  const Eigen::Index n = chain.rows();
  require(n > 0 && chain.cols() == n, ErrorKind::dimension, "chain must be square");
  for (Eigen::Index i = 0; i < n; ++i)
    require(std::abs(chain.row(i).sum() - 1.0) <= 1e-10 && (chain.row(i).array() >= 0).all(),
            ErrorKind::config, "chain is not row-stochastic");
  require(detail::is_primitive(chain), ErrorKind::ergodicity, "chain is reducible or periodic");

  Mat sys = chain.transpose() - Mat::Identity(n, n);
  sys.row(n - 1).setOnes();
  Vec rhs = Vec::Zero(n);
  rhs(n - 1) = 1.0;
  Vec mu = sys.fullPivLu().solve(rhs);
  if (!mu.allFinite() || (mu.array() < 0).any()) mu = Vec::Constant(n, 1.0 / static_cast<double>(n));
  mu = mu.cwiseMax(0.0);
  mu /= mu.sum();

  for (std::size_t it = 0; it <= kStationaryMaxIter; ++it) {
    Vec next = chain.transpose() * mu;
    next /= next.sum();
    const double res = (next - mu).cwiseAbs().maxCoeff();
    mu = next;
    if (res <= kStationaryTol) return mu;
  }
  throw Error(ErrorKind::ergodicity, "power iteration did not reach the residual threshold");
}

/// V^pi = (I - gamma P_pi)^{-1} r_pi.
inline Vec value_function_exact(const MdpModel& mdp, const PolicyTable& pi) {
  const Mat chain = induced_chain(mdp, pi);
  const auto n = static_cast<Eigen::Index>(mdp.n_states);
  const Mat sys = Mat::Identity(n, n) - mdp.gamma * chain;
  return sys.partialPivLu().solve(policy_reward(mdp, pi));
}

/// Largest pi(a|s) / pi_b(a|s). Target support must be covered by the behavior policy.
inline double max_importance_ratio(const PolicyTable& target, const PolicyTable& behavior) {
  double m = 0.0;
  for (Eigen::Index s = 0; s < target.probs.rows(); ++s)
    for (Eigen::Index a = 0; a < target.probs.cols(); ++a) {
      const double pt = target.probs(s, a), pb = behavior.probs(s, a);
      if (pt == 0.0) continue;
      require(pb > 0.0, ErrorKind::support,
              "behavior policy misses action " + std::to_string(a) + " in state " + std::to_string(s));
      m = std::max(m, pt / pb);
    }
  return m;
}

}  // namespace ttsa
