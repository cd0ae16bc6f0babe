#pragma once

#include "ttsa/mdp.hpp"

#include <algorithm>
#include <numeric>

namespace ttsa {

/// Two states, two actions. Action 0 stays, action 1 flips with probability 1/2, so the
/// uniform policy flips with probability 1/4. Reward 1 on landing in state 1.
inline MdpModel twostate_mdp(double gamma = 0.9) {
  MdpModel m;
  m.name = "twostate";
  m.n_states = 2;
  m.n_actions = 2;
  m.gamma = gamma;
  m.transition.assign(8, 0.0);
  m.reward.assign(8, 0.0);
  for (std::size_t s = 0; s < 2; ++s) {
    m.transition[m.index(s, 0, s)] = 1.0;
    m.transition[m.index(s, 1, s)] = 0.5;
    m.transition[m.index(s, 1, 1 - s)] = 0.5;
    for (std::size_t a = 0; a < 2; ++a) m.reward[m.index(s, a, 1)] = 1.0;
  }
  m.validate();
  return m;
}

/// Baird's seven-state star. Action 0 ("dashed") jumps uniformly to states 0..5,
/// action 1 ("solid") jumps to state 6. All rewards are zero.
inline MdpModel baird7_mdp(double gamma = 0.99) {
  MdpModel m;
  m.name = "baird7";
  m.n_states = 7;
  m.n_actions = 2;
  m.gamma = gamma;
  m.transition.assign(7 * 2 * 7, 0.0);
  m.reward.assign(7 * 2 * 7, 0.0);
  for (std::size_t s = 0; s < 7; ++s) {
    for (std::size_t s2 = 0; s2 < 6; ++s2) m.transition[m.index(s, 0, s2)] = 1.0 / 6.0;
    m.transition[m.index(s, 1, 6)] = 1.0;
  }
  m.validate();
  return m;
}

/// Behavior policy customarily paired with baird7: dashed 6/7, solid 1/7.
inline PolicyTable baird7_behavior() { return PolicyTable::state_independent(7, {6.0 / 7.0, 1.0 / 7.0}); }

/**
 * Garnet instance: each (s, a) reaches `branching` distinct successors with
 * probabilities from a random partition of [0, 1]; reward r(s, a) ~ U[0, 1) regardless
 * of the successor.
 */
inline MdpModel random_garnet(std::size_t n_states, std::size_t n_actions, std::size_t branching,
                              std::uint64_t seed, double gamma = 0.9) {
  require(branching >= 1 && branching <= n_states, ErrorKind::config, "garnet branching out of range");
  CounterRng rng(seed);
  MdpModel m;
  m.name = "random-garnet";
  m.n_states = n_states;
  m.n_actions = n_actions;
  m.gamma = gamma;
  m.transition.assign(n_states * n_actions * n_states, 0.0);
  m.reward.assign(n_states * n_actions * n_states, 0.0);
  std::vector<std::size_t> perm(n_states);
  std::vector<double> cuts(branching + 1);
  for (std::size_t s = 0; s < n_states; ++s)
    for (std::size_t a = 0; a < n_actions; ++a) {
      std::iota(perm.begin(), perm.end(), 0);
      for (std::size_t i = 0; i < branching; ++i) std::swap(perm[i], perm[i + rng.below(n_states - i)]);
      cuts.front() = 0.0;
      cuts.back() = 1.0;
      for (std::size_t i = 1; i < branching; ++i) cuts[i] = rng.uniform();
      std::sort(cuts.begin(), cuts.end());
      for (std::size_t i = 0; i < branching; ++i) m.transition[m.index(s, a, perm[i])] += cuts[i + 1] - cuts[i];
      double sum = 0.0;
      for (std::size_t s2 = 0; s2 < n_states; ++s2) sum += m.p(s, a, s2);
      for (std::size_t s2 = 0; s2 < n_states; ++s2) m.transition[m.index(s, a, s2)] /= sum;
      const double r = rng.uniform();
      for (std::size_t s2 = 0; s2 < n_states; ++s2) m.reward[m.index(s, a, s2)] = r;
    }
  m.validate();
  return m;
}

/// Random feature rows scaled so the largest row norm is one.
inline RowMat random_features(std::size_t rows, std::size_t d, std::uint64_t seed) {
  CounterRng rng(seed);
  RowMat phi(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < phi.rows(); ++i)
    for (Eigen::Index j = 0; j < phi.cols(); ++j) phi(i, j) = 2.0 * rng.uniform() - 1.0;
  const double m = max_row_norm(phi);
  if (m > 0) phi /= m;
  return phi;
}

/// One-hot rows (tabular representation).
inline RowMat tabular_features(std::size_t rows) {
  return RowMat::Identity(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(rows));
}

}  // namespace ttsa
