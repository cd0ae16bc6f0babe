#pragma once

#include "ttsa/mdp.hpp"
#include "ttsa/rng.hpp"

#include <vector>

namespace ttsa {

/// One step x_j = (s_j, a_j, r_j, s_{j+1}) plus the behavior action a_{j+1} taken next.
struct Transition {
  std::size_t s = 0;
  std::size_t a = 0;
  double r = 0.0;
  std::size_t s_next = 0;
  std::size_t a_next = 0;
};

/**
 * Single Markovian trajectory under the behavior policy. Consecutive transitions are
 * chained: the next one starts at (s_next, a_next) of the previous.
 */
class TrajectoryStream {
 public:
  TrajectoryStream(const MdpModel& mdp, const PolicyTable& behavior, CounterRng rng, std::size_t start_state)
      : mdp_(&mdp), rng_(rng), s_(start_state) {
    behavior.validate(mdp);
    require(start_state < mdp.n_states, ErrorKind::config, "start state out of range");
    policy_.resize(mdp.n_states * mdp.n_actions);
    for (std::size_t s = 0; s < mdp.n_states; ++s)
      for (std::size_t a = 0; a < mdp.n_actions; ++a) policy_[s * mdp.n_actions + a] = behavior(s, a);
    a_ = draw_action(s_);
  }

  Transition next() {
    Transition x;
    x.s = s_;
    x.a = a_;
    x.s_next = rng_.categorical({mdp_->row(s_, a_), mdp_->n_states});
    x.r = mdp_->r(s_, a_, x.s_next);
    x.a_next = draw_action(x.s_next);
    s_ = x.s_next;
    a_ = x.a_next;
    ++cursor_;
    return x;
  }

  std::uint64_t cursor() const { return cursor_; }
  std::size_t state() const { return s_; }

 private:
  std::size_t draw_action(std::size_t s) {
    return rng_.categorical({policy_.data() + s * mdp_->n_actions, mdp_->n_actions});
  }

  const MdpModel* mdp_;
  CounterRng rng_;
  std::vector<double> policy_;
  std::size_t s_;
  std::size_t a_ = 0;
  std::uint64_t cursor_ = 0;
};

/// Draw a state from a distribution (used for stationary starts).
inline std::size_t draw_state(const Vec& dist, CounterRng& rng) {
  return rng.categorical({dist.data(), static_cast<std::size_t>(dist.size())});
}

/// Trajectory of `length` chained transitions starting at `start_state`.
inline std::vector<Transition> sample_trajectory(const MdpModel& mdp, const PolicyTable& behavior,
                                                 std::uint64_t seed, std::size_t length,
                                                 std::size_t start_state = 0) {
  TrajectoryStream stream(mdp, behavior, make_stream(seed, Stream::trajectory), start_state);
  std::vector<Transition> out;
  out.reserve(length);
  for (std::size_t i = 0; i < length; ++i) out.push_back(stream.next());
  return out;
}

/// Simulate a bare state chain (used by the variance probe).
class ChainWalker {
 public:
  ChainWalker(const Mat& chain, CounterRng rng) : rng_(rng), n_(static_cast<std::size_t>(chain.rows())) {
    rows_.resize(n_ * n_);
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = 0; j < n_; ++j)
        rows_[i * n_ + j] = chain(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  std::size_t step(std::size_t s) { return rng_.categorical({rows_.data() + s * n_, n_}); }
  CounterRng& rng() { return rng_; }

 private:
  CounterRng rng_;
  std::size_t n_;
  std::vector<double> rows_;
};

}  // namespace ttsa
