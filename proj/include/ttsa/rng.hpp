#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>

namespace ttsa {

/**
 * Counter-based 64-bit generator.
 *
 * The n-th output of stream `key` is splitmix64(mix(key) + n * golden), so any
 * draw is a pure function of (key, n). Streams never share state, which makes
 * runs reproducible regardless of scheduling or thread count.
 */
class CounterRng {
 public:
  using result_type = std::uint64_t;

  explicit CounterRng(std::uint64_t key, std::uint64_t counter = 0)
      : base_(finalize(key ^ 0x5851f42d4c957f2dULL)), counter_(counter) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return finalize(base_ + (counter_++) * kGolden); }

  std::uint64_t counter() const { return counter_; }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n), unbiased (Lemire's multiply-shift with rejection).
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) return 0;
    for (;;) {
      const unsigned __int128 m = static_cast<unsigned __int128>((*this)()) * n;
      const auto lo = static_cast<std::uint64_t>(m);
      if (lo >= n || lo >= (-n) % n) return static_cast<std::uint64_t>(m >> 64);
    }
  }

  /// Index drawn from a probability vector by inversion. Never returns a
  /// zero-probability index, even under round-off in the cumulative sum.
  std::size_t categorical(std::span<const double> probs) {
    const double u = uniform();
    double acc = 0.0;
    std::size_t last = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      if (probs[i] <= 0.0) continue;
      last = i;
      acc += probs[i];
      if (u < acc) return i;
    }
    return last;
  }

  static constexpr std::uint64_t finalize(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;
  std::uint64_t base_;
  std::uint64_t counter_;
};

/// Sub-streams of a run. The run's seed is combined with the stream index by XOR
/// in the high word, so seeds below 2^32 never collide across streams.
enum class Stream : std::uint64_t { trajectory = 0, output_index = 1, init = 2, probe = 3 };

inline std::uint64_t stream_key(std::uint64_t seed, std::uint64_t index) {
  return seed ^ (index << 32);
}

inline CounterRng make_stream(std::uint64_t seed, Stream s) {
  return CounterRng(stream_key(seed, static_cast<std::uint64_t>(s)));
}

}  // namespace ttsa
