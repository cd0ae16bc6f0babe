#include "ttsa/rng.hpp"

#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <vector>

using ttsa::CounterRng;

TEST(CounterRng, OutputIsPureFunctionOfKeyAndCounter) {
  CounterRng a(42);
  for (int i = 0; i < 10; ++i) a();
  CounterRng b(42, 10);
  EXPECT_EQ(a(), b());
}

TEST(CounterRng, DistinctKeysGiveDistinctStreams) {
  CounterRng a(1), b(2);
  int same = 0;
  for (int i = 0; i < 1000; ++i) same += a() == b();
  EXPECT_EQ(same, 0);
}

TEST(CounterRng, UniformMomentsMatch) {
  CounterRng r(7);
  const int n = 200000;
  double m1 = 0, m2 = 0;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    m1 += u;
    m2 += u * u;
  }
  m1 /= n;
  m2 /= n;
  EXPECT_NEAR(m1, 0.5, 4.0 * std::sqrt(1.0 / 12.0 / n));
  EXPECT_NEAR(m2, 1.0 / 3.0, 0.005);
}

TEST(CounterRng, CategoricalFrequencies) {
  CounterRng r(11);
  const std::array<double, 4> p{0.1, 0.0, 0.6, 0.3};
  std::array<int, 4> counts{};
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++counts[r.categorical(p)];
  EXPECT_EQ(counts[1], 0);
  for (int k : {0, 2, 3}) {
    const double se = std::sqrt(p[k] * (1 - p[k]) / n);
    EXPECT_NEAR(counts[k] / double(n), p[k], 5 * se);
  }
}

TEST(CounterRng, BelowStaysInRange) {
  CounterRng r(3);
  std::vector<int> hits(7, 0);
  for (int i = 0; i < 70000; ++i) {
    const auto k = r.below(7);
    ASSERT_LT(k, 7u);
    ++hits[k];
  }
  for (int h : hits) EXPECT_NEAR(h, 10000, 500);
}

TEST(StreamKey, SubStreamsOfOneSeedDiffer) {
  EXPECT_NE(ttsa::stream_key(5, 0), ttsa::stream_key(5, 1));
  EXPECT_NE(ttsa::stream_key(5, 1), ttsa::stream_key(4, 1));
}
