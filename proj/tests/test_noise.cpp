#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "lsnpc/noise.hpp"
#include "lsnpc/rng.hpp"

using namespace lsnpc;

namespace {

void expect_row_stochastic(const TransitionMatrix& t) {
  for (std::size_t i = 0; i < t.k; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < t.k; ++j) {
      EXPECT_GE(t(i, j), 0.0);
      s += t(i, j);
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
    EXPECT_NEAR(t(i, i), 1.0 - t.nr, 1e-15);
  }
}

LabelMatrix random_labels(std::size_t n, std::size_t k, double density, std::uint64_t seed) {
  Rng rng(seed);
  std::bernoulli_distribution b(density);
  LabelMatrix y(n, k);
  for (auto& v : y.data()) v = b(rng);
  return y;
}

}  // namespace

TEST(Transition, SymmetricEntries) {
  const auto t = build_transition_matrix(NoiseKind::Sym, 4, 0.3);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(t(i, j), i == j ? 0.7 : 0.1, 1e-15);
  expect_row_stochastic(t);
}

TEST(Transition, PairEntries) {
  const auto t = build_transition_matrix(NoiseKind::Pair, 3, 0.4);
  const double want[3][3] = {{0.6, 0.4, 0}, {0, 0.6, 0.4}, {0.4, 0, 0.6}};
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(t(i, j), want[i][j], 1e-15);
  expect_row_stochastic(t);
}

TEST(Transition, ZeroRateIsIdentity) {
  for (auto kind : {NoiseKind::Sym, NoiseKind::Pair}) {
    const auto t = build_transition_matrix(kind, 5, 0.0);
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(t(i, j), i == j ? 1.0 : 0.0);
  }
}

TEST(Transition, RowStochasticAcrossGrid) {
  for (auto kind : {NoiseKind::Sym, NoiseKind::Pair})
    for (std::size_t k : {2u, 3u, 10u, 37u})
      for (double nr : {0.0, 0.1, 0.3, 0.5, 0.99}) expect_row_stochastic(build_transition_matrix(kind, k, nr));
}

TEST(Transition, InvalidArguments) {
  EXPECT_THROW(build_transition_matrix(NoiseKind::Sym, 4, 1.0), std::invalid_argument);
  EXPECT_THROW(build_transition_matrix(NoiseKind::Sym, 4, -0.1), std::invalid_argument);
  EXPECT_THROW(build_transition_matrix(NoiseKind::Pair, 1, 0.2), std::invalid_argument);
}

TEST(Transition, TextRoundTrip) {
  const auto t = build_transition_matrix(NoiseKind::Pair, 5, 0.35);
  const auto back = parse_transition_matrix(format_transition_matrix(t));
  EXPECT_EQ(back.k, t.k);
  EXPECT_EQ(back.kind, t.kind);
  EXPECT_EQ(back.nr, t.nr);
  EXPECT_EQ(back.rows, t.rows);
  EXPECT_EQ(format_transition_matrix(t).substr(0, 11), "5 pair 0.35");
}

TEST(Corrupt, IdentityLeavesLabels) {
  const auto y = random_labels(200, 6, 0.3, 1);
  EXPECT_EQ(corrupt_labels(y, build_transition_matrix(NoiseKind::Sym, 6, 0.0), 9), y);
}

TEST(Corrupt, AllZeroRowsUnchanged) {
  LabelMatrix y(50, 5);
  EXPECT_EQ(corrupt_labels(y, build_transition_matrix(NoiseKind::Sym, 5, 0.9), 3), y);
}

TEST(Corrupt, DeterministicAndNeverAddsPositives) {
  const auto y = random_labels(500, 8, 0.4, 2);
  for (auto kind : {NoiseKind::Sym, NoiseKind::Pair}) {
    const auto t = build_transition_matrix(kind, 8, 0.5);
    const auto a = corrupt_labels(y, t, 17), b = corrupt_labels(y, t, 17);
    EXPECT_EQ(a, b);
    EXPECT_NE(a, corrupt_labels(y, t, 18));
    for (std::size_t r = 0; r < y.rows(); ++r) {
      std::size_t before = 0, after = 0;
      for (std::size_t c = 0; c < 8; ++c) {
        before += y(r, c);
        after += a(r, c);
      }
      EXPECT_LE(after, before);
    }
  }
}

TEST(Corrupt, RowsUseIndependentStreams) {
  // Corrupting a prefix gives the same rows as corrupting the whole matrix.
  const auto y = random_labels(300, 5, 0.4, 3);
  const auto t = build_transition_matrix(NoiseKind::Sym, 5, 0.4);
  const auto full = corrupt_labels(y, t, 5);
  std::vector<std::size_t> idx(100);
  for (std::size_t i = 0; i < 100; ++i) idx[i] = i;
  EXPECT_EQ(corrupt_labels(y.select_rows(idx), t, 5), full.select_rows(idx));
}

TEST(Corrupt, FlipFrequenciesMatchTransitionRows) {
  // One positive per row so moves never collide; count where each positive lands.
  const std::size_t k = 4, n = 100000;
  for (auto kind : {NoiseKind::Sym, NoiseKind::Pair}) {
    const auto t = build_transition_matrix(kind, k, 0.3);
    LabelMatrix y(n, k);
    for (std::size_t r = 0; r < n; ++r) y(r, r % k) = 1;
    const auto noisy = corrupt_labels(y, t, 11);
    std::vector<double> counts(k * k, 0.0);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < k; ++j)
        if (noisy(r, j)) counts[(r % k) * k + j] += 1;
    const double per_row = double(n / k);
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        const double p = t(i, j), freq = counts[i * k + j] / per_row;
        const double sigma = std::sqrt(std::max(p * (1 - p), 1e-12) / per_row);
        EXPECT_LE(std::abs(freq - p), 3 * sigma + 1e-12) << "i=" << i << " j=" << j;
      }
  }
}

TEST(Split, SizesFollowFloorRule) {
  const auto s = split_dataset(100, SplitSpec{0.6, 0.2, 0.2, 0.5, 1});
  EXPECT_EQ(s.train.size(), 60u);
  EXPECT_EQ(s.validation.size(), 10u);
  EXPECT_EQ(s.clean.size(), 10u);
  EXPECT_EQ(s.test.size(), 20u);
}

TEST(Split, DeterministicPartition) {
  const SplitSpec spec{0.6, 0.2, 0.2, 0.15, 42};
  const auto a = split_dataset(997, spec), b = split_dataset(997, spec);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  std::set<std::size_t> all;
  for (const auto* part : {&a.train, &a.validation, &a.clean, &a.test})
    for (auto i : *part) EXPECT_TRUE(all.insert(i).second) << "index " << i << " appears twice";
  EXPECT_EQ(all.size(), 997u);
  EXPECT_EQ(*all.rbegin(), 996u);
}

TEST(Split, RejectsBadFractions) {
  EXPECT_THROW(split_dataset(10, SplitSpec{0.6, 0.3, 0.2, 0.5, 1}), std::invalid_argument);
  EXPECT_THROW(split_dataset(10, SplitSpec{0.6, 0.2, 0.2, 1.5, 1}), std::invalid_argument);
}
