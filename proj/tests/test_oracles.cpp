#include <gtest/gtest.h>

#include "oracles.hpp"

// Full-size runs of the independent oracle suites.

TEST(Oracles, Metrics) {
  const auto s = oracle::metrics_suite(1000, 11);
  EXPECT_TRUE(s.ok()) << s.detail << " worst " << s.worst;
  EXPECT_EQ(s.cases, 1000u);
}

TEST(Oracles, Losses) {
  const auto s = oracle::loss_suite(12);
  EXPECT_TRUE(s.ok()) << s.detail << " worst " << s.worst;
}

TEST(Oracles, Knn) {
  const auto s = oracle::knn_suite(500, 13);
  EXPECT_TRUE(s.ok()) << s.detail;
}

TEST(Oracles, Correction) {
  lsnpc::CorrectionConfig budget;
  budget.samples_y = 64;
  budget.samples_zhat = 64;
  const auto s = oracle::correction_suite(14, budget, 0.01);
  EXPECT_TRUE(s.ok()) << s.detail << " worst " << s.worst;
}

TEST(Oracles, Gradients) {
  const auto s = oracle::gradient_suite(15, 100);
  EXPECT_TRUE(s.ok()) << s.detail << " worst " << s.worst;
}
