#include <gtest/gtest.h>

#include <random>
#include <vector>

#include "budis/multinomial.hpp"

TEST(StickDecompose, ThreeCategories) {
  const auto one = budis::sb_decompose(1, 3);
  ASSERT_EQ(one.size(), 2u);
  EXPECT_TRUE(one[0].include);
  EXPECT_EQ(one[0].z, 1);
  EXPECT_FALSE(one[1].include);

  const auto two = budis::sb_decompose(2, 3);
  EXPECT_TRUE(two[0].include);
  EXPECT_EQ(two[0].z, 0);
  EXPECT_TRUE(two[1].include);
  EXPECT_EQ(two[1].z, 1);

  const auto three = budis::sb_decompose(3, 3);
  EXPECT_TRUE(three[0].include && three[1].include);
  EXPECT_EQ(three[0].z + three[1].z, 0);
}

TEST(StickDecompose, RejectsOutOfRange) {
  EXPECT_THROW(budis::sb_decompose(0, 3), budis::ValidationError);
  EXPECT_THROW(budis::sb_decompose(4, 3), budis::ValidationError);
  EXPECT_THROW(budis::sb_decompose(1, 1), budis::ValidationError);
}

TEST(StickConditionals, HandExamples) {
  const std::vector<double> p{0.2, 0.3, 0.5};
  const auto pt = budis::sb_conditionals(p);
  EXPECT_DOUBLE_EQ(pt[0], 0.2);
  EXPECT_DOUBLE_EQ(pt[1], 0.375);

  const std::vector<double> half{0.5, 0.5};
  const auto r = budis::sb_reconstruct(half);
  ASSERT_EQ(r.size(), 3u);
  EXPECT_DOUBLE_EQ(r[0], 0.5);
  EXPECT_DOUBLE_EQ(r[1], 0.25);
  EXPECT_DOUBLE_EQ(r[2], 0.25);
}

TEST(StickConditionals, RoundTripOverGrid) {
  for (int k : {3, 4}) {
    const double step = 0.05;
    std::vector<double> p(static_cast<std::size_t>(k));
    int checked = 0;
    // All compositions of 1 on the grid with strictly positive entries.
    std::vector<int> c(static_cast<std::size_t>(k - 1), 1);
    const int total = 20;
    while (true) {
      int used = 0;
      for (int v : c) used += v;
      if (used < total) {
        for (int i = 0; i < k - 1; ++i) p[static_cast<std::size_t>(i)] = c[static_cast<std::size_t>(i)] * step;
        p.back() = (total - used) * step;
        const auto back = budis::sb_reconstruct(budis::sb_conditionals(p));
        double sum = 0.0;
        for (int i = 0; i < k; ++i) {
          EXPECT_NEAR(back[static_cast<std::size_t>(i)], p[static_cast<std::size_t>(i)], 1e-10);
          sum += back[static_cast<std::size_t>(i)];
        }
        EXPECT_NEAR(sum, 1.0, 1e-12);
        ++checked;
      }
      int pos = 0;
      while (pos < k - 1 && ++c[static_cast<std::size_t>(pos)] >= total) c[static_cast<std::size_t>(pos++)] = 1;
      if (pos == k - 1) break;
    }
    EXPECT_GT(checked, 100);
  }
}

TEST(StickReconstruct, ClosedIntervalAndValidation) {
  const std::vector<double> edge{1.0, 0.0};
  const auto r = budis::sb_reconstruct(edge);
  EXPECT_EQ(r, (std::vector<double>{1.0, 0.0, 0.0}));
  const std::vector<double> bad{0.5, 1.2};
  EXPECT_THROW(budis::sb_reconstruct(bad), budis::ValidationError);
}

TEST(StickBreaking, RecoversCategoryFrequencies) {
  const std::vector<double> truth{0.2, 0.3, 0.5};
  std::mt19937_64 rng(5);
  std::discrete_distribution<int> cat(truth.begin(), truth.end());
  const int n = 3000;
  std::vector<int> categories(n);
  for (int& c : categories) c = cat(rng) + 1;
  const Eigen::MatrixXd X = Eigen::MatrixXd::Ones(n, 1);
  const Eigen::MatrixXd G(n, 0);
  budis::BudisSpec spec;
  spec.hidden = 0;
  const auto sb = budis::fit_stick_breaking(X, G, categories, Eigen::VectorXd::Ones(n), 3, spec,
                                            budis::FitKind::VB, 1);
  ASSERT_EQ(sb.fits.size(), 2u);
  std::vector<double> pt;
  for (const auto& f : sb.fits) pt.push_back(budis::sigmoid(f.mean[0]));
  const auto p = budis::sb_reconstruct(pt);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(p[static_cast<std::size_t>(k)], truth[static_cast<std::size_t>(k)], 0.03);
}

TEST(StickBreaking, StickDesignKeepsReachingUnits) {
  const std::vector<int> categories{1, 2, 3, 2, 3};
  const Eigen::MatrixXd X = Eigen::VectorXd::LinSpaced(5, 1, 5);
  Eigen::VectorXd w(5);
  w << 1, 2, 3, 4, 5;
  const auto d2 = budis::stick_design(X, Eigen::MatrixXd(5, 0), categories, w, 3, 2);
  ASSERT_EQ(d2.n(), 4);
  EXPECT_EQ(d2.X(0, 0), 2.0);
  EXPECT_EQ(d2.z, (Eigen::VectorXd(4) << 1, 0, 1, 0).finished());
  EXPECT_NEAR(d2.w_tilde.sum(), 4.0, 1e-12);
  EXPECT_NEAR(d2.w_tilde[0], 4.0 * 2.0 / 14.0, 1e-12);
}
