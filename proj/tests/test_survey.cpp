#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "budis/survey.hpp"

TEST(Inclusion, EqualSizes) {
  const std::vector<double> s(10, 3.0);
  for (double pi : budis::pps_inclusion_probabilities(s, 4)) EXPECT_DOUBLE_EQ(pi, 0.4);
}

TEST(Inclusion, CappedAtOne) {
  const std::vector<double> s{1, 2, 1};
  const auto pi = budis::pps_inclusion_probabilities(s, 2);
  EXPECT_DOUBLE_EQ(pi[0], 0.5);
  EXPECT_DOUBLE_EQ(pi[1], 1.0);
  EXPECT_DOUBLE_EQ(pi[2], 0.5);
}

TEST(Inclusion, RejectsBadInput) {
  const std::vector<double> s{1, 0, 1};
  EXPECT_THROW(budis::pps_inclusion_probabilities(s, 1), budis::ValidationError);
  const std::vector<double> ok{1, 1};
  EXPECT_THROW(budis::pps_inclusion_probabilities(ok, 3), budis::ValidationError);
  EXPECT_THROW(budis::pps_inclusion_probabilities(ok, 0), budis::ValidationError);
}

TEST(PoissonSample, EmpiricalInclusionFrequencies) {
  const std::vector<double> s{1, 2, 3, 4, 10};
  const auto pi = budis::pps_inclusion_probabilities(s, 2);
  std::vector<int> hits(s.size(), 0);
  std::mt19937_64 rng(3);
  const int reps = 100000;
  double total_n = 0;
  for (int r = 0; r < reps; ++r) {
    const auto d = budis::poisson_pps_sample(s, 2, rng);
    total_n += static_cast<double>(d.size());
    for (std::size_t k = 0; k < d.size(); ++k) {
      ++hits[d.sampled[k]];
      EXPECT_DOUBLE_EQ(d.weights[k], 1.0 / pi[d.sampled[k]]);
    }
  }
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double se = std::sqrt(pi[i] * (1 - pi[i]) / reps);
    EXPECT_NEAR(hits[i] / static_cast<double>(reps), pi[i], 4 * se + 1e-12) << "unit " << i;
  }
  EXPECT_NEAR(total_n / reps, 2.0, 0.02);
}

TEST(InformativeSize, Examples) {
  EXPECT_DOUBLE_EQ(budis::informative_size(1.0, 1.0, 0.7), 1.7);
  EXPECT_DOUBLE_EQ(budis::informative_size(2.5, 0.0, 0.7), 2.5);
  EXPECT_DOUBLE_EQ(budis::informative_size(2.5, 1.0, 0.0), 2.5);
  EXPECT_THROW(budis::informative_size(0.0, 1.0, 0.7), budis::ValidationError);
}

TEST(DirectEstimate, Examples) {
  const std::vector<double> y{1, 0, 1}, w{1, 2, 1};
  EXPECT_DOUBLE_EQ(*budis::direct_estimate(y, w, true), 0.5);
  EXPECT_NEAR(*budis::direct_estimate(y, w, false), 2.0 / 3.0, 1e-15);
  const std::vector<double> none;
  EXPECT_FALSE(budis::direct_estimate(none, none, true).has_value());
  const std::vector<double> w2{1, 2};
  EXPECT_THROW(budis::direct_estimate(y, w2, true), budis::ValidationError);
}

TEST(DirectEstimate, WeightScaleInvariance) {
  const std::vector<double> y{1, 0, 1, 1, 0};
  const std::vector<double> w{1.5, 2, 0.3, 7, 4};
  std::vector<double> w9;
  for (double v : w) w9.push_back(9.0 * v);
  EXPECT_NEAR(*budis::direct_estimate(y, w, true), *budis::direct_estimate(y, w9, true), 1e-15);
}

TEST(DirectEstimate, InformativeSelectionBiasesUnweightedMean) {
  // Responders are oversampled, so the plain mean sits above the truth while the
  // weighted mean is close to it.
  std::mt19937_64 rng(8);
  std::bernoulli_distribution coin(0.3);
  std::vector<double> y(20000), sizes(20000);
  double truth = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = coin(rng) ? 1.0 : 0.0;
    sizes[i] = budis::informative_size(1.0, y[i], 0.7);
    truth += y[i];
  }
  truth /= static_cast<double>(y.size());
  const auto d = budis::poisson_pps_sample(sizes, 2000, rng);
  std::vector<double> ys;
  for (auto i : d.sampled) ys.push_back(y[i]);
  const double weighted = *budis::direct_estimate(ys, d.weights, true);
  const double plain = *budis::direct_estimate(ys, d.weights, false);
  EXPECT_GT(plain - truth, 0.05);
  EXPECT_LT(std::abs(weighted - truth), 0.03);
}
