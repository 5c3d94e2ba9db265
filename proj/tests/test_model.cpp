#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "budis/model.hpp"
#include "oracles.hpp"

namespace {

struct Toy {
  Eigen::MatrixXd X, G;
  Eigen::VectorXd z, w;
};

Toy make_toy(Eigen::Index n, Eigen::Index p, Eigen::Index h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Toy t;
  t.X.resize(n, p);
  t.G.resize(n, h);
  t.z.resize(n);
  t.w.resize(n);
  Eigen::VectorXd beta(p);
  for (Eigen::Index j = 0; j < p; ++j) beta[j] = j == 0 ? -0.3 : 0.8 / static_cast<double>(j);
  for (Eigen::Index i = 0; i < n; ++i) {
    t.X(i, 0) = 1.0;
    for (Eigen::Index j = 1; j < p; ++j) t.X(i, j) = normal(rng);
    for (Eigen::Index j = 0; j < h; ++j) t.G(i, j) = unif(rng);
    const double pr = 1.0 / (1.0 + std::exp(-t.X.row(i).dot(beta)));
    t.z[i] = unif(rng) < pr ? 1.0 : 0.0;
    t.w[i] = 1.0 + 4.0 * unif(rng);
  }
  return t;
}

// Batch-means standard error of a chain's mean.
double batch_se(const Eigen::VectorXd& x, int batches = 40) {
  const Eigen::Index len = x.size() / batches;
  std::vector<double> means;
  for (int b = 0; b < batches; ++b) means.push_back(x.segment(b * len, len).mean());
  return oracle::mean_se(means).se;
}

}  // namespace

TEST(ScaleWeights, SumsToSampleSize) {
  Eigen::VectorXd w(2);
  w << 1, 3;
  const Eigen::VectorXd s = budis::scale_weights(w);
  EXPECT_DOUBLE_EQ(s[0], 0.5);
  EXPECT_DOUBLE_EQ(s[1], 1.5);
  Eigen::VectorXd eq = Eigen::VectorXd::Constant(5, 7.0);
  EXPECT_TRUE(budis::scale_weights(eq).isApprox(Eigen::VectorXd::Ones(5)));
  const Eigen::VectorXd odd = budis::scale_weights(Eigen::VectorXd::LinSpaced(9, 0.1, 40));
  EXPECT_NEAR(odd.sum(), 9.0, 1e-12);
}

TEST(ScaleWeights, RejectsNonPositive) {
  Eigen::VectorXd w(3);
  w << 1, 0, 2;
  EXPECT_THROW(budis::scale_weights(w), budis::ValidationError);
  w << 1, -1, 2;
  EXPECT_THROW(budis::scale_weights(w), budis::ValidationError);
}

TEST(Design, RejectsInconsistentBlocks) {
  Eigen::MatrixXd X = Eigen::MatrixXd::Ones(3, 1);
  Eigen::VectorXd z(3), w = Eigen::VectorXd::Ones(3);
  z << 0, 1, 2;
  EXPECT_THROW(budis::make_design(X, Eigen::MatrixXd(3, 0), z, w), budis::ValidationError);
  z << 0, 1, 1;
  EXPECT_THROW(budis::make_design(X, Eigen::MatrixXd::Constant(3, 1, 1.5), z, w), budis::ValidationError);
  EXPECT_NO_THROW(budis::make_design(X, Eigen::MatrixXd(3, 0), z, w));
}

TEST(GibbsFit, EmptyDataReturnsPrior) {
  budis::BudisSpec spec;
  spec.sigma2_beta = 4.0;
  spec.ig_shape = 3.0;
  spec.ig_rate = 2.0;
  spec.gibbs = {20500, 500, 1};
  auto data = budis::make_design(Eigen::MatrixXd(0, 2), Eigen::MatrixXd(0, 3), Eigen::VectorXd(0), Eigen::VectorXd(0));
  budis::Rng rng(5);
  const auto fit = budis::gibbs_fit(data, spec, rng);
  ASSERT_EQ(fit.draws.rows(), 20000);
  for (int j = 0; j < 2; ++j) {
    const Eigen::VectorXd b = fit.draws.col(j);
    EXPECT_NEAR(b.mean(), 0.0, 4.0 * std::sqrt(4.0 / 20000));
    EXPECT_NEAR((b.array() - b.mean()).square().mean(), 4.0, 0.2);
  }
  // s2_eta ~ IG(3, 2): mean 1; eta marginal variance b / (a - 1) = 1.
  const Eigen::VectorXd s2 = fit.draws.col(5);
  EXPECT_NEAR(s2.mean(), 1.0, 4.0 * batch_se(s2));
  const Eigen::VectorXd eta = fit.draws.col(2);
  EXPECT_NEAR(eta.array().square().mean(), 1.0, 0.1);
}

TEST(VbFit, EmptyDataBetaBlockIsPrior) {
  budis::BudisSpec spec;
  spec.sigma2_beta = 4.0;
  spec.ig_shape = 3.0;
  spec.ig_rate = 2.0;
  auto data = budis::make_design(Eigen::MatrixXd(0, 2), Eigen::MatrixXd(0, 3), Eigen::VectorXd(0), Eigen::VectorXd(0));
  const auto fit = budis::vb_fit(data, spec);
  EXPECT_LT(fit.mean.cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_NEAR(fit.cov(0, 0), 4.0, 1e-12);
  EXPECT_NEAR(fit.cov(1, 1), 4.0, 1e-12);
  EXPECT_NEAR(fit.cov(0, 1), 0.0, 1e-14);
  EXPECT_DOUBLE_EQ(fit.ig_shape, 3.0 + 1.5);
}

TEST(VbFit, InverseGammaFactorClosedForm) {
  const Toy t = make_toy(80, 2, 4, 3);
  budis::BudisSpec spec;
  spec.ig_shape = 0.5;
  spec.ig_rate = 0.5;
  const auto data = budis::make_design(t.X, t.G, t.z, t.w);
  const auto fit = budis::vb_fit(data, spec);
  const Eigen::VectorXd eta = fit.mean.tail(4);
  const double expect_rate = 0.5 + 0.5 * (eta.squaredNorm() + fit.cov.bottomRightCorner(4, 4).trace());
  EXPECT_DOUBLE_EQ(fit.ig_shape, 0.5 + 2.0);
  EXPECT_NEAR(fit.ig_rate, expect_rate, 1e-6 * expect_rate);
}

TEST(GibbsFit, MatchesReferenceSampler) {
  const Toy t = make_toy(30, 2, 0, 11);
  budis::BudisSpec spec;
  spec.sigma2_beta = 10.0;
  spec.gibbs = {21000, 1000, 1};
  auto data = budis::make_design(t.X, t.G, t.z, Eigen::VectorXd::Ones(30));
  budis::Rng rng(21);
  const auto fit = budis::gibbs_fit(data, spec, rng);
  std::mt19937_64 ref_rng(22);
  const Eigen::MatrixXd ref = oracle::reference_logistic_gibbs(t.X, t.z, 10.0, 21000, 1000, ref_rng);
  for (int j = 0; j < 2; ++j) {
    const Eigen::VectorXd a = fit.draws.col(j), b = ref.col(j);
    const double se = std::hypot(batch_se(a), batch_se(b));
    EXPECT_NEAR(a.mean(), b.mean(), 3.5 * se) << "coefficient " << j;
    const double sa = std::sqrt((a.array() - a.mean()).square().mean());
    const double sb = std::sqrt((b.array() - b.mean()).square().mean());
    EXPECT_NEAR(sa / sb, 1.0, 0.05);
  }
}

TEST(GibbsFit, EqualWeightsReproduceUnweightedChainExactly) {
  const Toy t = make_toy(40, 3, 5, 2);
  budis::BudisSpec spec;
  spec.gibbs = {300, 100, 2};
  auto data = budis::make_design(t.X, t.G, t.z, Eigen::VectorXd::Constant(40, 2.0));
  budis::Rng r1(9), r2(9);
  const auto a = budis::gibbs_fit(data, spec, r1, budis::Weighting::Pseudo);
  const auto b = budis::gibbs_fit(data, spec, r2, budis::Weighting::Unweighted);
  ASSERT_EQ(a.draws.rows(), 100);
  EXPECT_TRUE((a.draws.array() == b.draws.array()).all());
}

TEST(GibbsFit, DeterministicAndThinned) {
  const Toy t = make_toy(25, 2, 3, 4);
  budis::BudisSpec spec;
  spec.gibbs = {50, 10, 4};
  auto data = budis::make_design(t.X, t.G, t.z, t.w);
  budis::Rng r1(3), r2(3);
  const auto a = budis::gibbs_fit(data, spec, r1);
  const auto b = budis::gibbs_fit(data, spec, r2);
  EXPECT_EQ(a.draws.rows(), 10);
  EXPECT_EQ(a.draws.cols(), 2 + 3 + 1);
  EXPECT_TRUE((a.draws.array() == b.draws.array()).all());
  EXPECT_TRUE((a.draws.col(5).array() > 0).all());
}

TEST(VbFit, ElboNeverDecreasesAndConverges) {
  const Toy t = make_toy(150, 3, 12, 6);
  budis::BudisSpec spec;
  const auto fit = budis::vb_fit(budis::make_design(t.X, t.G, t.z, t.w), spec);
  ASSERT_GE(fit.elbo.size(), 2u);
  for (std::size_t i = 1; i < fit.elbo.size(); ++i) EXPECT_GE(fit.elbo[i] - fit.elbo[i - 1], -budis::kElboSlack);
  EXPECT_TRUE(fit.converged);
  EXPECT_EQ(fit.iterations, static_cast<int>(fit.elbo.size()));
}

TEST(VbFit, AgreesWithGibbsOnLinearBlock) {
  const Toy t = make_toy(200, 3, 6, 8);
  budis::BudisSpec spec;
  spec.gibbs = {4000, 1000, 1};
  const auto data = budis::make_design(t.X, t.G, t.z, t.w);
  budis::Rng rng(12);
  const auto g = budis::gibbs_fit(data, spec, rng);
  const auto v = budis::vb_fit(data, spec);
  const Eigen::VectorXd gm = g.posterior_mean();
  for (int j = 1; j < 3; ++j) EXPECT_NEAR(v.mean[j], gm[j], 0.1) << "coefficient " << j;
}

TEST(PredictProba, HandExamples) {
  budis::FitResult fit;
  fit.kind = budis::FitKind::Gibbs;
  fit.p = 1;
  fit.h = 1;
  fit.draws.resize(2, 3);
  fit.draws << 0.0, 0.0, 1.0, std::log(9.0), 0.0, 1.0;
  Eigen::VectorXd x(1), g(1);
  x << 1.0;
  g << 0.3;
  EXPECT_DOUBLE_EQ(budis::predict_proba(fit, x, g, 0), 0.5);
  EXPECT_NEAR(budis::predict_proba(fit, x, g, 1), 0.9, 1e-15);
  EXPECT_THROW(budis::predict_proba(fit, x, g, 2), budis::ValidationError);
  EXPECT_THROW(budis::predict_proba(fit, Eigen::VectorXd::Ones(2), g, 0), budis::ValidationError);

  // A random draw picks one of the two rows with equal probability.
  budis::Rng rng(1);
  int high = 0;
  const int trials = 20000;
  for (int i = 0; i < trials; ++i) {
    const double v = budis::predict_proba(fit, x, g, rng);
    ASSERT_TRUE(v == 0.5 || std::abs(v - 0.9) < 1e-15);
    high += v > 0.6;
  }
  EXPECT_NEAR(high / static_cast<double>(trials), 0.5, 4.0 * 0.5 / std::sqrt(trials));
}

TEST(PredictProba, VbDrawsFollowGaussian) {
  budis::FitResult fit;
  fit.kind = budis::FitKind::VB;
  fit.p = 1;
  fit.h = 0;
  fit.mean = Eigen::VectorXd::Constant(1, 0.4);
  fit.set_covariance(Eigen::MatrixXd::Constant(1, 1, 0.09));
  budis::Rng rng(2);
  std::vector<double> draws;
  for (int i = 0; i < 50000; ++i) draws.push_back(budis::sample_theta(fit, rng)[0]);
  const auto ms = oracle::mean_se(draws);
  EXPECT_NEAR(ms.mean, 0.4, 4 * ms.se);
  EXPECT_NEAR(ms.se * std::sqrt(50000.0), 0.3, 0.01);
}
