#pragma once
// Weighted pseudo-likelihood Binomial regression with a linear block x'beta and a
// random-feature block g'eta:
//
//   z_i | p_i  ~  Bin(n_i, p_i)^{w~_i},   logit(p_i) = x_i'beta + g_i'eta
//   beta ~ N(0, s2_beta I),  eta | s2_eta ~ N(0, s2_eta I),  s2_eta ~ IG(a, b)
//
// Polya-Gamma augmentation of the weighted likelihood gives PG(w~_i n_i, psi_i)
// latents and kappa_i = w~_i (z_i - n_i / 2). Both fitters update (beta, eta)
// as one Gaussian block.

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <boost/math/special_functions/digamma.hpp>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "budis/elm.hpp"
#include "budis/error.hpp"
#include "budis/pg.hpp"

namespace budis {

struct GibbsOptions {
  int iterations = 2000;
  int burn_in = 1000;
  int thin = 1;
};

struct VbOptions {
  int max_iterations = 500;
  double tolerance = 1e-6;
};

struct BudisSpec {
  double sigma2_beta = 1000.0;
  double ig_shape = 0.5;  // a
  double ig_rate = 0.5;   // b
  int hidden = 240;
  GibbsOptions gibbs;
  VbOptions vb;

  void validate() const {
    require(sigma2_beta > 0 && ig_shape > 0 && ig_rate > 0, "sigma2_beta, a and b must be positive");
    require(hidden >= 0, "hidden node count must be nonnegative");
    require(gibbs.iterations > 0 && gibbs.burn_in >= 0 && gibbs.burn_in < gibbs.iterations && gibbs.thin >= 1,
            "Gibbs options need iterations > burn_in >= 0 and thin >= 1");
    require(vb.max_iterations >= 1 && vb.tolerance > 0, "VB options need max_iterations >= 1 and tolerance > 0");
  }
};

/// w~_i = n w_i / sum_j w_j.
inline Eigen::VectorXd scale_weights(const Eigen::Ref<const Eigen::VectorXd>& w) {
  for (Eigen::Index i = 0; i < w.size(); ++i)
    if (!(w[i] > 0.0) || !std::isfinite(w[i]))
      throw ValidationError("survey weight at position " + std::to_string(i) + " is not positive");
  if (w.size() == 0) return w;
  return w * (static_cast<double>(w.size()) / w.sum());
}

struct DesignData {
  Eigen::MatrixXd X;         // n x p linear covariates
  Eigen::MatrixXd G;         // n x h hidden features
  Eigen::VectorXd z;         // successes
  Eigen::VectorXd n_trials;  // trials per unit
  Eigen::VectorXd w_tilde;   // scaled weights, sum n

  Eigen::Index n() const { return X.rows(); }
  Eigen::Index p() const { return X.cols(); }
  Eigen::Index h() const { return G.cols(); }

  void validate() const {
    const Eigen::Index n = X.rows();
    require(G.rows() == n && z.size() == n && n_trials.size() == n && w_tilde.size() == n,
            "design blocks disagree on the number of units");
    require(X.cols() >= 1 || G.cols() >= 1, "design has no columns");
    if (n > 0) {
      require(std::abs(w_tilde.sum() - static_cast<double>(n)) <= 1e-8 * std::max<double>(1.0, n),
              "scaled weights must sum to the sample size");
      require((w_tilde.array() > 0).all(), "scaled weights must be positive");
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      require(n_trials[i] >= 1 && z[i] >= 0 && z[i] <= n_trials[i],
              "response of unit " + std::to_string(i) + " is outside 0..n_trials");
    }
    require(G.size() == 0 || ((G.array() >= 0).all() && (G.array() <= 1).all()), "hidden features must lie in [0, 1]");
  }
};

/// Bernoulli design with weights scaled from raw survey weights.
inline DesignData make_design(Eigen::MatrixXd X, Eigen::MatrixXd G, Eigen::VectorXd z,
                              const Eigen::Ref<const Eigen::VectorXd>& raw_weights) {
  DesignData d;
  d.n_trials = Eigen::VectorXd::Ones(X.rows());
  d.w_tilde = scale_weights(raw_weights);
  d.X = std::move(X);
  d.G = std::move(G);
  d.z = std::move(z);
  d.validate();
  return d;
}

enum class Weighting { Pseudo, Unweighted };
enum class FitKind { Gibbs, VB };

struct FitResult {
  FitKind kind = FitKind::VB;
  Eigen::Index p = 0;
  Eigen::Index h = 0;

  // Gibbs: one row per retained draw, columns beta (p), eta (h), s2_eta.
  Eigen::MatrixXd draws;

  // VB: q(theta) = N(mean, cov), q(s2_eta) = IG(ig_shape, ig_rate).
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  Eigen::MatrixXd cov_factor;  // lower Cholesky factor of cov
  double ig_shape = 0.0;
  double ig_rate = 0.0;
  std::vector<double> elbo;
  int iterations = 0;
  bool converged = false;

  Eigen::Index dim() const { return p + h; }

  Eigen::Index draw_count() const { return kind == FitKind::Gibbs ? draws.rows() : 0; }

  Eigen::VectorXd theta_draw(Eigen::Index i) const {
    if (kind != FitKind::Gibbs) throw ValidationError("indexed draws exist only for Gibbs fits");
    if (i < 0 || i >= draws.rows()) throw ValidationError("posterior draw index out of range");
    return draws.row(i).head(dim()).transpose();
  }

  Eigen::VectorXd posterior_mean() const {
    if (kind == FitKind::VB) return mean;
    return draws.leftCols(dim()).colwise().mean().transpose();
  }

  void set_covariance(Eigen::MatrixXd c) {
    cov = std::move(c);
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) throw NumericalError("VB covariance is not positive definite");
    cov_factor = llt.matrixL();
  }
};

namespace detail {

inline Eigen::MatrixXd combined_design(const DesignData& data) {
  Eigen::MatrixXd c(data.n(), data.p() + data.h());
  c << data.X, data.G;
  return c;
}

inline void pg_terms(const DesignData& data, Weighting weighting, Eigen::VectorXd& shape, Eigen::VectorXd& kappa) {
  const Eigen::Index n = data.n();
  shape.resize(n);
  kappa.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double w = weighting == Weighting::Pseudo ? data.w_tilde[i] : 1.0;
    shape[i] = w * data.n_trials[i];
    kappa[i] = w * (data.z[i] - 0.5 * data.n_trials[i]);
  }
}

inline Eigen::VectorXd prior_precision(Eigen::Index p, Eigen::Index h, double sigma2_beta, double inv_sigma2_eta) {
  Eigen::VectorXd prec(p + h);
  prec.head(p).setConstant(1.0 / sigma2_beta);
  prec.tail(h).setConstant(inv_sigma2_eta);
  return prec;
}

// C' diag(omega) C + diag(prior).
inline Eigen::MatrixXd posterior_precision(const Eigen::MatrixXd& c, const Eigen::VectorXd& omega,
                                           const Eigen::VectorXd& prior) {
  const Eigen::Index d = c.cols();
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(d, d);
  if (c.rows() > 0) {
    Eigen::MatrixXd scaled = c.array().colwise() * omega.array().sqrt();
    q.selfadjointView<Eigen::Lower>().rankUpdate(scaled.transpose());
  }
  q.diagonal() += prior;
  return q.selfadjointView<Eigen::Lower>();
}

inline double log_cosh(double x) {
  x = std::abs(x);
  return x + std::log1p(std::exp(-2.0 * x)) - std::numbers::ln2;
}

}  // namespace detail

template <class URBG>
FitResult gibbs_fit(const DesignData& data, const BudisSpec& spec, URBG& rng,
                    Weighting weighting = Weighting::Pseudo) {
  spec.validate();
  data.validate();
  const Eigen::Index n = data.n(), p = data.p(), h = data.h(), d = p + h;
  const Eigen::MatrixXd c = detail::combined_design(data);
  Eigen::VectorXd shape, kappa;
  detail::pg_terms(data, weighting, shape, kappa);
  const Eigen::VectorXd ckappa = c.transpose() * kappa;

  const int retained = (spec.gibbs.iterations - spec.gibbs.burn_in) / spec.gibbs.thin;
  FitResult fit;
  fit.kind = FitKind::Gibbs;
  fit.p = p;
  fit.h = h;
  fit.draws.resize(retained, d + 1);
  fit.iterations = spec.gibbs.iterations;

  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd omega(n);
  Eigen::VectorXd eps(d);
  double sigma2_eta = 1.0;
  const double post_shape = spec.ig_shape + 0.5 * static_cast<double>(h);
  int row = 0;

  for (int t = 0; t < spec.gibbs.iterations; ++t) {
    const Eigen::VectorXd psi = c * theta;
    for (Eigen::Index i = 0; i < n; ++i) omega[i] = pg_sample(PgParams{shape[i], psi[i]}, rng);

    const Eigen::VectorXd prior = detail::prior_precision(p, h, spec.sigma2_beta, 1.0 / sigma2_eta);
    Eigen::LLT<Eigen::MatrixXd> llt(detail::posterior_precision(c, omega, prior));
    if (llt.info() != Eigen::Success)
      throw NumericalError("posterior precision is not positive definite (degenerate design?)");
    for (Eigen::Index j = 0; j < d; ++j) eps[j] = normal(rng);
    theta = llt.solve(ckappa) + llt.matrixU().solve(eps);

    const double post_rate = spec.ig_rate + 0.5 * theta.tail(h).squaredNorm();
    std::gamma_distribution<double> gamma(post_shape, 1.0 / post_rate);
    sigma2_eta = 1.0 / gamma(rng);

    const int past = t - spec.gibbs.burn_in + 1;
    if (past > 0 && past % spec.gibbs.thin == 0 && row < retained) {
      fit.draws.row(row).head(d) = theta.transpose();
      fit.draws(row, d) = sigma2_eta;
      ++row;
    }
  }
  fit.converged = true;
  return fit;
}

inline constexpr double kElboSlack = 1e-6;

inline FitResult vb_fit(const DesignData& data, const BudisSpec& spec, Weighting weighting = Weighting::Pseudo) {
  spec.validate();
  data.validate();
  const Eigen::Index n = data.n(), p = data.p(), h = data.h(), d = p + h;
  const Eigen::MatrixXd c = detail::combined_design(data);
  Eigen::VectorXd shape, kappa;
  detail::pg_terms(data, weighting, shape, kappa);
  const Eigen::VectorXd ckappa = c.transpose() * kappa;

  const double a = spec.ig_shape, b = spec.ig_rate;
  const double post_shape = a + 0.5 * static_cast<double>(h);
  const double log2pi = std::log(2.0 * std::numbers::pi);

  Eigen::VectorXd e_omega = shape * 0.25;
  double e_inv_sigma2 = a / b;
  double post_rate = b;

  FitResult fit;
  fit.kind = FitKind::VB;
  fit.p = p;
  fit.h = h;

  Eigen::VectorXd m;
  Eigen::MatrixXd s;
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(d, d);
  for (int it = 1; it <= spec.vb.max_iterations; ++it) {
    // q(theta)
    const Eigen::VectorXd prior = detail::prior_precision(p, h, spec.sigma2_beta, e_inv_sigma2);
    Eigen::LLT<Eigen::MatrixXd> llt(detail::posterior_precision(c, e_omega, prior));
    if (llt.info() != Eigen::Success)
      throw NumericalError("VB precision is not positive definite (degenerate design?)");
    m = llt.solve(ckappa);
    s = llt.solve(eye);
    const Eigen::MatrixXd& lower = llt.matrixLLT();
    double log_det_s = 0.0;
    for (Eigen::Index j = 0; j < d; ++j) log_det_s -= 2.0 * std::log(lower(j, j));

    // q(s2_eta)
    const double e_eta_sq = m.tail(h).squaredNorm() + s.bottomRightCorner(h, h).trace();
    post_rate = b + 0.5 * e_eta_sq;
    e_inv_sigma2 = post_shape / post_rate;
    const double e_log_sigma2 = std::log(post_rate) - boost::math::digamma(post_shape);

    // q(omega)
    const Eigen::VectorXd mean_psi = c * m;
    Eigen::VectorXd var_psi = Eigen::VectorXd::Zero(n);
    if (n > 0) var_psi = ((c * s).array() * c.array()).rowwise().sum().matrix();
    double lik = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double tilt = std::sqrt(mean_psi[i] * mean_psi[i] + std::max(0.0, var_psi[i]));
      e_omega[i] = pg_mean(PgParams{shape[i], tilt});
      lik += -shape[i] * std::numbers::ln2 + kappa[i] * mean_psi[i] - shape[i] * detail::log_cosh(0.5 * tilt);
    }

    const double e_beta_sq = m.head(p).squaredNorm() + s.topLeftCorner(p, p).trace();
    const double log_p_beta =
        -0.5 * static_cast<double>(p) * (log2pi + std::log(spec.sigma2_beta)) - 0.5 * e_beta_sq / spec.sigma2_beta;
    const double log_p_eta =
        -0.5 * static_cast<double>(h) * (log2pi + e_log_sigma2) - 0.5 * e_inv_sigma2 * e_eta_sq;
    const double log_p_sigma = a * std::log(b) - std::lgamma(a) - (a + 1.0) * e_log_sigma2 - b * e_inv_sigma2;
    const double entropy_theta = 0.5 * static_cast<double>(d) * (1.0 + log2pi) + 0.5 * log_det_s;
    const double entropy_sigma = post_shape + std::log(post_rate) + std::lgamma(post_shape) -
                                 (1.0 + post_shape) * boost::math::digamma(post_shape);
    const double elbo = lik + log_p_beta + log_p_eta + log_p_sigma + entropy_theta + entropy_sigma;
    if (!std::isfinite(elbo)) throw NumericalError("VB evidence lower bound is not finite");

    fit.iterations = it;
    if (!fit.elbo.empty()) {
      const double change = elbo - fit.elbo.back();
      if (change < -kElboSlack)
        throw NumericalError("VB evidence lower bound decreased by " + std::to_string(-change) + " at iteration " +
                             std::to_string(it));
      fit.elbo.push_back(elbo);
      if (std::abs(change) < spec.vb.tolerance) {
        fit.converged = true;
        break;
      }
    } else {
      fit.elbo.push_back(elbo);
    }
  }

  fit.mean = m;
  fit.set_covariance(s);
  fit.ig_shape = post_shape;
  fit.ig_rate = post_rate;
  return fit;
}

/// A draw of theta = (beta, eta): a uniformly chosen retained Gibbs draw, or a
/// sample from the VB Gaussian factor.
template <std::uniform_random_bit_generator URBG>
Eigen::VectorXd sample_theta(const FitResult& fit, URBG& rng) {
  if (fit.kind == FitKind::Gibbs) {
    if (fit.draws.rows() == 0) throw ValidationError("Gibbs fit has no retained draws");
    std::uniform_int_distribution<Eigen::Index> pick(0, fit.draws.rows() - 1);
    return fit.theta_draw(pick(rng));
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd eps(fit.dim());
  for (Eigen::Index j = 0; j < eps.size(); ++j) eps[j] = normal(rng);
  return fit.mean + fit.cov_factor * eps;
}

inline double linear_predictor(const FitResult& fit, const Eigen::Ref<const Eigen::VectorXd>& x,
                               const Eigen::Ref<const Eigen::VectorXd>& g, const Eigen::Ref<const Eigen::VectorXd>& theta) {
  if (x.size() != fit.p || g.size() != fit.h)
    throw ValidationError("covariate lengths (" + std::to_string(x.size()) + ", " + std::to_string(g.size()) +
                          ") do not match fit (" + std::to_string(fit.p) + ", " + std::to_string(fit.h) + ")");
  return x.dot(theta.head(fit.p)) + g.dot(theta.tail(fit.h));
}

/// sigmoid(x'beta + g'eta) under retained Gibbs draw `draw`.
inline double predict_proba(const FitResult& fit, const Eigen::Ref<const Eigen::VectorXd>& x,
                            const Eigen::Ref<const Eigen::VectorXd>& g, Eigen::Index draw) {
  return sigmoid(linear_predictor(fit, x, g, fit.theta_draw(draw)));
}

/// sigmoid(x'beta + g'eta) under a posterior draw taken from `rng`.
template <std::uniform_random_bit_generator URBG>
double predict_proba(const FitResult& fit, const Eigen::Ref<const Eigen::VectorXd>& x,
                     const Eigen::Ref<const Eigen::VectorXd>& g, URBG& rng) {
  return sigmoid(linear_predictor(fit, x, g, sample_theta(fit, rng)));
}

}  // namespace budis
