#pragma once
// Polya-Gamma PG(b, c) primitives.
//
// b == 1 draws use Devroye's alternating-series sampler for J*(1, z), exact.
// Any other b > 0 uses the series representation
//     PG(b, c) = 1/(2 pi^2) * sum_k g_k / ((k - 1/2)^2 + c^2 / (4 pi^2)),  g_k ~ Gamma(b, 1),
// truncated after kPgTruncation terms; the remainder is replaced by one Gamma
// variate whose mean and variance equal those of the omitted terms.

#include <cmath>
#include <numbers>
#include <random>
#include <utility>

#include "budis/error.hpp"

namespace budis {

struct PgParams {
  double b = 1.0;  // shape, > 0
  double c = 0.0;  // tilt; PG(b, c) and PG(b, -c) coincide

  void validate() const {
    if (!(b > 0.0) || !std::isfinite(b)) throw ValidationError("PG shape b must be positive and finite");
    if (!std::isfinite(c)) throw ValidationError("PG tilt c must be finite");
  }
};

inline constexpr int kPgTruncation = 20;

/// E[PG(b, c)] = b / (2c) * tanh(c / 2), with limit b / 4 at c = 0.
inline double pg_mean(const PgParams& params) {
  const double c = std::abs(params.c);
  if (c < 1e-4) return 0.25 * params.b * (1.0 - c * c / 12.0 + c * c * c * c / 120.0);
  return params.b / (2.0 * c) * std::tanh(0.5 * c);
}

/// Var[PG(b, c)] = b / (4 c^3) * (2 tanh(c/2) - c sech^2(c/2)); b / 24 at c = 0.
inline double pg_variance(const PgParams& params) {
  const double c = std::abs(params.c);
  if (c < 1e-3) {
    const double c2 = c * c;
    return params.b * (1.0 / 24.0 - c2 / 120.0 + 17.0 * c2 * c2 / 13440.0);
  }
  const double sech = 1.0 / std::cosh(0.5 * c);
  return params.b / (4.0 * c * c * c) * (2.0 * std::tanh(0.5 * c) - c * sech * sech);
}

namespace detail {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kDevroyeCut = 0.64;

inline double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

// n-th coefficient of the alternating series for the J*(1, 0) density.
inline double devroye_coef(int n, double x) {
  const double k = (n + 0.5) * kPi;
  if (x > kDevroyeCut) return k * std::exp(-0.5 * k * k * x);
  if (x <= 0.0) return 0.0;
  const double log_val = -1.5 * (std::log(0.5 * kPi) + std::log(x)) + std::log(k) -
                         2.0 * (n + 0.5) * (n + 0.5) / x;
  return std::exp(log_val);
}

// Probability that the proposal comes from the exponential piece right of the cut.
inline double devroye_right_mass(double z) {
  const double t = kDevroyeCut;
  const double fz = 0.125 * kPi * kPi + 0.5 * z * z;
  const double rt = std::sqrt(1.0 / t);
  const double lo = rt * (t * z - 1.0);
  const double hi = -rt * (t * z + 1.0);
  const double x0 = std::log(fz) + fz * t;
  const double xb = x0 - z + std::log(std_normal_cdf(lo));
  const double xa = x0 + z + std::log(std_normal_cdf(hi));
  const double q_over_p = 4.0 / kPi * (std::exp(xb) + std::exp(xa));
  return 1.0 / (1.0 + q_over_p);
}

// Inverse-Gaussian(1/z, 1) truncated to (0, cut].
template <class URBG>
double truncated_inverse_gaussian(double z, URBG& rng) {
  const double t = kDevroyeCut;
  std::exponential_distribution<double> expo(1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  if (z < 1.0 / t) {
    double x = 0.0;
    for (;;) {
      double e1 = expo(rng);
      double e2 = expo(rng);
      while (e1 * e1 > 2.0 * e2 / t) {
        e1 = expo(rng);
        e2 = expo(rng);
      }
      const double r = 1.0 + e1 * t;
      x = t / (r * r);
      if (unif(rng) <= std::exp(-0.5 * z * z * x)) return x;
    }
  }
  const double mu = 1.0 / z;
  std::normal_distribution<double> norm(0.0, 1.0);
  double x = t + 1.0;
  while (x > t) {
    double y = norm(rng);
    y *= y;
    const double mu_y = mu * y;
    x = mu + 0.5 * mu * mu_y - 0.5 * mu * std::sqrt(4.0 * mu_y + mu_y * mu_y);
    if (unif(rng) > mu / (mu + x)) x = mu * mu / x;
  }
  return x;
}

// Exact draw from J*(1, z), z >= 0.
template <class URBG>
double devroye_jstar(double z, URBG& rng) {
  const double fz = 0.125 * kPi * kPi + 0.5 * z * z;
  const double right_mass = devroye_right_mass(z);
  std::exponential_distribution<double> expo(1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (;;) {
    const double x = unif(rng) < right_mass ? kDevroyeCut + expo(rng) / fz
                                             : truncated_inverse_gaussian(z, rng);
    double s = devroye_coef(0, x);
    const double y = unif(rng) * s;
    for (int n = 1;; ++n) {
      if (n % 2 == 1) {
        s -= devroye_coef(n, x);
        if (y <= s) return x;
      } else {
        s += devroye_coef(n, x);
        if (y > s) break;
      }
    }
  }
}

// sum_{k > K} f(k - 1/2) for f(x) = 1/(x^2 + s^2) and f(x)^2, by Euler-Maclaurin
// (midpoint form, two correction terms).
struct TailSums {
  double first;
  double second;
};

inline TailSums series_tail(int trunc, double s) {
  const double K = trunc;
  const double y = s / K;
  const double q = K * K + s * s;
  const double int1 = s > 0.0 ? std::atan(y) / s : 1.0 / K;
  double phi;  // atan(y)/y^3 - 1/(y^2 (1 + y^2))
  if (y < 0.05) {
    const double y2 = y * y;
    phi = 2.0 / 3.0 - y2 * (4.0 / 5.0 - y2 * (6.0 / 7.0 - y2 * (8.0 / 9.0 - y2 * 10.0 / 11.0)));
  } else {
    phi = std::atan(y) / (y * y * y) - 1.0 / (y * y * (1.0 + y * y));
  }
  const double int2 = phi / (2.0 * K * K * K);
  const double q4 = q * q * q * q;
  const double first = int1 - K / (12.0 * q * q) + 7.0 / 240.0 * K * (K * K - s * s) / q4;
  const double second = int2 - K / (6.0 * q * q * q) + 7.0 / 240.0 * K * (5.0 * K * K - 3.0 * s * s) / (q4 * q);
  return {first, second};
}

template <class URBG>
double pg_gamma_series(double b, double c, URBG& rng, int truncation = kPgTruncation) {
  const double s = std::abs(c) / (2.0 * kPi);
  const double s2 = s * s;
  std::gamma_distribution<double> gamma(b, 1.0);
  double acc = 0.0;
  for (int k = 1; k <= truncation; ++k) {
    const double h = k - 0.5;
    acc += gamma(rng) / (h * h + s2);
  }
  const TailSums tail = series_tail(truncation, s);
  // Tail term in the same 1/(2 pi^2) units as acc.
  const double mean = b * tail.first;
  const double var = b * tail.second;
  if (mean > 0.0 && var > 0.0) {
    std::gamma_distribution<double> rest(mean * mean / var, var / mean);
    acc += rest(rng);
  }
  return acc / (2.0 * kPi * kPi);
}

}  // namespace detail

/// One draw from PG(b, c). Non-integer b is supported.
template <class URBG>
double pg_sample(const PgParams& params, URBG& rng) {
  params.validate();
  const double c = std::abs(params.c);
  if (params.b == 1.0) return 0.25 * detail::devroye_jstar(0.5 * c, rng);
  return detail::pg_gamma_series(params.b, c, rng);
}

/// Both sides of (e^psi)^a / (1 + e^psi)^b = 2^-b e^{kappa psi} E[exp(-omega psi^2 / 2)],
/// omega ~ PG(b, 0), kappa = a - b/2. The right side is a Monte Carlo average.
template <class URBG>
std::pair<double, double> pg_identity_check(double a, double b, double psi, URBG& rng,
                                            long draws = 1'000'000) {
  PgParams params{b, 0.0};
  params.validate();
  require(draws > 0, "pg_identity_check needs at least one draw");
  const double log1pexp = psi > 0 ? psi + std::log1p(std::exp(-psi)) : std::log1p(std::exp(psi));
  const double lhs = std::exp(a * psi - b * log1pexp);
  double acc = 0.0;
  for (long i = 0; i < draws; ++i) acc += std::exp(-0.5 * pg_sample(params, rng) * psi * psi);
  const double kappa = a - 0.5 * b;
  const double rhs = std::exp(-b * std::numbers::ln2 + kappa * psi) * acc / static_cast<double>(draws);
  return {lhs, rhs};
}

}  // namespace budis
