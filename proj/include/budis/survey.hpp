#pragma once
// Poisson probability-proportional-to-size sampling and direct area estimators.

#include <algorithm>
#include <cstddef>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "budis/error.hpp"

namespace budis {

struct DesignDraw {
  std::vector<std::size_t> sampled;  // population indices, ascending
  std::vector<double> inclusion;     // pi_i of each sampled unit
  std::vector<double> weights;       // 1 / pi_i

  std::size_t size() const { return sampled.size(); }
};

/// pi_i = min(1, n s_i / sum_j s_j) for every population unit.
inline std::vector<double> pps_inclusion_probabilities(std::span<const double> sizes, double expected_n) {
  require(!sizes.empty(), "population is empty");
  require(expected_n > 0 && expected_n <= static_cast<double>(sizes.size()),
          "expected sample size must lie in (0, population size]");
  double total = 0.0;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (!(sizes[i] > 0.0)) throw ValidationError("size variable of unit " + std::to_string(i) + " is not positive");
    total += sizes[i];
  }
  std::vector<double> pi(sizes.size());
  for (std::size_t i = 0; i < sizes.size(); ++i) pi[i] = std::min(1.0, expected_n * sizes[i] / total);
  return pi;
}

template <class URBG>
DesignDraw poisson_pps_sample(std::span<const double> sizes, double expected_n, URBG& rng) {
  const auto pi = pps_inclusion_probabilities(sizes, expected_n);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  DesignDraw draw;
  for (std::size_t i = 0; i < pi.size(); ++i) {
    if (unif(rng) < pi[i]) {
      draw.sampled.push_back(i);
      draw.inclusion.push_back(pi[i]);
      draw.weights.push_back(1.0 / pi[i]);
    }
  }
  return draw;
}

/// Size variable that makes selection depend on the binary response.
inline double informative_size(double base_weight, double y, double shift) {
  require(base_weight > 0, "base weight must be positive");
  const double size = base_weight + shift * y;
  require(size > 0, "informative size must be positive");
  return size;
}

/// Hajek ratio sum w y / sum w, or the plain mean; nullopt for an empty area.
inline std::optional<double> direct_estimate(std::span<const double> y, std::span<const double> w, bool weighted) {
  require(y.size() == w.size(), "direct estimate needs one weight per response");
  if (y.empty()) return std::nullopt;
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double wi = weighted ? w[i] : 1.0;
    num += wi * y[i];
    den += wi;
  }
  return num / den;
}

}  // namespace budis
