#pragma once
// Frozen random hidden layer: g = sigmoid(A psi).

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "budis/error.hpp"
#include "budis/rng.hpp"

namespace budis {

enum class HiddenWeightDistribution { StandardNormal, Uniform };

struct ElmLayer {
  Eigen::MatrixXd weights;  // h x r, never modified after elm_init
  double sparsity = 0.0;
  std::uint64_t seed = 0;

  Eigen::Index hidden() const { return weights.rows(); }
  Eigen::Index inputs() const { return weights.cols(); }
};

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Number of entries forced to zero for a given shape and sparsity.
inline Eigen::Index elm_zero_count(Eigen::Index h, Eigen::Index r, double sparsity) {
  return static_cast<Eigen::Index>(std::floor(static_cast<double>(h * r) * sparsity + 1e-9));
}

inline ElmLayer elm_init(Eigen::Index h, Eigen::Index r, double sparsity, std::uint64_t seed,
                         HiddenWeightDistribution dist = HiddenWeightDistribution::StandardNormal) {
  require(h >= 1 && r >= 1, "ELM layer needs h >= 1 and r >= 1");
  require(sparsity >= 0.0 && sparsity < 1.0, "ELM sparsity must lie in [0, 1)");
  if (dist != HiddenWeightDistribution::StandardNormal)
    throw ValidationError("only standard Normal hidden weights are supported");

  Rng rng = derive_stream(seed, {0xE1});
  std::normal_distribution<double> normal(0.0, 1.0);
  ElmLayer layer{Eigen::MatrixXd(h, r), sparsity, seed};
  // Column-major fill so the stream order is fixed by (h, r) alone.
  for (Eigen::Index j = 0; j < r; ++j)
    for (Eigen::Index i = 0; i < h; ++i) layer.weights(i, j) = normal(rng);

  const Eigen::Index zeros = elm_zero_count(h, r, sparsity);
  if (zeros > 0) {
    // Partial Fisher-Yates: first `zeros` slots are a uniform subset without replacement.
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(h * r));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    for (Eigen::Index k = 0; k < zeros; ++k) {
      std::uniform_int_distribution<Eigen::Index> pick(k, h * r - 1);
      std::swap(idx[static_cast<std::size_t>(k)], idx[static_cast<std::size_t>(pick(rng))]);
      layer.weights.data()[idx[static_cast<std::size_t>(k)]] = 0.0;
    }
  }
  return layer;
}

inline Eigen::VectorXd elm_transform(const ElmLayer& layer, const Eigen::Ref<const Eigen::VectorXd>& psi) {
  if (psi.size() != layer.inputs())
    throw ValidationError("ELM input has length " + std::to_string(psi.size()) + ", layer expects " +
                          std::to_string(layer.inputs()));
  Eigen::VectorXd out = layer.weights * psi;
  for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = sigmoid(out[i]);
  return out;
}

/// Row-wise transform of an n x r input block into an n x h feature block.
inline Eigen::MatrixXd elm_transform_rows(const ElmLayer& layer, const Eigen::Ref<const Eigen::MatrixXd>& psi) {
  if (psi.cols() != layer.inputs())
    throw ValidationError("ELM input block has " + std::to_string(psi.cols()) + " columns, layer expects " +
                          std::to_string(layer.inputs()));
  Eigen::MatrixXd out = psi * layer.weights.transpose();
  out = out.unaryExpr([](double v) { return sigmoid(v); });
  return out;
}

/// Prepends the constant-1 entry used in place of per-node biases.
inline Eigen::VectorXd with_bias_input(const Eigen::Ref<const Eigen::VectorXd>& psi) {
  Eigen::VectorXd out(psi.size() + 1);
  out[0] = 1.0;
  out.tail(psi.size()) = psi;
  return out;
}

}  // namespace budis
