#pragma once
// Stick-breaking reduction of a K-category response to K-1 conditional Binomials.
// Category k (1-based) is "taken" at stick k; a unit reaches stick k only if its
// category is >= k.

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "budis/error.hpp"
#include "budis/model.hpp"
#include "budis/rng.hpp"

namespace budis {

struct StickSlot {
  int z = 0;
  bool include = false;
};

inline std::vector<StickSlot> sb_decompose(int category, int k) {
  require(k >= 2, "stick-breaking needs at least two categories");
  require(category >= 1 && category <= k, "category " + std::to_string(category) + " outside 1.." + std::to_string(k));
  std::vector<StickSlot> slots(static_cast<std::size_t>(k - 1));
  for (int s = 1; s < k; ++s) {
    auto& slot = slots[static_cast<std::size_t>(s - 1)];
    slot.include = category >= s;
    slot.z = category == s ? 1 : 0;
  }
  return slots;
}

/// p~_k = p_k / (1 - sum_{j<k} p_j), k = 1..K-1.
inline std::vector<double> sb_conditionals(std::span<const double> probs) {
  require(probs.size() >= 2, "need at least two category probabilities");
  std::vector<double> out(probs.size() - 1);
  double used = 0.0;
  for (std::size_t k = 0; k + 1 < probs.size(); ++k) {
    require(probs[k] >= 0, "category probabilities must be nonnegative");
    const double rest = 1.0 - used;
    out[k] = rest > 0 ? probs[k] / rest : 0.0;
    used += probs[k];
  }
  return out;
}

/// p_1 = p~_1, p_k = p~_k prod_{j<k} (1 - p~_j), p_K = remainder.
inline std::vector<double> sb_reconstruct(std::span<const double> ptilde) {
  require(!ptilde.empty(), "need at least one conditional probability");
  std::vector<double> p(ptilde.size() + 1);
  double stick = 1.0;
  for (std::size_t k = 0; k < ptilde.size(); ++k) {
    if (!(ptilde[k] >= 0.0 && ptilde[k] <= 1.0))
      throw ValidationError("conditional probability " + std::to_string(k + 1) + " outside [0, 1]");
    p[k] = ptilde[k] * stick;
    stick *= 1.0 - ptilde[k];
  }
  p.back() = stick;
  return p;
}

struct StickBreaking {
  int categories = 0;
  std::vector<FitResult> fits;  // one per stick, K-1 in total
};

/// Design for stick k (1-based): units with category >= k, response 1{category == k},
/// raw weights rescaled to the size of that subset.
inline DesignData stick_design(const Eigen::MatrixXd& X, const Eigen::MatrixXd& G, std::span<const int> categories,
                               const Eigen::VectorXd& raw_weights, int k, int stick) {
  std::vector<Eigen::Index> rows;
  for (std::size_t i = 0; i < categories.size(); ++i)
    if (sb_decompose(categories[i], k)[static_cast<std::size_t>(stick - 1)].include)
      rows.push_back(static_cast<Eigen::Index>(i));
  const auto m = static_cast<Eigen::Index>(rows.size());
  Eigen::MatrixXd xs(m, X.cols()), gs(m, G.cols());
  Eigen::VectorXd z(m), w(m);
  for (Eigen::Index r = 0; r < m; ++r) {
    const auto i = rows[static_cast<std::size_t>(r)];
    xs.row(r) = X.row(i);
    gs.row(r) = G.row(i);
    z[r] = categories[static_cast<std::size_t>(i)] == stick ? 1.0 : 0.0;
    w[r] = raw_weights[i];
  }
  return make_design(std::move(xs), std::move(gs), std::move(z), w);
}

/// Fits the K-1 conditional Binomials. Stick k uses stream (seed, k).
inline StickBreaking fit_stick_breaking(const Eigen::MatrixXd& X, const Eigen::MatrixXd& G,
                                        std::span<const int> categories, const Eigen::VectorXd& raw_weights, int k,
                                        const BudisSpec& spec, FitKind fitter, std::uint64_t seed) {
  require(static_cast<Eigen::Index>(categories.size()) == X.rows() && raw_weights.size() == X.rows() &&
              G.rows() == X.rows(),
          "stick-breaking inputs disagree on the number of units");
  StickBreaking sb;
  sb.categories = k;
  for (int stick = 1; stick < k; ++stick) {
    DesignData data = stick_design(X, G, categories, raw_weights, k, stick);
    if (fitter == FitKind::VB) {
      sb.fits.push_back(vb_fit(data, spec));
    } else {
      Rng rng = derive_stream(seed, {static_cast<std::uint64_t>(stick)});
      sb.fits.push_back(gibbs_fit(data, spec, rng));
    }
  }
  return sb;
}

}  // namespace budis
