#pragma once
// Imputation of complex covariates onto nonsampled population units and
// poststratified posterior prediction of area proportions.
//
// Within an imputation cell a nonsampled unit receives the complex covariates of
// a sampled unit j chosen with probability proportional to 1 / w_j. A fresh
// imputation is made for every posterior draw. Random decisions for a unit are
// keyed by (seed, draw, unit id), so results do not depend on record order.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "budis/elm.hpp"
#include "budis/error.hpp"
#include "budis/model.hpp"
#include "budis/multinomial.hpp"
#include "budis/rng.hpp"

namespace budis {

struct PopulationUnit {
  std::string id;
  std::string area;
  std::string cell;
  Eigen::VectorXd x;  // linear covariates
  std::optional<double> truth;
};

struct SampleRecord {
  std::string id;  // must match a population unit
  Eigen::VectorXd psi;
  double weight = 1.0;
  double response = 0.0;  // 0/1, or category 1..K for stick-breaking prediction
};

struct CellDonor {
  Eigen::VectorXd psi;
  double weight = 1.0;
};

namespace detail {

// Cumulative normalised inverse weights.
inline std::vector<double> inverse_weight_cdf(std::span<const double> weights) {
  require(!weights.empty(), "imputation cell has no sampled units");
  std::vector<double> cdf(weights.size());
  double acc = 0.0;
  for (std::size_t j = 0; j < weights.size(); ++j) {
    require(weights[j] > 0, "donor weights must be positive");
    acc += 1.0 / weights[j];
    cdf[j] = acc;
  }
  for (auto& v : cdf) v /= acc;
  cdf.back() = 1.0;
  return cdf;
}

inline std::size_t pick_from_cdf(const std::vector<double>& cdf, double u) {
  auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
  return std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), cdf.size() - 1);
}

}  // namespace detail

/// m draws with replacement, unit j chosen with probability (1/w_j) / sum_k (1/w_k).
template <class URBG>
std::vector<Eigen::VectorXd> impute_cell_draw(std::span<const CellDonor> donors, std::size_t m, URBG& rng) {
  if (donors.empty()) throw ValidationError("imputation cell has no sampled units");
  std::vector<double> w;
  w.reserve(donors.size());
  for (const auto& d : donors) w.push_back(d.weight);
  const auto cdf = detail::inverse_weight_cdf(w);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<Eigen::VectorXd> out;
  out.reserve(m);
  for (std::size_t i = 0; i < m; ++i) out.push_back(donors[detail::pick_from_cdf(cdf, unif(rng))].psi);
  return out;
}

class PopulationFrame {
 public:
  PopulationFrame(std::vector<PopulationUnit> units, std::vector<SampleRecord> sample)
      : units_(std::move(units)), sample_(std::move(sample)) {
    require(!units_.empty(), "population frame has no units");
    std::unordered_map<std::string, std::size_t> by_id;
    for (std::size_t i = 0; i < units_.size(); ++i) {
      if (!by_id.emplace(units_[i].id, i).second)
        throw ValidationError("duplicate population unit id '" + units_[i].id + "'");
    }
    sample_of_unit_.assign(units_.size(), -1);
    for (std::size_t s = 0; s < sample_.size(); ++s) {
      auto it = by_id.find(sample_[s].id);
      if (it == by_id.end()) throw ValidationError("sampled unit '" + sample_[s].id + "' is not in the population");
      if (sample_of_unit_[it->second] >= 0) throw ValidationError("unit '" + sample_[s].id + "' sampled twice");
      require(sample_[s].weight > 0, "sampled unit '" + sample_[s].id + "' has a nonpositive weight");
      sample_of_unit_[it->second] = static_cast<long>(s);
      unit_of_sample_.push_back(it->second);
    }
    std::map<std::string, std::vector<std::size_t>> donors;
    std::map<std::string, std::size_t> area_units;
    for (std::size_t i = 0; i < units_.size(); ++i) {
      area_units[units_[i].area]++;
      donors[units_[i].cell];
      if (sample_of_unit_[i] >= 0) donors[units_[i].cell].push_back(static_cast<std::size_t>(sample_of_unit_[i]));
    }
    for (auto& [cell, list] : donors) {
      if (list.empty()) throw ValidationError("imputation cell '" + cell + "' has no sampled units");
      std::sort(list.begin(), list.end(), [&](std::size_t a, std::size_t b) { return sample_[a].id < sample_[b].id; });
      std::vector<double> w;
      for (auto s : list) w.push_back(sample_[s].weight);
      cell_cdf_[cell] = detail::inverse_weight_cdf(w);
    }
    cell_donors_ = std::move(donors);
    for (auto& [area, count] : area_units) areas_.push_back(area);
  }

  const std::vector<PopulationUnit>& units() const { return units_; }
  const std::vector<SampleRecord>& sample() const { return sample_; }
  const std::vector<std::string>& areas() const { return areas_; }  // sorted

  /// Index into sample() of population unit i, or -1.
  long sample_index(std::size_t unit) const { return sample_of_unit_[unit]; }
  std::size_t unit_of_sample(std::size_t s) const { return unit_of_sample_[s]; }

  /// Sample indices of the cell's donors, ordered by unit id.
  const std::vector<std::size_t>& donors(const std::string& cell) const { return cell_donors_.at(cell); }
  const std::vector<double>& donor_cdf(const std::string& cell) const { return cell_cdf_.at(cell); }

 private:
  std::vector<PopulationUnit> units_;
  std::vector<SampleRecord> sample_;
  std::vector<long> sample_of_unit_;
  std::vector<std::size_t> unit_of_sample_;
  std::map<std::string, std::vector<std::size_t>> cell_donors_;
  std::map<std::string, std::vector<double>> cell_cdf_;
  std::vector<std::string> areas_;
};

struct AreaEstimate {
  std::string area;
  double mean = 0.0;
  double sd = 0.0;
  double lo95 = 0.0;
  double hi95 = 0.0;
  std::size_t n_pop = 0;
  std::size_t n_sample = 0;
};

struct AreaEstimates {
  std::vector<AreaEstimate> areas;
  Eigen::MatrixXd draws;  // per-draw area proportions, draws x areas

  const AreaEstimate& at(const std::string& area) const {
    for (const auto& a : areas)
      if (a.area == area) return a;
    throw ValidationError("no estimate for area '" + area + "'");
  }
};

struct PredictOptions {
  bool predict_sampled = false;  // re-predict sampled units instead of using their observed response
};

/// Linear interpolation between order statistics (R type 7).
inline double quantile(std::vector<double> v, double q) {
  require(!v.empty(), "quantile of an empty set");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

namespace detail {

enum : std::uint64_t { kDonorStream = 0, kResponseStream = 1 };

inline double unit_uniform(std::uint64_t base, std::size_t draw, const std::string& id, std::uint64_t stream) {
  return key_uniform(mix_key({base, static_cast<std::uint64_t>(draw), hash_id(id), stream}));
}

inline Eigen::MatrixXd sample_features(const PopulationFrame& frame, const ElmLayer* layer, Eigen::Index h) {
  const auto ns = static_cast<Eigen::Index>(frame.sample().size());
  if (h == 0) return Eigen::MatrixXd(ns, 0);
  require(layer != nullptr, "fit has a hidden block but no ELM layer was supplied");
  require(layer->hidden() == h, "ELM layer has " + std::to_string(layer->hidden()) + " nodes, fit expects " +
                                    std::to_string(h));
  Eigen::MatrixXd psi(ns, layer->inputs());
  for (Eigen::Index s = 0; s < ns; ++s) {
    const auto& rec = frame.sample()[static_cast<std::size_t>(s)];
    require(rec.psi.size() == layer->inputs(), "complex covariates of '" + rec.id + "' have length " +
                                                   std::to_string(rec.psi.size()) + ", layer expects " +
                                                   std::to_string(layer->inputs()));
    psi.row(s) = rec.psi.transpose();
  }
  return elm_transform_rows(*layer, psi);
}

inline Eigen::MatrixXd population_design(const PopulationFrame& frame, Eigen::Index p) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(frame.units().size()), p);
  for (std::size_t i = 0; i < frame.units().size(); ++i) {
    const auto& u = frame.units()[i];
    require(u.x.size() == p, "linear covariates of '" + u.id + "' have length " + std::to_string(u.x.size()) +
                                 ", fit expects " + std::to_string(p));
    x.row(static_cast<Eigen::Index>(i)) = u.x.transpose();
  }
  return x;
}

// theta for prediction draw d: evenly spaced retained Gibbs draws, or a VB factor sample.
inline Eigen::VectorXd prediction_theta(const FitResult& fit, std::size_t d, std::size_t draws, std::uint64_t base,
                                        std::uint64_t stick) {
  if (fit.kind == FitKind::Gibbs) {
    const auto r = static_cast<std::size_t>(fit.draw_count());
    require(r > 0, "Gibbs fit has no retained draws");
    const std::size_t idx = draws <= r ? d * r / draws : d % r;
    return fit.theta_draw(static_cast<Eigen::Index>(idx));
  }
  Rng rng = derive_stream(base, {0x7E7A, stick, static_cast<std::uint64_t>(d)});
  return sample_theta(fit, rng);
}

inline AreaEstimates summarize_draws(const PopulationFrame& frame, Eigen::MatrixXd draws) {
  AreaEstimates est;
  std::map<std::string, std::size_t> pop, samp;
  for (std::size_t i = 0; i < frame.units().size(); ++i) {
    pop[frame.units()[i].area]++;
    if (frame.sample_index(i) >= 0) samp[frame.units()[i].area]++;
  }
  for (Eigen::Index a = 0; a < draws.cols(); ++a) {
    AreaEstimate e;
    e.area = frame.areas()[static_cast<std::size_t>(a)];
    std::vector<double> v(draws.col(a).data(), draws.col(a).data() + draws.rows());
    e.mean = draws.col(a).mean();
    if (v.size() > 1) {
      e.sd = std::sqrt((draws.col(a).array() - e.mean).square().sum() / static_cast<double>(v.size() - 1));
    }
    e.lo95 = quantile(v, 0.025);
    e.hi95 = quantile(v, 0.975);
    e.n_pop = pop[e.area];
    e.n_sample = samp[e.area];
    est.areas.push_back(e);
  }
  est.draws = std::move(draws);
  return est;
}

inline std::vector<std::size_t> area_index(const PopulationFrame& frame) {
  std::map<std::string, std::size_t> pos;
  for (std::size_t a = 0; a < frame.areas().size(); ++a) pos[frame.areas()[a]] = a;
  std::vector<std::size_t> out;
  for (const auto& u : frame.units()) out.push_back(pos.at(u.area));
  return out;
}

}  // namespace detail

/// Posterior predictive area proportions. `layer` may be null when the fit has no hidden block.
template <std::uniform_random_bit_generator URBG>
AreaEstimates posterior_predict_areas(const PopulationFrame& frame, const FitResult& fit, const ElmLayer* layer,
                                      std::size_t draws, URBG& rng, const PredictOptions& options = {}) {
  require(draws >= 1, "need at least one posterior predictive draw");
  const std::uint64_t base = static_cast<std::uint64_t>(rng());
  const Eigen::MatrixXd g_sample = detail::sample_features(frame, layer, fit.h);
  const Eigen::MatrixXd x_pop = detail::population_design(frame, fit.p);
  const auto area_of = detail::area_index(frame);
  const std::size_t n_units = frame.units().size();
  const std::size_t n_areas = frame.areas().size();
  std::vector<double> area_count(n_areas, 0.0);
  for (auto a : area_of) area_count[a] += 1.0;

  Eigen::MatrixXd out(static_cast<Eigen::Index>(draws), static_cast<Eigen::Index>(n_areas));
  std::vector<double> sums(n_areas);
  for (std::size_t d = 0; d < draws; ++d) {
    const Eigen::VectorXd theta = detail::prediction_theta(fit, d, draws, base, 0);
    const Eigen::VectorXd lin = x_pop * theta.head(fit.p);
    const Eigen::VectorXd g_eta = g_sample * theta.tail(fit.h);
    std::fill(sums.begin(), sums.end(), 0.0);
    for (std::size_t i = 0; i < n_units; ++i) {
      const auto& unit = frame.units()[i];
      const long s = frame.sample_index(i);
      double y;
      if (s >= 0 && !options.predict_sampled) {
        y = frame.sample()[static_cast<std::size_t>(s)].response;
      } else {
        std::size_t donor;
        if (s >= 0) {
          donor = static_cast<std::size_t>(s);
        } else {
          const double u = detail::unit_uniform(base, d, unit.id, detail::kDonorStream);
          donor = frame.donors(unit.cell)[detail::pick_from_cdf(frame.donor_cdf(unit.cell), u)];
        }
        const double prob = sigmoid(lin[static_cast<Eigen::Index>(i)] + g_eta[static_cast<Eigen::Index>(donor)]);
        y = detail::unit_uniform(base, d, unit.id, detail::kResponseStream) < prob ? 1.0 : 0.0;
      }
      sums[area_of[i]] += y;
    }
    for (std::size_t a = 0; a < n_areas; ++a)
      out(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(a)) = sums[a] / area_count[a];
  }
  return detail::summarize_draws(frame, std::move(out));
}

/// Per-category area proportions under a stick-breaking fit; sampled responses are categories 1..K.
template <std::uniform_random_bit_generator URBG>
std::vector<AreaEstimates> posterior_predict_areas_categorical(const PopulationFrame& frame, const StickBreaking& sb,
                                                               const ElmLayer* layer, std::size_t draws, URBG& rng,
                                                               const PredictOptions& options = {}) {
  require(draws >= 1, "need at least one posterior predictive draw");
  require(sb.categories >= 2 && static_cast<int>(sb.fits.size()) == sb.categories - 1,
          "stick-breaking fit must hold K-1 conditional fits");
  const std::uint64_t base = static_cast<std::uint64_t>(rng());
  const int k = sb.categories;
  const auto& first = sb.fits.front();
  const Eigen::MatrixXd g_sample = detail::sample_features(frame, layer, first.h);
  const Eigen::MatrixXd x_pop = detail::population_design(frame, first.p);
  const auto area_of = detail::area_index(frame);
  const std::size_t n_units = frame.units().size();
  const std::size_t n_areas = frame.areas().size();
  std::vector<double> area_count(n_areas, 0.0);
  for (auto a : area_of) area_count[a] += 1.0;

  std::vector<Eigen::MatrixXd> out(static_cast<std::size_t>(k),
                                   Eigen::MatrixXd(static_cast<Eigen::Index>(draws), static_cast<Eigen::Index>(n_areas)));
  std::vector<double> ptilde(static_cast<std::size_t>(k - 1));
  for (std::size_t d = 0; d < draws; ++d) {
    std::vector<Eigen::VectorXd> lin, g_eta;
    for (int stick = 0; stick + 1 < k; ++stick) {
      const auto& fit = sb.fits[static_cast<std::size_t>(stick)];
      require(fit.p == first.p && fit.h == first.h, "stick-breaking fits disagree on dimensions");
      const Eigen::VectorXd theta = detail::prediction_theta(fit, d, draws, base, static_cast<std::uint64_t>(stick + 1));
      lin.push_back(x_pop * theta.head(fit.p));
      g_eta.push_back(g_sample * theta.tail(fit.h));
    }
    std::vector<std::vector<double>> sums(static_cast<std::size_t>(k), std::vector<double>(n_areas, 0.0));
    for (std::size_t i = 0; i < n_units; ++i) {
      const auto& unit = frame.units()[i];
      const long s = frame.sample_index(i);
      int category;
      if (s >= 0 && !options.predict_sampled) {
        category = static_cast<int>(frame.sample()[static_cast<std::size_t>(s)].response);
        require(category >= 1 && category <= k, "sampled category of '" + unit.id + "' outside 1..K");
      } else {
        std::size_t donor;
        if (s >= 0) {
          donor = static_cast<std::size_t>(s);
        } else {
          const double u = detail::unit_uniform(base, d, unit.id, detail::kDonorStream);
          donor = frame.donors(unit.cell)[detail::pick_from_cdf(frame.donor_cdf(unit.cell), u)];
        }
        for (int stick = 0; stick + 1 < k; ++stick) {
          const auto st = static_cast<std::size_t>(stick);
          ptilde[st] = sigmoid(lin[st][static_cast<Eigen::Index>(i)] + g_eta[st][static_cast<Eigen::Index>(donor)]);
        }
        const auto probs = sb_reconstruct(ptilde);
        const double u = detail::unit_uniform(base, d, unit.id, detail::kResponseStream);
        double acc = 0.0;
        category = k;
        for (int c = 0; c + 1 < k; ++c) {
          acc += probs[static_cast<std::size_t>(c)];
          if (u < acc) {
            category = c + 1;
            break;
          }
        }
      }
      sums[static_cast<std::size_t>(category - 1)][area_of[i]] += 1.0;
    }
    for (int c = 0; c < k; ++c)
      for (std::size_t a = 0; a < n_areas; ++a)
        out[static_cast<std::size_t>(c)](static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(a)) =
            sums[static_cast<std::size_t>(c)][a] / area_count[a];
  }
  std::vector<AreaEstimates> result;
  for (auto& m : out) result.push_back(detail::summarize_draws(frame, std::move(m)));
  return result;
}

}  // namespace budis
