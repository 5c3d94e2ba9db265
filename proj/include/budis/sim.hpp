#pragma once
// Repeated informative-sampling simulation: treat a dataset as the population,
// draw Poisson PPS samples whose size variable depends on the response, fit the
// ELM model and a plain pseudo-likelihood logistic model, and score four area
// estimators (model with ELM block, model without, Hajek direct, unweighted direct).

#include <Eigen/Dense>
#include <array>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <mutex>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "budis/elm.hpp"
#include "budis/error.hpp"
#include "budis/features.hpp"
#include "budis/model.hpp"
#include "budis/population.hpp"
#include "budis/rng.hpp"
#include "budis/survey.hpp"

namespace budis {

struct SimUnit {
  std::string id;
  std::string area;
  std::vector<double> demographics;  // 0/1 indicators, same order as SimPopulation::demographic_names
  double base_weight = 1.0;
  std::string text;
  double y = 0.0;
};

struct SimPopulation {
  std::vector<SimUnit> units;
  Adjacency adjacency;
  std::vector<std::string> demographic_names{"hispanic", "female"};
  std::vector<std::pair<std::string, std::string>> parameters;  // generation record
};

namespace detail {

inline std::string format_param(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// Pronounceable pseudo-words: distinct for distinct indices.
inline std::string synthetic_word(std::size_t index) {
  static const std::array<const char*, 16> syllables = {"ba", "ko", "mi", "ru", "se", "ta", "lo", "vi",
                                                        "pe", "du", "na", "fe", "go", "ri", "zu", "ho"};
  std::string w;
  std::size_t v = index;
  do {
    w += syllables[v % syllables.size()];
    v /= syllables.size();
  } while (v > 0);
  return w + "x";
}

}  // namespace detail

/// Synthetic population shaped like the survey the method targets: areas on a grid,
/// two demographic indicators, log-normal base weights, free text whose word use
/// depends on an area-level tilt and a unit-level latent, and a binary outcome whose
/// logit is shifted by main effects and pairwise interactions of the topic words,
/// scaled by `signal`.
inline SimPopulation make_synthetic_population(std::uint64_t seed, std::size_t units, int areas,
                                               std::size_t vocab, double signal) {
  require(areas >= 1 && units >= static_cast<std::size_t>(areas), "synthetic population needs units >= areas >= 1");
  require(vocab >= 8, "synthetic vocabulary needs at least 8 words");
  constexpr std::size_t kTopicWords = 8;
  constexpr double kAreaTiltSd = 1.0;
  constexpr double kUnitLatentSd = 0.3;
  constexpr double kAreaNoiseSd = 0.05;
  constexpr double kWeightLogSd = 0.5;
  constexpr double kAreaSizeLogSd = 1.1;
  constexpr std::size_t kMinAreaUnits = 20;

  Rng rng = derive_stream(seed, {0x5E9});
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  SimPopulation pop;
  pop.adjacency = grid_adjacency(areas);
  const int cols = grid_columns(areas);
  const int rows = (areas + cols - 1) / cols;

  // Area structure: smooth spatial trend, iid tilt driving word use, small iid noise.
  std::vector<double> spatial(static_cast<std::size_t>(areas)), tilt(spatial.size()), size_w(spatial.size());
  for (int a = 0; a < areas; ++a) {
    const double u = rows > 1 ? static_cast<double>(a / cols) / (rows - 1) : 0.5;
    const double v = cols > 1 ? static_cast<double>(a % cols) / (cols - 1) : 0.5;
    spatial[static_cast<std::size_t>(a)] =
        0.8 * (u - 0.5) + 0.4 * std::sin(2.0 * std::numbers::pi * v) + kAreaNoiseSd * normal(rng);
    tilt[static_cast<std::size_t>(a)] = kAreaTiltSd * normal(rng);
    size_w[static_cast<std::size_t>(a)] = std::exp(kAreaSizeLogSd * normal(rng));
  }

  // Allocation: a floor per area, remainder proportional to log-normal area sizes.
  const std::size_t floor_units = std::min(kMinAreaUnits, units / static_cast<std::size_t>(areas));
  std::vector<std::size_t> alloc(static_cast<std::size_t>(areas), floor_units);
  std::discrete_distribution<int> pick_area(size_w.begin(), size_w.end());
  for (std::size_t i = floor_units * static_cast<std::size_t>(areas); i < units; ++i) alloc[static_cast<std::size_t>(pick_area(rng))]++;

  std::vector<std::string> words(vocab);
  for (std::size_t j = 0; j < vocab; ++j) words[j] = detail::synthetic_word(j);
  static const std::array<const char*, 6> fillers = {"the", "and", "of", "to", "is", "a"};

  std::size_t next_id = 1;
  for (int a = 0; a < areas; ++a) {
    for (std::size_t k = 0; k < alloc[static_cast<std::size_t>(a)]; ++k) {
      SimUnit unit;
      std::string id = std::to_string(next_id++);
      unit.id = "U" + std::string(6 - std::min<std::size_t>(6, id.size()), '0') + id;
      unit.area = pop.adjacency.labels[static_cast<std::size_t>(a)];
      const double hispanic = unif(rng) < 0.15 ? 1.0 : 0.0;
      const double female = unif(rng) < 0.52 ? 1.0 : 0.0;
      unit.demographics = {hispanic, female};
      unit.base_weight = std::exp(kWeightLogSd * normal(rng) - 0.5 * kWeightLogSd * kWeightLogSd);

      const double latent = kUnitLatentSd * normal(rng);
      std::vector<int> present(vocab, 0);
      for (std::size_t j = 0; j < vocab; ++j) {
        double logit;
        if (j < kTopicWords) {
          const double load = (j % 2 == 0) ? 1.0 : -1.0;
          logit = -0.3 - 0.05 * static_cast<double>(j) + load * (tilt[static_cast<std::size_t>(a)] + latent);
        } else {
          logit = -3.0 - 2.0 * static_cast<double>(j - kTopicWords) / static_cast<double>(vocab);
        }
        present[j] = unif(rng) < sigmoid(logit) ? 1 : 0;
      }

      // Text effect: signed main effects plus interactions of adjacent topic-word pairs.
      double effect = 0.0;
      for (std::size_t j = 0; j < kTopicWords; ++j) effect += ((j % 2 == 0) ? 0.5 : -0.5) * present[j];
      for (std::size_t j = 0; j + 1 < kTopicWords; j += 2) effect += 0.8 * present[j] * (1 - present[j + 1]);
      effect -= 0.8;

      const double logit = 0.1 + spatial[static_cast<std::size_t>(a)] + 0.5 * hispanic - 0.3 * female +
                           signal * effect;
      unit.y = unif(rng) < sigmoid(logit) ? 1.0 : 0.0;

      std::vector<std::string> tokens;
      for (std::size_t j = 0; j < vocab; ++j) {
        if (!present[j]) continue;
        tokens.push_back(words[j]);
        if (unif(rng) < 0.1) tokens.push_back(words[j]);
      }
      const int n_fill = static_cast<int>(unif(rng) * 3.0);
      for (int f = 0; f < n_fill; ++f) tokens.push_back(fillers[static_cast<std::size_t>(unif(rng) * fillers.size()) % fillers.size()]);
      std::shuffle(tokens.begin(), tokens.end(), rng);
      std::string text;
      for (std::size_t t = 0; t < tokens.size(); ++t) {
        if (t > 0) text += (unif(rng) < 0.1) ? ", " : " ";
        text += tokens[t];
      }
      if (!text.empty()) text[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(text[0])));
      unit.text = std::move(text);
      pop.units.push_back(std::move(unit));
    }
  }

  pop.parameters = {{"generator", "synthetic"},
                    {"seed", std::to_string(seed)},
                    {"units", std::to_string(units)},
                    {"areas", std::to_string(areas)},
                    {"vocab", std::to_string(vocab)},
                    {"signal", detail::format_param(signal)},
                    {"topic_words", std::to_string(kTopicWords)},
                    {"area_tilt_sd", detail::format_param(kAreaTiltSd)},
                    {"unit_latent_sd", detail::format_param(kUnitLatentSd)},
                    {"area_noise_sd", detail::format_param(kAreaNoiseSd)},
                    {"weight_log_sd", detail::format_param(kWeightLogSd)},
                    {"area_size_log_sd", detail::format_param(kAreaSizeLogSd)},
                    {"min_area_units", std::to_string(floor_units)}};
  return pop;
}

enum class Estimator : std::size_t { Budis = 0, Pllr = 1, Direct = 2, UwDirect = 3 };
inline constexpr std::size_t kEstimatorCount = 4;
inline constexpr std::array<const char*, kEstimatorCount> kEstimatorNames = {"BUDIS", "PLLR", "Direct", "UW Direct"};

struct SimConfig {
  int replicates = 50;
  double expected_n = 1000.0;
  double shift = 0.7;
  std::array<bool, kEstimatorCount> estimators{true, true, true, true};
  BudisSpec model;
  std::size_t vocab_size = 1000;
  int n_basis = 25;
  double sparsity = 0.10;
  std::size_t predict_draws = 200;
  FitKind fitter = FitKind::VB;
  bool predict_sampled = true;
  std::uint64_t seed = 1;
  int threads = 1;

  void validate() const {
    require(replicates >= 1, "need at least one replicate");
    require(expected_n > 0, "expected sample size must be positive");
    require(vocab_size >= 1 && n_basis >= 1 && predict_draws >= 1, "vocab size, basis size and draws must be >= 1");
    require(threads >= 1, "thread count must be >= 1");
    model.validate();
  }
};

/// Population-level quantities shared by every replicate.
struct PreparedPopulation {
  const SimPopulation* population = nullptr;
  SpatialBasis basis;
  std::vector<std::string> areas;    // sorted
  std::vector<std::size_t> area_of;  // per unit
  Eigen::VectorXd truth;             // per area
  std::vector<PopulationUnit> frame_units;
};

inline PreparedPopulation prepare_population(const SimPopulation& pop, const SimConfig& config) {
  require(!pop.units.empty(), "simulation population is empty");
  PreparedPopulation prep;
  prep.population = &pop;
  prep.basis = spatial_basis(pop.adjacency, config.n_basis);
  std::map<std::string, std::size_t> pos;
  for (const auto& u : pop.units) pos[u.area] = 0;
  for (auto& [area, idx] : pos) {
    idx = prep.areas.size();
    prep.areas.push_back(area);
  }
  std::vector<double> sum(prep.areas.size(), 0.0), count(prep.areas.size(), 0.0);
  for (const auto& u : pop.units) {
    require(u.demographics.size() == pop.demographic_names.size(), "unit '" + u.id + "' has the wrong demographic count");
    require(u.y == 0.0 || u.y == 1.0, "unit '" + u.id + "' has a non-binary response");
    const auto a = pos.at(u.area);
    prep.area_of.push_back(a);
    sum[a] += u.y;
    count[a] += 1.0;
    prep.frame_units.push_back(PopulationUnit{u.id, u.area, u.area, linear_covariates(u.demographics, prep.basis, u.area),
                                              u.y});
  }
  prep.truth.resize(static_cast<Eigen::Index>(prep.areas.size()));
  for (std::size_t a = 0; a < prep.areas.size(); ++a) prep.truth[static_cast<Eigen::Index>(a)] = sum[a] / count[a];
  return prep;
}

struct ReplicateResult {
  std::size_t index = 0;
  bool ok = false;
  int attempts = 0;
  std::string diagnostic;
  std::size_t sample_size = 0;
  // estimates[estimator][area]; nullopt = missing
  std::array<std::vector<std::optional<double>>, kEstimatorCount> estimates;
  double fit_seconds_budis = 0.0;
  double fit_seconds_pllr = 0.0;
};

namespace detail {

inline FitResult fit_with(const DesignData& data, const SimConfig& config, Rng& rng) {
  if (config.fitter == FitKind::VB) return vb_fit(data, config.model);
  return gibbs_fit(data, config.model, rng);
}

inline ReplicateResult attempt_replicate(const PreparedPopulation& prep, const SimConfig& config, std::size_t index,
                                         int attempt) {
  using clock = std::chrono::steady_clock;
  const SimPopulation& pop = *prep.population;
  Rng rng = derive_stream(config.seed, {static_cast<std::uint64_t>(index), static_cast<std::uint64_t>(attempt)});

  std::vector<double> sizes;
  sizes.reserve(pop.units.size());
  for (const auto& u : pop.units) sizes.push_back(informative_size(u.base_weight, u.y, config.shift));
  const DesignDraw draw = poisson_pps_sample(sizes, config.expected_n, rng);
  const auto n = static_cast<Eigen::Index>(draw.size());
  require(n > 0, "sample is empty");

  std::vector<std::string> texts;
  for (auto i : draw.sampled) texts.push_back(pop.units[i].text);
  const Vocabulary vocab = build_vocabulary(texts, config.vocab_size);
  const auto r = static_cast<Eigen::Index>(vocab.size() + 1);

  Eigen::MatrixXd psi(n, r), x(n, prep.basis.dim() + 1 + static_cast<Eigen::Index>(pop.demographic_names.size()));
  Eigen::VectorXd z(n), w(n);
  std::vector<SampleRecord> records;
  for (Eigen::Index s = 0; s < n; ++s) {
    const auto i = draw.sampled[static_cast<std::size_t>(s)];
    const auto& u = pop.units[i];
    psi.row(s) = with_bias_input(text_indicators(vocab, u.text)).transpose();
    x.row(s) = prep.frame_units[i].x.transpose();
    z[s] = u.y;
    w[s] = draw.weights[static_cast<std::size_t>(s)];
    records.push_back(SampleRecord{u.id, psi.row(s).transpose(), w[s], u.y});
  }

  ReplicateResult out;
  out.index = index;
  out.attempts = attempt + 1;
  out.sample_size = draw.size();
  const PopulationFrame frame(prep.frame_units, std::move(records));
  const std::size_t n_areas = prep.areas.size();

  if (config.estimators[static_cast<std::size_t>(Estimator::Budis)]) {
    const auto t0 = clock::now();
    const ElmLayer layer = elm_init(config.model.hidden, r, config.sparsity, rng());
    const DesignData data = make_design(x, elm_transform_rows(layer, psi), z, w);
    const FitResult fit = fit_with(data, config, rng);
    out.fit_seconds_budis = std::chrono::duration<double>(clock::now() - t0).count();
    Rng pred = derive_stream(config.seed, {static_cast<std::uint64_t>(index), static_cast<std::uint64_t>(attempt), 0xB0});
    const auto est = posterior_predict_areas(frame, fit, &layer, config.predict_draws, pred,
                                             PredictOptions{config.predict_sampled});
    auto& dst = out.estimates[static_cast<std::size_t>(Estimator::Budis)];
    for (const auto& e : est.areas) dst.push_back(e.mean);
  }
  if (config.estimators[static_cast<std::size_t>(Estimator::Pllr)]) {
    const auto t0 = clock::now();
    const DesignData data = make_design(x, Eigen::MatrixXd(n, 0), z, w);
    const FitResult fit = fit_with(data, config, rng);
    out.fit_seconds_pllr = std::chrono::duration<double>(clock::now() - t0).count();
    Rng pred = derive_stream(config.seed, {static_cast<std::uint64_t>(index), static_cast<std::uint64_t>(attempt), 0xB1});
    const auto est = posterior_predict_areas(frame, fit, nullptr, config.predict_draws, pred,
                                             PredictOptions{config.predict_sampled});
    auto& dst = out.estimates[static_cast<std::size_t>(Estimator::Pllr)];
    for (const auto& e : est.areas) dst.push_back(e.mean);
  }

  std::vector<std::vector<double>> ys(n_areas), ws(n_areas);
  for (Eigen::Index s = 0; s < n; ++s) {
    const auto i = draw.sampled[static_cast<std::size_t>(s)];
    ys[prep.area_of[i]].push_back(z[s]);
    ws[prep.area_of[i]].push_back(w[s]);
  }
  for (std::size_t a = 0; a < n_areas; ++a) {
    if (config.estimators[static_cast<std::size_t>(Estimator::Direct)])
      out.estimates[static_cast<std::size_t>(Estimator::Direct)].push_back(direct_estimate(ys[a], ws[a], true));
    if (config.estimators[static_cast<std::size_t>(Estimator::UwDirect)])
      out.estimates[static_cast<std::size_t>(Estimator::UwDirect)].push_back(direct_estimate(ys[a], ws[a], false));
  }
  out.ok = true;
  return out;
}

}  // namespace detail

using SimLogger = std::function<void(const std::string&)>;

/// One replicate; a failed attempt is retried once with a perturbed seed.
inline ReplicateResult run_replicate(const PreparedPopulation& prep, const SimConfig& config, std::size_t index,
                                     const SimLogger& log = {}) {
  std::string diagnostics;
  for (int attempt = 0; attempt < 2; ++attempt) {
    try {
      return detail::attempt_replicate(prep, config, index, attempt);
    } catch (const std::exception& e) {
      const std::string msg = "replicate=" + std::to_string(index) + " attempt=" + std::to_string(attempt) +
                              " error=\"" + e.what() + "\"";
      if (log) log(msg);
      diagnostics += (diagnostics.empty() ? "" : "; ") + msg;
    }
  }
  ReplicateResult failed;
  failed.index = index;
  failed.attempts = 2;
  failed.diagnostic = diagnostics;
  return failed;
}

struct EstimatorScore {
  std::string name;
  double mse = 0.0;
  double bias2 = 0.0;
  std::size_t pairs = 0;    // (area, replicate) pairs scored
  std::size_t missing = 0;  // pairs with no estimate
  std::vector<double> replicate_mse;  // per successful replicate, mean over its scored areas
};

struct SimReport {
  std::vector<EstimatorScore> scores;
  std::vector<ReplicateResult> replicates;
  std::vector<std::string> areas;
  Eigen::VectorXd truth;
  std::size_t failed = 0;

  const EstimatorScore& score(Estimator e) const {
    for (const auto& s : scores)
      if (s.name == kEstimatorNames[static_cast<std::size_t>(e)]) return s;
    throw ValidationError(std::string("estimator not in report: ") + kEstimatorNames[static_cast<std::size_t>(e)]);
  }
};

/// MSE over (area, replicate) pairs; Bias^2 over areas of (replicate-mean estimate - truth)^2.
/// Missing estimates are dropped pairwise.
inline SimReport score(std::vector<ReplicateResult> results, const Eigen::VectorXd& truth,
                       const std::vector<std::string>& areas) {
  SimReport report;
  report.areas = areas;
  report.truth = truth;
  std::size_t ok = 0;
  for (const auto& r : results) ok += r.ok ? 1 : 0;
  if (ok == 0) throw NumericalError("all simulation replicates failed");
  report.failed = results.size() - ok;
  const auto n_areas = static_cast<std::size_t>(truth.size());

  for (std::size_t e = 0; e < kEstimatorCount; ++e) {
    bool present = false;
    for (const auto& r : results)
      if (r.ok && !r.estimates[e].empty()) present = true;
    if (!present) continue;
    EstimatorScore s;
    s.name = kEstimatorNames[e];
    std::vector<double> est_sum(n_areas, 0.0), est_count(n_areas, 0.0);
    double sq = 0.0;
    for (const auto& r : results) {
      if (!r.ok) continue;
      require(r.estimates[e].size() == n_areas, "replicate estimates do not cover every area");
      double rep_sq = 0.0;
      std::size_t rep_n = 0;
      for (std::size_t a = 0; a < n_areas; ++a) {
        const auto& v = r.estimates[e][a];
        if (!v) {
          ++s.missing;
          continue;
        }
        const double err = *v - truth[static_cast<Eigen::Index>(a)];
        sq += err * err;
        rep_sq += err * err;
        ++rep_n;
        ++s.pairs;
        est_sum[a] += *v;
        est_count[a] += 1.0;
      }
      s.replicate_mse.push_back(rep_n > 0 ? rep_sq / static_cast<double>(rep_n) : 0.0);
    }
    s.mse = s.pairs > 0 ? sq / static_cast<double>(s.pairs) : 0.0;
    double b2 = 0.0;
    std::size_t scored = 0;
    for (std::size_t a = 0; a < n_areas; ++a) {
      if (est_count[a] == 0.0) continue;
      const double bias = est_sum[a] / est_count[a] - truth[static_cast<Eigen::Index>(a)];
      b2 += bias * bias;
      ++scored;
    }
    s.bias2 = scored > 0 ? b2 / static_cast<double>(scored) : 0.0;
    report.scores.push_back(std::move(s));
  }
  report.replicates = std::move(results);
  return report;
}

/// All replicates, `config.threads` at a time. Results are ordered by replicate index
/// and do not depend on the thread count.
inline SimReport run_simulation(const SimPopulation& pop, const SimConfig& config, const SimLogger& log = {}) {
  config.validate();
  const PreparedPopulation prep = prepare_population(pop, config);
  std::vector<ReplicateResult> results(static_cast<std::size_t>(config.replicates));
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  SimLogger safe_log;
  if (log) {
    safe_log = [&](const std::string& msg) {
      std::lock_guard lock(log_mutex);
      log(msg);
    };
  }
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= results.size()) return;
      results[i] = run_replicate(prep, config, i, safe_log);
      if (safe_log) {
        const auto& r = results[i];
        std::ostringstream os;
        os << "stage=replicate index=" << i << " ok=" << r.ok << " n=" << r.sample_size
           << " fit_seconds_budis=" << r.fit_seconds_budis << " fit_seconds_pllr=" << r.fit_seconds_pllr;
        safe_log(os.str());
      }
    }
  };
  const int nthreads = std::min(config.threads, config.replicates);
  if (nthreads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
  }
  return score(std::move(results), prep.truth, prep.areas);
}

}  // namespace budis
