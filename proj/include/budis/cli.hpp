#pragma once
// Command-line front end: features, fit, predict, simulate.

#include <CLI11.hpp>

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "budis/elm.hpp"
#include "budis/error.hpp"
#include "budis/features.hpp"
#include "budis/io.hpp"
#include "budis/model.hpp"
#include "budis/multinomial.hpp"
#include "budis/population.hpp"
#include "budis/rng.hpp"
#include "budis/sim.hpp"

namespace budis::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitNumerical = 3;

struct Options {
  std::string command;
  std::uint64_t seed = 1;
  std::string out;
  std::string fitter = "vb";
  int threads = std::max(1, static_cast<int>(std::thread::hardware_concurrency()));

  std::string units;
  std::string adjacency;
  std::string population;
  std::string fit_dir;

  std::size_t vocab_size = 1000;
  int basis = 25;
  int hidden = 240;
  double sparsity = 0.10;
  double ig_shape = 0.5;
  double ig_rate = 0.5;
  double sigma2_beta = 1000.0;
  int gibbs_iterations = 2000;
  int gibbs_burn_in = 1000;
  int gibbs_thin = 1;
  int vb_max_iterations = 500;
  double vb_tolerance = 1e-6;
  std::size_t draws = 200;
  std::string predict_sampled = "auto";  // auto: false for predict, true for simulate

  int replicates = 50;
  double expected_n = 1000.0;
  double shift = 0.7;
  std::vector<std::string> estimators{"budis", "pllr", "direct", "uw_direct"};
  std::size_t synthetic_units = 6000;
  int synthetic_areas = 48;
  std::size_t synthetic_vocab = 200;
  double signal = 0.4;
  std::uint64_t population_seed = 7;

  BudisSpec spec() const {
    BudisSpec s;
    s.sigma2_beta = sigma2_beta;
    s.ig_shape = ig_shape;
    s.ig_rate = ig_rate;
    s.hidden = hidden;
    s.gibbs = GibbsOptions{gibbs_iterations, gibbs_burn_in, gibbs_thin};
    s.vb = VbOptions{vb_max_iterations, vb_tolerance};
    s.validate();
    return s;
  }

  FitKind fit_kind() const { return fitter == "gibbs" ? FitKind::Gibbs : FitKind::VB; }

  /// Every setting that can influence an output file.
  io::KeyValues settings() const {
    using io::format_double;
    std::string est;
    for (const auto& e : estimators) est += (est.empty() ? "" : ",") + e;
    return {{"command", command},
            {"seed", std::to_string(seed)},
            {"fitter", fitter},
            {"units", units},
            {"adjacency", adjacency},
            {"population", population},
            {"fit-dir", fit_dir},
            {"vocab-size", std::to_string(vocab_size)},
            {"basis", std::to_string(basis)},
            {"hidden", std::to_string(hidden)},
            {"sparsity", format_double(sparsity)},
            {"ig-shape", format_double(ig_shape)},
            {"ig-rate", format_double(ig_rate)},
            {"sigma2-beta", format_double(sigma2_beta)},
            {"gibbs-iterations", std::to_string(gibbs_iterations)},
            {"gibbs-burn-in", std::to_string(gibbs_burn_in)},
            {"gibbs-thin", std::to_string(gibbs_thin)},
            {"vb-max-iterations", std::to_string(vb_max_iterations)},
            {"vb-tolerance", format_double(vb_tolerance)},
            {"draws", std::to_string(draws)},
            {"predict-sampled", predict_sampled},
            {"replicates", std::to_string(replicates)},
            {"expected-n", format_double(expected_n)},
            {"shift", format_double(shift)},
            {"estimators", est},
            {"synthetic-units", std::to_string(synthetic_units)},
            {"synthetic-areas", std::to_string(synthetic_areas)},
            {"synthetic-vocab", std::to_string(synthetic_vocab)},
            {"signal", format_double(signal)},
            {"population-seed", std::to_string(population_seed)}};
  }
};

namespace detail {

enum : std::uint64_t { kElmStream = 0xE1A, kFitStream = 0xF17, kPredictStream = 0x9ED };

inline std::uint64_t elm_seed(std::uint64_t seed) { return mix_key({seed, kElmStream}); }

class StageLog {
 public:
  explicit StageLog(std::string command) : command_(std::move(command)), start_(clock::now()) {}

  void stage(const std::string& name, const std::string& extra = {}) {
    const auto now = clock::now();
    std::ostringstream os;
    os << "budis command=" << command_ << " stage=" << name << " seconds=" << seconds(last_, now)
       << " elapsed=" << seconds(start_, now);
    if (!extra.empty()) os << ' ' << extra;
    std::cerr << os.str() << std::endl;
    last_ = now;
  }

  void note(const std::string& msg) const { std::cerr << "budis command=" << command_ << ' ' << msg << std::endl; }

 private:
  using clock = std::chrono::steady_clock;
  static double seconds(clock::time_point a, clock::time_point b) { return std::chrono::duration<double>(b - a).count(); }
  std::string command_;
  clock::time_point start_;
  clock::time_point last_ = start_;
};

/// Sampled respondents: id, area, weight, response, text and demographic columns.
struct UnitsTable {
  std::vector<std::string> ids;
  std::vector<std::string> areas;
  std::vector<double> weights;
  std::vector<std::string> responses;
  std::vector<std::string> texts;
  std::vector<std::string> demographic_names;
  std::vector<std::vector<double>> demographics;

  std::size_t size() const { return ids.size(); }
};

inline bool contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

inline UnitsTable read_units(const fs::path& path, const std::vector<std::string>& known_areas) {
  const io::CsvTable t = io::read_csv(path);
  const std::string src = path.filename().string();
  static const std::vector<std::string> required{"id", "area", "weight", "response", "text"};
  std::map<std::string, std::size_t> col;
  for (const auto& name : required) {
    const long c = t.column(name);
    if (c < 0) throw ValidationError(src + ": missing column '" + name + "'");
    col[name] = static_cast<std::size_t>(c);
  }
  UnitsTable u;
  std::vector<std::size_t> demo_cols;
  for (std::size_t c = 0; c < t.header.size(); ++c) {
    if (contains(required, t.header[c])) continue;
    if (contains(u.demographic_names, t.header[c])) throw ValidationError(src + ": duplicate column '" + t.header[c] + "'");
    u.demographic_names.push_back(t.header[c]);
    demo_cols.push_back(c);
  }
  if (t.rows.empty()) throw ValidationError(src + ": no data rows");
  const std::set<std::string> areas(known_areas.begin(), known_areas.end());
  std::set<std::string> seen;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::string where = src + " row " + std::to_string(r + 1);
    const std::string& id = row[col["id"]];
    if (id.empty()) throw ValidationError(where + ": empty id");
    if (!seen.insert(id).second) throw ValidationError(where + ": duplicate id '" + id + "'");
    const std::string& area = row[col["area"]];
    if (!areas.contains(area)) throw ValidationError(where + ": unknown area '" + area + "'");
    const double w = io::parse_double(row[col["weight"]], where + ": weight");
    if (!(w > 0.0) || !std::isfinite(w)) throw ValidationError(where + ": weight must be positive, got " + row[col["weight"]]);
    const std::string& response = row[col["response"]];
    if (response.empty()) throw ValidationError(where + ": empty response");
    std::vector<double> demo;
    for (std::size_t k = 0; k < demo_cols.size(); ++k)
      demo.push_back(io::parse_double(row[demo_cols[k]], where + ": " + u.demographic_names[k]));
    u.ids.push_back(id);
    u.areas.push_back(area);
    u.weights.push_back(w);
    u.responses.push_back(response);
    u.texts.push_back(row[col["text"]]);
    u.demographics.push_back(std::move(demo));
  }
  return u;
}

/// Binary 0/1 responses, or string categories mapped to 1..K in sorted order.
struct ResponseCoding {
  bool categorical = false;
  std::vector<std::string> labels;

  static ResponseCoding infer(const std::vector<std::string>& responses) {
    ResponseCoding rc;
    const std::set<std::string> distinct(responses.begin(), responses.end());
    bool binary = true;
    for (const auto& r : distinct) binary = binary && (r == "0" || r == "1");
    if (binary) return rc;
    rc.categorical = true;
    rc.labels.assign(distinct.begin(), distinct.end());
    require(rc.labels.size() >= 2, "categorical response needs at least two categories");
    return rc;
  }

  double code(const std::string& response, const std::string& where) const {
    if (!categorical) {
      if (response == "0") return 0.0;
      if (response == "1") return 1.0;
      throw ValidationError(where + ": binary response must be 0 or 1, got '" + response + "'");
    }
    for (std::size_t k = 0; k < labels.size(); ++k)
      if (labels[k] == response) return static_cast<double>(k + 1);
    throw ValidationError(where + ": unknown response category '" + response + "'");
  }

  void record(io::KeyValues& kv) const {
    kv.emplace_back("response-type", categorical ? "categorical" : "binary");
    kv.emplace_back("categories", std::to_string(categorical ? labels.size() : 2));
    for (std::size_t k = 0; k < labels.size(); ++k) kv.emplace_back("category-" + std::to_string(k + 1), labels[k]);
  }

  static ResponseCoding load(const std::map<std::string, std::string>& kv, const std::string& src) {
    ResponseCoding rc;
    rc.categorical = io::require_key(kv, "response-type", src) == "categorical";
    if (rc.categorical) {
      const auto k = io::parse_int(io::require_key(kv, "categories", src), src);
      for (long long j = 1; j <= k; ++j) rc.labels.push_back(io::require_key(kv, "category-" + std::to_string(j), src));
    }
    return rc;
  }
};

inline std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (const auto& x : v) s += (s.empty() ? "" : ",") + x;
  return s;
}

inline std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = s.find(',', start);
    out.push_back(s.substr(start, comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

inline void require_path(const std::string& value, const std::string& flag, const std::string& command) {
  if (value.empty()) throw ValidationError(command + " needs --" + flag);
}

inline std::string fit_file(FitKind kind, int stick) {
  const std::string suffix = stick > 0 ? "_stick" + std::to_string(stick) : "";
  return kind == FitKind::VB ? "fit_vb" + suffix + ".txt" : "fit_gibbs" + suffix + ".csv";
}

inline void write_fit(const io::StagedOutput& out, const FitResult& fit, int stick) {
  out.write(fit_file(fit.kind, stick), fit.kind == FitKind::VB ? io::format_vb(fit) : io::format_gibbs(fit));
}

inline FitResult read_fit(const fs::path& dir, FitKind kind, int stick) {
  const fs::path path = dir / fit_file(kind, stick);
  return kind == FitKind::VB ? io::read_vb(path) : io::read_gibbs(path);
}

inline std::string fit_summary(const FitResult& fit) {
  std::ostringstream os;
  if (fit.kind == FitKind::VB) {
    os << "iterations=" << fit.iterations << " converged=" << (fit.converged ? "true" : "false");
  } else {
    os << "retained_draws=" << fit.draw_count();
  }
  return os.str();
}

inline int cmd_features(const Options& o) {
  require_path(o.units, "units", "features");
  require_path(o.out, "out", "features");
  StageLog log("features");
  std::vector<std::string> areas;
  std::optional<Adjacency> adj;
  if (!o.adjacency.empty()) {
    adj = io::read_adjacency(o.adjacency);
    areas = adj->labels;
  }
  // Without an adjacency every area label is accepted.
  if (!adj) {
    const io::CsvTable t = io::read_csv(o.units);
    const long c = t.column("area");
    if (c < 0) throw ValidationError(fs::path(o.units).filename().string() + ": missing column 'area'");
    for (const auto& row : t.rows) areas.push_back(row[static_cast<std::size_t>(c)]);
  }
  const UnitsTable units = read_units(o.units, areas);
  log.stage("read", "n=" + std::to_string(units.size()));
  io::StagedOutput out(o.out);
  const Vocabulary vocab = build_vocabulary(units.texts, o.vocab_size);
  out.write("vocabulary.csv", io::format_vocabulary(vocab));
  io::KeyValues manifest = o.settings();
  manifest.emplace_back("vocabulary-tokens", std::to_string(vocab.size()));
  if (adj) {
    const SpatialBasis basis = spatial_basis(*adj, o.basis);
    out.write("spatial_basis.csv", io::format_basis(basis));
    out.write("eigenvalues.csv", io::format_eigenvalues(basis));
  }
  log.stage("features", "tokens=" + std::to_string(vocab.size()));
  out.write("manifest.txt", io::format_key_values(manifest));
  out.commit();
  log.stage("write", "out=" + o.out);
  return kExitOk;
}

inline int cmd_fit(const Options& o) {
  require_path(o.units, "units", "fit");
  require_path(o.adjacency, "adjacency", "fit");
  require_path(o.out, "out", "fit");
  const BudisSpec spec = o.spec();
  StageLog log("fit");

  const Adjacency adj = io::read_adjacency(o.adjacency);
  const UnitsTable units = read_units(o.units, adj.labels);
  const ResponseCoding coding = ResponseCoding::infer(units.responses);
  const auto n = static_cast<Eigen::Index>(units.size());
  log.stage("read", "n=" + std::to_string(n) + " areas=" + std::to_string(adj.labels.size()));

  const Vocabulary vocab = build_vocabulary(units.texts, o.vocab_size);
  const SpatialBasis basis = spatial_basis(adj, o.basis);
  const auto r = static_cast<Eigen::Index>(vocab.size() + 1);
  const auto p = 1 + static_cast<Eigen::Index>(units.demographic_names.size()) + basis.dim();
  Eigen::MatrixXd x(n, p), psi(n, r);
  Eigen::VectorXd w(n), z(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    x.row(i) = linear_covariates(units.demographics[k], basis, units.areas[k]).transpose();
    psi.row(i) = with_bias_input(text_indicators(vocab, units.texts[k])).transpose();
    w[i] = units.weights[k];
    z[i] = coding.code(units.responses[k], fs::path(o.units).filename().string() + " row " + std::to_string(i + 1));
  }
  std::optional<ElmLayer> layer;
  Eigen::MatrixXd g(n, 0);
  if (o.hidden > 0) {
    layer = elm_init(o.hidden, r, o.sparsity, elm_seed(o.seed));
    g = elm_transform_rows(*layer, psi);
  }
  log.stage("features", "vocabulary=" + std::to_string(vocab.size()) + " p=" + std::to_string(p) +
                            " h=" + std::to_string(o.hidden));

  std::vector<FitResult> fits;
  if (coding.categorical) {
    std::vector<int> cats;
    for (Eigen::Index i = 0; i < n; ++i) cats.push_back(static_cast<int>(z[i]));
    StickBreaking sb = fit_stick_breaking(x, g, cats, w, static_cast<int>(coding.labels.size()), spec, o.fit_kind(),
                                          mix_key({o.seed, kFitStream}));
    fits = std::move(sb.fits);
  } else {
    const DesignData data = make_design(x, g, z, w);
    if (o.fit_kind() == FitKind::VB) {
      fits.push_back(vb_fit(data, spec));
    } else {
      Rng rng = derive_stream(o.seed, {kFitStream});
      fits.push_back(gibbs_fit(data, spec, rng));
    }
  }
  log.stage("fit", "fitter=" + o.fitter + " models=" + std::to_string(fits.size()) + " " + fit_summary(fits.front()));

  io::StagedOutput out(o.out);
  out.write("vocabulary.csv", io::format_vocabulary(vocab));
  out.write("spatial_basis.csv", io::format_basis(basis));
  out.write("eigenvalues.csv", io::format_eigenvalues(basis));
  if (layer) out.write("elm_layer.csv", io::format_elm(*layer));
  for (std::size_t k = 0; k < fits.size(); ++k) write_fit(out, fits[k], coding.categorical ? static_cast<int>(k + 1) : 0);

  io::KeyValues manifest = o.settings();
  manifest.emplace_back("elm-seed", layer ? std::to_string(layer->seed) : "none");
  manifest.emplace_back("fit-stream", std::to_string(kFitStream));
  manifest.emplace_back("n", std::to_string(n));
  manifest.emplace_back("demographics", join(units.demographic_names));
  manifest.emplace_back("vocabulary-tokens", std::to_string(vocab.size()));
  manifest.emplace_back("p", std::to_string(p));
  coding.record(manifest);
  out.write("manifest.txt", io::format_key_values(manifest));
  out.commit();
  log.stage("write", "out=" + o.out);
  return kExitOk;
}

inline int cmd_predict(const Options& o) {
  require_path(o.fit_dir, "fit-dir", "predict");
  require_path(o.units, "units", "predict");
  require_path(o.population, "population", "predict");
  require_path(o.out, "out", "predict");
  require(o.draws >= 1, "draws must be at least 1");
  StageLog log("predict");

  const fs::path dir(o.fit_dir);
  const auto fm = io::parse_key_values(io::read_text(dir / "manifest.txt"), "manifest.txt");
  require(io::require_key(fm, "command", "manifest.txt") == "fit", o.fit_dir + " does not hold fit output");
  const ResponseCoding coding = ResponseCoding::load(fm, "manifest.txt");
  const FitKind kind = io::require_key(fm, "fitter", "manifest.txt") == "gibbs" ? FitKind::Gibbs : FitKind::VB;
  const auto demo_names = split(io::require_key(fm, "demographics", "manifest.txt"));
  const Vocabulary vocab = io::read_vocabulary(dir / "vocabulary.csv");
  const SpatialBasis basis = io::read_basis(dir / "spatial_basis.csv", dir / "eigenvalues.csv");
  std::optional<ElmLayer> layer;
  if (fs::exists(dir / "elm_layer.csv")) layer = io::read_elm(dir / "elm_layer.csv");
  std::vector<FitResult> fits;
  const int sticks = coding.categorical ? static_cast<int>(coding.labels.size()) - 1 : 0;
  if (coding.categorical) {
    for (int s = 1; s <= sticks; ++s) fits.push_back(read_fit(dir, kind, s));
  } else {
    fits.push_back(read_fit(dir, kind, 0));
  }

  const auto p = 1 + static_cast<Eigen::Index>(demo_names.size()) + basis.dim();
  for (const auto& f : fits) {
    if (f.p != p)
      throw ValidationError("fit has " + std::to_string(f.p) + " linear coefficients but the basis and demographics give " +
                            std::to_string(p));
    if (f.h > 0 && (!layer || layer->hidden() != f.h))
      throw ValidationError("fit has " + std::to_string(f.h) + " hidden coefficients but the ELM layer does not match");
  }
  if (layer && layer->inputs() != static_cast<Eigen::Index>(vocab.size() + 1))
    throw ValidationError("vocabulary has " + std::to_string(vocab.size()) + " tokens but the ELM layer expects " +
                          std::to_string(layer->inputs() - 1));

  const UnitsTable units = read_units(o.units, basis.areas);
  if (units.demographic_names != demo_names)
    throw ValidationError("units demographic columns (" + join(units.demographic_names) +
                          ") differ from the fit (" + join(demo_names) + ")");
  std::vector<SampleRecord> records;
  for (std::size_t i = 0; i < units.size(); ++i) {
    const std::string where = fs::path(o.units).filename().string() + " row " + std::to_string(i + 1);
    records.push_back(SampleRecord{units.ids[i], with_bias_input(text_indicators(vocab, units.texts[i])),
                                   units.weights[i], coding.code(units.responses[i], where)});
  }

  const io::CsvTable pt = io::read_csv(o.population);
  const std::string psrc = fs::path(o.population).filename().string();
  std::vector<long> pcol;
  for (const std::string name : {"id", "area", "cell"}) {
    pcol.push_back(pt.column(name));
    if (pcol.back() < 0) throw ValidationError(psrc + ": missing column '" + name + "'");
  }
  for (const auto& name : demo_names) {
    pcol.push_back(pt.column(name));
    if (pcol.back() < 0) throw ValidationError(psrc + ": missing demographic column '" + name + "'");
  }
  const long truth_col = coding.categorical ? -1 : pt.column("truth");
  const std::set<std::string> known(basis.areas.begin(), basis.areas.end());
  std::vector<PopulationUnit> pop;
  std::map<std::string, std::pair<double, double>> truth;
  for (std::size_t r = 0; r < pt.rows.size(); ++r) {
    const auto& row = pt.rows[r];
    const std::string where = psrc + " row " + std::to_string(r + 1);
    PopulationUnit u;
    u.id = row[static_cast<std::size_t>(pcol[0])];
    u.area = row[static_cast<std::size_t>(pcol[1])];
    u.cell = row[static_cast<std::size_t>(pcol[2])];
    if (!known.contains(u.area)) throw ValidationError(where + ": unknown area '" + u.area + "'");
    std::vector<double> demo;
    for (std::size_t k = 0; k < demo_names.size(); ++k)
      demo.push_back(io::parse_double(row[static_cast<std::size_t>(pcol[3 + k])], where + ": " + demo_names[k]));
    u.x = linear_covariates(demo, basis, u.area);
    if (truth_col >= 0 && !row[static_cast<std::size_t>(truth_col)].empty()) {
      u.truth = io::parse_double(row[static_cast<std::size_t>(truth_col)], where + ": truth");
      truth[u.area].first += *u.truth;
      truth[u.area].second += 1.0;
    }
    pop.push_back(std::move(u));
  }
  const PopulationFrame frame(std::move(pop), std::move(records));
  log.stage("read", "population=" + std::to_string(frame.units().size()) + " sample=" + std::to_string(units.size()));

  const PredictOptions popts{o.predict_sampled == "true"};
  Rng rng = derive_stream(o.seed, {kPredictStream});
  const ElmLayer* lp = layer ? &*layer : nullptr;
  std::vector<std::pair<std::string, AreaEstimates>> results;
  if (coding.categorical) {
    StickBreaking sb{static_cast<int>(coding.labels.size()), fits};
    auto per = posterior_predict_areas_categorical(frame, sb, lp, o.draws, rng, popts);
    for (std::size_t k = 0; k < per.size(); ++k) results.emplace_back(coding.labels[k], std::move(per[k]));
  } else {
    results.emplace_back("", posterior_predict_areas(frame, fits.front(), lp, o.draws, rng, popts));
  }
  log.stage("predict", "draws=" + std::to_string(o.draws));

  std::vector<std::string> head;
  if (coding.categorical) head.push_back("category");
  for (const char* c : {"area", "estimate", "sd", "lo95", "hi95", "n_pop", "n_sample"}) head.emplace_back(c);
  const bool with_truth = !truth.empty();
  if (with_truth) head.emplace_back("truth");
  std::string csv = io::csv_row(head);
  for (const auto& [label, est] : results) {
    for (const auto& a : est.areas) {
      std::vector<std::string> row;
      if (coding.categorical) row.push_back(label);
      row.insert(row.end(), {a.area, io::format_double(a.mean), io::format_double(a.sd), io::format_double(a.lo95),
                             io::format_double(a.hi95), std::to_string(a.n_pop), std::to_string(a.n_sample)});
      if (with_truth) {
        auto it = truth.find(a.area);
        row.push_back(it == truth.end() ? "" : io::format_double(it->second.first / it->second.second));
      }
      csv += io::csv_row(row);
    }
  }
  io::StagedOutput out(o.out);
  out.write("area_estimates.csv", csv);
  io::KeyValues manifest = o.settings();
  manifest.emplace_back("predict-stream", std::to_string(kPredictStream));
  manifest.emplace_back("predict-sampled-resolved", popts.predict_sampled ? "true" : "false");
  coding.record(manifest);
  out.write("manifest.txt", io::format_key_values(manifest));
  out.commit();
  log.stage("write", "out=" + o.out);
  return kExitOk;
}

inline SimPopulation population_from_csv(const Options& o) {
  require_path(o.adjacency, "adjacency", "simulate with --population");
  SimPopulation pop;
  pop.adjacency = io::read_adjacency(o.adjacency);
  const UnitsTable units = read_units(o.population, pop.adjacency.labels);
  pop.demographic_names = units.demographic_names;
  const std::string src = fs::path(o.population).filename().string();
  for (std::size_t i = 0; i < units.size(); ++i) {
    SimUnit u;
    u.id = units.ids[i];
    u.area = units.areas[i];
    u.demographics = units.demographics[i];
    u.base_weight = units.weights[i];
    u.text = units.texts[i];
    if (units.responses[i] != "0" && units.responses[i] != "1")
      throw ValidationError(src + " row " + std::to_string(i + 1) + ": simulation responses must be 0 or 1");
    u.y = units.responses[i] == "1" ? 1.0 : 0.0;
    pop.units.push_back(std::move(u));
  }
  pop.parameters = {{"generator", "csv"}, {"source", o.population}};
  return pop;
}

inline std::string format_population(const SimPopulation& pop) {
  std::string out;
  for (const auto& [k, v] : pop.parameters) out += "# " + k + "=" + v + "\n";
  std::vector<std::string> head{"id", "area", "weight", "response", "text"};
  head.insert(head.end(), pop.demographic_names.begin(), pop.demographic_names.end());
  out += io::csv_row(head);
  for (const auto& u : pop.units) {
    std::vector<std::string> row{u.id, u.area, io::format_double(u.base_weight), u.y == 1.0 ? "1" : "0", u.text};
    for (double d : u.demographics) row.push_back(io::format_double(d));
    out += io::csv_row(row);
  }
  return out;
}

inline std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3e", v);
  return buf;
}

inline std::string format_summary(const SimReport& report) {
  std::ostringstream os;
  os << "Estimator   MSE         Bias^2\n";
  for (const auto& s : report.scores) {
    std::string name = s.name;
    name.resize(std::max<std::size_t>(name.size(), 12), ' ');
    os << name << sci(s.mse) << "   " << sci(s.bias2) << "\n";
  }
  os << "\nreplicates: " << report.replicates.size() << " (failed: " << report.failed << ")\n";
  os << "areas: " << report.areas.size() << "\n";
  os << "MSE: mean over (area, replicate) pairs of (estimate - truth)^2\n";
  os << "Bias^2: mean over areas of (mean-over-replicates estimate - truth)^2\n";
  for (const auto& s : report.scores)
    if (s.missing > 0) os << s.name << ": " << s.missing << " missing (area, replicate) pairs excluded\n";
  return os.str();
}

inline int cmd_simulate(const Options& o) {
  require_path(o.out, "out", "simulate");
  StageLog log("simulate");
  SimConfig cfg;
  cfg.replicates = o.replicates;
  cfg.expected_n = o.expected_n;
  cfg.shift = o.shift;
  cfg.estimators = {false, false, false, false};
  static const std::array<const char*, kEstimatorCount> ids = {"budis", "pllr", "direct", "uw_direct"};
  for (const auto& e : o.estimators) {
    auto it = std::find_if(ids.begin(), ids.end(), [&](const char* id) { return e == id; });
    if (it == ids.end()) throw ValidationError("unknown estimator '" + e + "' (budis, pllr, direct, uw_direct)");
    cfg.estimators[static_cast<std::size_t>(it - ids.begin())] = true;
  }
  cfg.model = o.spec();
  require(!cfg.estimators[0] || o.hidden >= 1, "the BUDIS estimator needs --hidden >= 1");
  cfg.vocab_size = o.vocab_size;
  cfg.n_basis = o.basis;
  cfg.sparsity = o.sparsity;
  cfg.predict_draws = o.draws;
  cfg.fitter = o.fit_kind();
  cfg.predict_sampled = o.predict_sampled != "false";
  cfg.seed = o.seed;
  cfg.threads = o.threads;
  cfg.validate();

  const bool synthetic = o.population.empty();
  const SimPopulation pop =
      synthetic ? make_synthetic_population(o.population_seed, o.synthetic_units, o.synthetic_areas, o.synthetic_vocab,
                                            o.signal)
                : population_from_csv(o);
  log.stage("population", std::string("source=") + (synthetic ? "synthetic" : "csv") +
                              " units=" + std::to_string(pop.units.size()));

  const SimReport report = run_simulation(pop, cfg, [&](const std::string& msg) { log.note(msg); });
  log.stage("simulate", "replicates=" + std::to_string(report.replicates.size()) +
                            " failed=" + std::to_string(report.failed));

  io::StagedOutput out(o.out);
  if (synthetic) {
    out.write("synthetic_population.csv", format_population(pop));
    out.write("adjacency.csv", io::format_adjacency(pop.adjacency));
  }
  std::string rep = "# mse: mean over (area, replicate) pairs of (estimate - truth)^2\n"
                    "# bias2: mean over areas of (mean-over-replicates estimate - truth)^2\n"
                    "# missing estimates are excluded pairwise and counted\n"
                    "estimator,mse,bias2,pairs,missing\n";
  for (const auto& s : report.scores)
    rep += io::csv_row({s.name, io::format_double(s.mse), io::format_double(s.bias2), std::to_string(s.pairs),
                        std::to_string(s.missing)});
  out.write("sim_report.csv", rep);

  std::vector<std::string> head{"replicate", "area", "truth"};
  for (const auto& s : report.scores) head.push_back(s.name);
  std::string est = io::csv_row(head);
  std::string reps = "replicate,ok,attempts,sample_size,diagnostic\n";
  for (const auto& r : report.replicates) {
    reps += io::csv_row({std::to_string(r.index), r.ok ? "1" : "0", std::to_string(r.attempts),
                         std::to_string(r.sample_size), r.diagnostic});
    if (!r.ok) continue;
    for (std::size_t a = 0; a < report.areas.size(); ++a) {
      std::vector<std::string> row{std::to_string(r.index), report.areas[a],
                                   io::format_double(report.truth[static_cast<Eigen::Index>(a)])};
      for (std::size_t e = 0; e < kEstimatorCount; ++e) {
        if (r.estimates[e].empty()) continue;
        const auto& v = r.estimates[e][a];
        row.push_back(v ? io::format_double(*v) : "");
      }
      est += io::csv_row(row);
    }
  }
  out.write("sim_estimates.csv", est);
  out.write("sim_replicates.csv", reps);
  out.write("summary.txt", format_summary(report));
  io::KeyValues manifest = o.settings();
  manifest.emplace_back("predict-sampled-resolved", cfg.predict_sampled ? "true" : "false");
  for (const auto& [k, v] : pop.parameters) manifest.emplace_back("population." + k, v);
  out.write("manifest.txt", io::format_key_values(manifest));
  out.commit();
  log.stage("write", "out=" + o.out);
  return kExitOk;
}

}  // namespace detail

inline void add_options(CLI::App& app, Options& o) {
  app.set_config("--config", "", "Read options from a key = value file");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.add_option("--seed", o.seed, "Master seed")->capture_default_str();
  app.add_option("--out", o.out, "Output directory (written atomically)");
  app.add_option("--fitter", o.fitter, "vb or gibbs")->check(CLI::IsMember({"vb", "gibbs"}))->capture_default_str();
  app.add_option("--threads", o.threads, "Concurrent simulation replicates")->check(CLI::PositiveNumber);

  app.add_option("--units", o.units, "Sample CSV: id, area, weight, response, text, demographics")->check(CLI::ExistingFile);
  app.add_option("--adjacency", o.adjacency, "Area adjacency CSV")->check(CLI::ExistingFile);
  app.add_option("--population", o.population, "Population CSV")->check(CLI::ExistingFile);
  app.add_option("--fit-dir", o.fit_dir, "Output directory of a previous fit")->check(CLI::ExistingDirectory);

  app.add_option("--vocab-size", o.vocab_size, "Vocabulary size K")->capture_default_str();
  app.add_option("--basis", o.basis, "Spatial eigenvectors q")->capture_default_str();
  app.add_option("--hidden", o.hidden, "ELM hidden nodes h")->capture_default_str();
  app.add_option("--sparsity", o.sparsity, "Fraction of zeroed hidden weights")->capture_default_str();
  app.add_option("--ig-shape", o.ig_shape, "Inverse-Gamma shape a")->capture_default_str();
  app.add_option("--ig-rate", o.ig_rate, "Inverse-Gamma rate b")->capture_default_str();
  app.add_option("--sigma2-beta", o.sigma2_beta, "Prior variance of beta")->capture_default_str();
  app.add_option("--gibbs-iterations", o.gibbs_iterations)->capture_default_str();
  app.add_option("--gibbs-burn-in", o.gibbs_burn_in)->capture_default_str();
  app.add_option("--gibbs-thin", o.gibbs_thin)->capture_default_str();
  app.add_option("--vb-max-iterations", o.vb_max_iterations)->capture_default_str();
  app.add_option("--vb-tolerance", o.vb_tolerance)->capture_default_str();
  app.add_option("--draws", o.draws, "Posterior predictive draws")->capture_default_str();
  app.add_option("--predict-sampled", o.predict_sampled, "Re-predict sampled units: auto, true or false")
      ->check(CLI::IsMember({"auto", "true", "false"}))
      ->capture_default_str();

  app.add_option("--replicates", o.replicates)->capture_default_str();
  app.add_option("--expected-n", o.expected_n, "Expected sample size")->capture_default_str();
  app.add_option("--shift", o.shift, "Informative size shift")->capture_default_str();
  app.add_option("--estimators", o.estimators, "Any of budis, pllr, direct, uw_direct")->delimiter(',');
  app.add_option("--synthetic-units", o.synthetic_units)->capture_default_str();
  app.add_option("--synthetic-areas", o.synthetic_areas)->capture_default_str();
  app.add_option("--synthetic-vocab", o.synthetic_vocab)->capture_default_str();
  app.add_option("--signal", o.signal, "Text signal strength of the synthetic population")->capture_default_str();
  app.add_option("--population-seed", o.population_seed)->capture_default_str();
}

inline int run(int argc, char** argv) {
  Options o;
  CLI::App app{"Small area estimation with random text features under informative sampling", "budis"};
  add_options(app, o);
  app.require_subcommand(1);
  for (const auto& [name, help] : std::vector<std::pair<std::string, std::string>>{
           {"features", "Build the vocabulary and spatial basis"},
           {"fit", "Fit the model to a sample"},
           {"predict", "Posterior predictive area estimates"},
           {"simulate", "Repeated informative sampling study"}})
    app.add_subcommand(name, help)->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }
  o.command = app.get_subcommands().front()->get_name();
  try {
    if (o.command == "features") return detail::cmd_features(o);
    if (o.command == "fit") return detail::cmd_fit(o);
    if (o.command == "predict") return detail::cmd_predict(o);
    return detail::cmd_simulate(o);
  } catch (const ValidationError& e) {
    std::cerr << "budis: error: " << e.what() << std::endl;
    return kExitValidation;
  } catch (const NumericalError& e) {
    std::cerr << "budis: numerical failure: " << e.what() << std::endl;
    return kExitNumerical;
  } catch (const std::invalid_argument& e) {
    std::cerr << "budis: error: " << e.what() << std::endl;
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "budis: failure: " << e.what() << std::endl;
    return kExitNumerical;
  }
}

}  // namespace budis::cli
