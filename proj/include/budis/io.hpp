#pragma once
// Plain-text persistence: CSV tables, fit artifacts, manifests and staged output
// directories. Numbers are written in shortest round-trip form so that reloading
// an artifact reproduces it exactly.

#include <Eigen/Dense>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include "budis/elm.hpp"
#include "budis/error.hpp"
#include "budis/features.hpp"
#include "budis/model.hpp"

namespace budis::io {

namespace fs = std::filesystem;

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s, const std::string& context) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ValidationError(context + ": '" + std::string(s) + "' is not a number");
  return v;
}

inline long long parse_int(std::string_view s, const std::string& context) {
  long long v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ValidationError(context + ": '" + std::string(s) + "' is not an integer");
  return v;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << content;
  if (!out) throw ValidationError("write failed for " + path.string());
}

// CSV

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;  // data records, header excluded

  /// Position of a named column, or -1.
  long column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<long>(i);
    return -1;
  }
};

/// Comma-delimited records with RFC 4180 quoting. Lines starting with '#' and blank
/// lines are skipped. Every record must have as many fields as the header.
inline CsvTable parse_csv(std::string_view text, const std::string& source) {
  std::vector<std::vector<std::string>> records;
  std::size_t i = 0;
  const std::size_t n = text.size();
  if (n >= 3 && text.substr(0, 3) == "\xEF\xBB\xBF") i = 3;
  while (i < n) {
    if (text[i] == '#') {
      while (i < n && text[i] != '\n') ++i;
      ++i;
      continue;
    }
    if (text[i] == '\n' || (text[i] == '\r' && i + 1 < n && text[i + 1] == '\n')) {
      i += text[i] == '\r' ? 2 : 1;
      continue;
    }
    std::vector<std::string> rec;
    std::string field;
    bool done = false;
    while (!done) {
      field.clear();
      if (i < n && text[i] == '"') {
        ++i;
        for (;;) {
          if (i >= n) throw ValidationError(source + ": unterminated quoted field");
          if (text[i] == '"') {
            if (i + 1 < n && text[i + 1] == '"') {
              field += '"';
              i += 2;
            } else {
              ++i;
              break;
            }
          } else {
            field += text[i++];
          }
        }
        if (i < n && text[i] != ',' && text[i] != '\n' && text[i] != '\r')
          throw ValidationError(source + ": unexpected character after quoted field");
      } else {
        while (i < n && text[i] != ',' && text[i] != '\n' && text[i] != '\r') field += text[i++];
      }
      rec.push_back(field);
      if (i < n && text[i] == ',') {
        ++i;
      } else {
        if (i < n && text[i] == '\r') ++i;
        if (i < n && text[i] == '\n') ++i;
        done = true;
      }
    }
    records.push_back(std::move(rec));
  }
  if (records.empty()) throw ValidationError(source + ": no header row");
  CsvTable table;
  table.header = std::move(records.front());
  for (std::size_t r = 1; r < records.size(); ++r) {
    if (records[r].size() != table.header.size())
      throw ValidationError(source + " row " + std::to_string(r) + ": expected " +
                            std::to_string(table.header.size()) + " fields, found " +
                            std::to_string(records[r].size()));
    table.rows.push_back(std::move(records[r]));
  }
  return table;
}

inline CsvTable read_csv(const fs::path& path) { return parse_csv(read_text(path), path.filename().string()); }

inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos && (s.empty() || s.front() != '#')) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

inline std::string csv_row(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i > 0) out += ',';
    out += csv_field(fields[i]);
  }
  return out + '\n';
}

inline std::string numeric_row(const Eigen::Ref<const Eigen::RowVectorXd>& v) {
  std::string out;
  for (Eigen::Index j = 0; j < v.size(); ++j) {
    if (j > 0) out += ',';
    out += format_double(v[j]);
  }
  return out + '\n';
}

// Key-value files: one "key=value" per line, '#' comments.

using KeyValues = std::vector<std::pair<std::string, std::string>>;

inline std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

inline std::map<std::string, std::string> parse_key_values(std::string_view text, const std::string& source) {
  std::map<std::string, std::string> out;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ValidationError(source + " line " + std::to_string(line_no) + ": expected key=value");
    out[std::string(line.substr(0, eq))] = std::string(line.substr(eq + 1));
  }
  return out;
}

inline const std::string& require_key(const std::map<std::string, std::string>& kv, const std::string& key,
                                      const std::string& source) {
  auto it = kv.find(key);
  if (it == kv.end()) throw ValidationError(source + ": missing key '" + key + "'");
  return it->second;
}

inline std::string join_numbers(const Eigen::Ref<const Eigen::VectorXd>& v) {
  std::string s = numeric_row(v.transpose());
  s.pop_back();
  return s;
}

inline Eigen::VectorXd split_numbers(std::string_view s, const std::string& context) {
  std::vector<double> vals;
  if (!s.empty()) {
    std::size_t start = 0;
    for (;;) {
      const auto comma = s.find(',', start);
      vals.push_back(parse_double(s.substr(start, comma - start), context));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
  }
  return Eigen::Map<Eigen::VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

// Adjacency: header row of area labels, square 0/1 body.

inline Adjacency read_adjacency(const fs::path& path) {
  const CsvTable t = read_csv(path);
  const std::string src = path.filename().string();
  const auto m = static_cast<Eigen::Index>(t.header.size());
  if (static_cast<Eigen::Index>(t.rows.size()) != m)
    throw ValidationError(src + ": adjacency has " + std::to_string(m) + " labels but " +
                          std::to_string(t.rows.size()) + " rows");
  Adjacency adj;
  adj.labels = t.header;
  adj.matrix.resize(m, m);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < m; ++j) {
      const double v = parse_double(t.rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)],
                                    src + " row " + std::to_string(i + 1));
      if (v != 0.0 && v != 1.0) throw ValidationError(src + " row " + std::to_string(i + 1) + ": entries must be 0 or 1");
      adj.matrix(i, j) = v;
    }
  std::map<std::string, int> seen;
  for (const auto& l : adj.labels)
    if (seen[l]++ > 0) throw ValidationError(src + ": duplicate area label '" + l + "'");
  return adj;
}

inline std::string format_adjacency(const Adjacency& adj) {
  std::string out = csv_row(adj.labels);
  for (Eigen::Index i = 0; i < adj.matrix.rows(); ++i) {
    std::string line;
    for (Eigen::Index j = 0; j < adj.matrix.cols(); ++j) {
      if (j > 0) line += ',';
      line += adj.matrix(i, j) != 0.0 ? '1' : '0';
    }
    out += line + '\n';
  }
  return out;
}

// Vocabulary: rank, token, document_frequency.

inline std::string format_vocabulary(const Vocabulary& vocab) {
  std::string out = "rank,token,document_frequency\n";
  for (std::size_t i = 0; i < vocab.size(); ++i)
    out += std::to_string(i + 1) + "," + csv_field(vocab.words()[i]) + "," + std::to_string(vocab.counts()[i]) + "\n";
  return out;
}

inline Vocabulary read_vocabulary(const fs::path& path) {
  const CsvTable t = read_csv(path);
  const std::string src = path.filename().string();
  const long token = t.column("token"), df = t.column("document_frequency");
  if (token < 0 || df < 0) throw ValidationError(src + ": needs columns token and document_frequency");
  std::vector<std::string> words;
  std::vector<long> counts;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    words.push_back(t.rows[r][static_cast<std::size_t>(token)]);
    counts.push_back(static_cast<long>(parse_int(t.rows[r][static_cast<std::size_t>(df)], src + " row " + std::to_string(r + 1))));
  }
  return Vocabulary(std::move(words), std::move(counts));
}

// Spatial basis: area, e1..eq; eigenvalues in a second file.

inline std::string format_basis(const SpatialBasis& basis) {
  std::vector<std::string> head{"area"};
  for (Eigen::Index j = 0; j < basis.dim(); ++j) head.push_back("e" + std::to_string(j + 1));
  std::string out = csv_row(head);
  for (std::size_t i = 0; i < basis.areas.size(); ++i)
    out += csv_field(basis.areas[i]) + "," + numeric_row(basis.vectors.row(static_cast<Eigen::Index>(i)));
  return out;
}

inline std::string format_eigenvalues(const SpatialBasis& basis) {
  std::string out = "index,eigenvalue\n";
  for (Eigen::Index j = 0; j < basis.eigenvalues.size(); ++j)
    out += std::to_string(j + 1) + "," + format_double(basis.eigenvalues[j]) + "\n";
  return out;
}

inline SpatialBasis read_basis(const fs::path& vectors, const fs::path& eigenvalues) {
  const CsvTable t = read_csv(vectors);
  const std::string src = vectors.filename().string();
  require(!t.header.empty() && t.header.front() == "area", src + ": first column must be 'area'");
  SpatialBasis basis;
  const auto q = static_cast<Eigen::Index>(t.header.size() - 1);
  basis.vectors.resize(static_cast<Eigen::Index>(t.rows.size()), q);
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    basis.areas.push_back(t.rows[r][0]);
    for (Eigen::Index j = 0; j < q; ++j)
      basis.vectors(static_cast<Eigen::Index>(r), j) =
          parse_double(t.rows[r][static_cast<std::size_t>(j + 1)], src + " row " + std::to_string(r + 1));
  }
  const CsvTable ev = read_csv(eigenvalues);
  require(static_cast<Eigen::Index>(ev.rows.size()) == q, eigenvalues.filename().string() + ": expected " +
                                                              std::to_string(q) + " eigenvalues");
  basis.eigenvalues.resize(q);
  for (Eigen::Index j = 0; j < q; ++j)
    basis.eigenvalues[j] = parse_double(ev.rows[static_cast<std::size_t>(j)].at(1), eigenvalues.filename().string());
  return basis;
}

// ELM layer: '#' header with seed, dims and sparsity, then the h x r matrix.

inline std::string format_elm(const ElmLayer& layer) {
  std::string out = "# seed=" + std::to_string(layer.seed) + "\n# hidden=" + std::to_string(layer.hidden()) +
                    "\n# inputs=" + std::to_string(layer.inputs()) + "\n# sparsity=" + format_double(layer.sparsity) +
                    "\n";
  for (Eigen::Index i = 0; i < layer.hidden(); ++i) out += numeric_row(layer.weights.row(i));
  return out;
}

inline ElmLayer read_elm(const fs::path& path) {
  const std::string text = read_text(path);
  const std::string src = path.filename().string();
  std::map<std::string, std::string> meta;
  std::vector<Eigen::VectorXd> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.front() == '#') {
      const auto eq = line.find('=');
      if (eq != std::string::npos) {
        std::size_t b = 1;
        while (b < eq && line[b] == ' ') ++b;
        meta[line.substr(b, eq - b)] = line.substr(eq + 1);
      }
      continue;
    }
    rows.push_back(split_numbers(line, src));
  }
  ElmLayer layer;
  layer.seed = static_cast<std::uint64_t>(std::stoull(require_key(meta, "seed", src)));
  layer.sparsity = parse_double(require_key(meta, "sparsity", src), src);
  const auto h = parse_int(require_key(meta, "hidden", src), src);
  const auto r = parse_int(require_key(meta, "inputs", src), src);
  require(static_cast<long long>(rows.size()) == h, src + ": expected " + std::to_string(h) + " matrix rows");
  layer.weights.resize(h, r);
  for (Eigen::Index i = 0; i < h; ++i) {
    require(rows[static_cast<std::size_t>(i)].size() == r, src + ": row " + std::to_string(i + 1) + " has the wrong length");
    layer.weights.row(i) = rows[static_cast<std::size_t>(i)].transpose();
  }
  return layer;
}

// Fit results: Gibbs draws as CSV, VB factors as key-value text.

inline std::vector<std::string> theta_names(Eigen::Index p, Eigen::Index h) {
  std::vector<std::string> names;
  for (Eigen::Index j = 0; j < p; ++j) names.push_back("beta_" + std::to_string(j + 1));
  for (Eigen::Index j = 0; j < h; ++j) names.push_back("eta_" + std::to_string(j + 1));
  return names;
}

inline std::string format_gibbs(const FitResult& fit) {
  require(fit.kind == FitKind::Gibbs, "not a Gibbs fit");
  auto head = theta_names(fit.p, fit.h);
  head.push_back("sigma2_eta");
  std::string out = csv_row(head);
  for (Eigen::Index i = 0; i < fit.draws.rows(); ++i) out += numeric_row(fit.draws.row(i));
  return out;
}

inline FitResult read_gibbs(const fs::path& path) {
  const CsvTable t = read_csv(path);
  const std::string src = path.filename().string();
  FitResult fit;
  fit.kind = FitKind::Gibbs;
  for (const auto& name : t.header) {
    if (name.starts_with("beta_")) ++fit.p;
    if (name.starts_with("eta_")) ++fit.h;
  }
  auto expected = theta_names(fit.p, fit.h);
  expected.push_back("sigma2_eta");
  require(t.header == expected, src + ": header must be beta_*, eta_*, sigma2_eta");
  fit.draws.resize(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(t.header.size()));
  for (std::size_t r = 0; r < t.rows.size(); ++r)
    for (std::size_t c = 0; c < t.header.size(); ++c)
      fit.draws(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          parse_double(t.rows[r][c], src + " row " + std::to_string(r + 1));
  return fit;
}

inline std::string format_vb(const FitResult& fit) {
  require(fit.kind == FitKind::VB, "not a VB fit");
  KeyValues kv{{"kind", "vb"},
               {"p", std::to_string(fit.p)},
               {"h", std::to_string(fit.h)},
               {"iterations", std::to_string(fit.iterations)},
               {"converged", fit.converged ? "true" : "false"},
               {"ig_shape", format_double(fit.ig_shape)},
               {"ig_rate", format_double(fit.ig_rate)},
               {"names", [&] {
                  std::string s;
                  for (const auto& n : theta_names(fit.p, fit.h)) s += (s.empty() ? "" : ",") + n;
                  return s;
                }()},
               {"mean", join_numbers(fit.mean)},
               {"elbo", join_numbers(Eigen::Map<const Eigen::VectorXd>(fit.elbo.data(),
                                                                       static_cast<Eigen::Index>(fit.elbo.size())))}};
  for (Eigen::Index i = 0; i < fit.cov.rows(); ++i) kv.emplace_back("cov_" + std::to_string(i + 1), join_numbers(fit.cov.row(i).transpose()));
  return format_key_values(kv);
}

inline FitResult read_vb(const fs::path& path) {
  const std::string src = path.filename().string();
  const auto kv = parse_key_values(read_text(path), src);
  require(require_key(kv, "kind", src) == "vb", src + ": kind must be vb");
  FitResult fit;
  fit.kind = FitKind::VB;
  fit.p = parse_int(require_key(kv, "p", src), src);
  fit.h = parse_int(require_key(kv, "h", src), src);
  fit.iterations = static_cast<int>(parse_int(require_key(kv, "iterations", src), src));
  fit.converged = require_key(kv, "converged", src) == "true";
  fit.ig_shape = parse_double(require_key(kv, "ig_shape", src), src);
  fit.ig_rate = parse_double(require_key(kv, "ig_rate", src), src);
  fit.mean = split_numbers(require_key(kv, "mean", src), src);
  const Eigen::VectorXd elbo = split_numbers(require_key(kv, "elbo", src), src);
  fit.elbo.assign(elbo.data(), elbo.data() + elbo.size());
  const Eigen::Index d = fit.dim();
  require(fit.mean.size() == d, src + ": mean has the wrong length");
  Eigen::MatrixXd cov(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    const Eigen::VectorXd row = split_numbers(require_key(kv, "cov_" + std::to_string(i + 1), src), src);
    require(row.size() == d, src + ": covariance row " + std::to_string(i + 1) + " has the wrong length");
    cov.row(i) = row.transpose();
  }
  fit.set_covariance(std::move(cov));
  return fit;
}

/// Writes into a hidden sibling directory and renames it into place on commit.
/// Uncommitted output is removed, so a failed run leaves nothing behind.
class StagedOutput {
 public:
  explicit StagedOutput(fs::path target) : target_(std::move(target)) {
    if (target_.filename().empty()) target_ = target_.parent_path();
    require(!target_.empty(), "output directory must be given");
    staging_ = target_.parent_path() / ("." + target_.filename().string() + ".staging");
    std::error_code ec;
    fs::remove_all(staging_, ec);
    fs::create_directories(staging_, ec);
    if (ec) throw ValidationError("cannot create output directory " + staging_.string() + ": " + ec.message());
  }
  StagedOutput(const StagedOutput&) = delete;
  StagedOutput& operator=(const StagedOutput&) = delete;
  ~StagedOutput() {
    if (!committed_) {
      std::error_code ec;
      fs::remove_all(staging_, ec);
    }
  }

  fs::path path(const std::string& name) const { return staging_ / name; }
  void write(const std::string& name, const std::string& content) const { write_text(path(name), content); }

  void commit() {
    std::error_code ec;
    fs::remove_all(target_, ec);
    fs::rename(staging_, target_, ec);
    if (ec) throw ValidationError("cannot move output into " + target_.string() + ": " + ec.message());
    committed_ = true;
  }

 private:
  fs::path target_;
  fs::path staging_;
  bool committed_ = false;
};

}  // namespace budis::io
