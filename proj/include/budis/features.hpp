#pragma once
// Covariate construction: word-presence indicators from free text and linear
// covariates (intercept, demographic indicators, adjacency eigenvector basis).

#include <Eigen/Dense>
#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "budis/error.hpp"

namespace budis {

// English stopwords (NLTK list, apostrophe forms reduced to their alphanumeric stems).
inline const std::set<std::string, std::less<>>& stopwords() {
  static const std::set<std::string, std::less<>> words = {
      "a",       "about",   "above",   "after",    "again",   "against", "ain",     "all",      "am",
      "an",      "and",     "any",     "are",      "aren",    "as",      "at",      "be",       "because",
      "been",    "before",  "being",   "below",    "between", "both",    "but",     "by",       "can",
      "couldn",  "d",       "did",     "didn",     "do",      "does",    "doesn",   "doing",    "don",
      "down",    "during",  "each",    "few",      "for",     "from",    "further", "had",      "hadn",
      "has",     "hasn",    "have",    "haven",    "having",  "he",      "her",     "here",     "hers",
      "herself", "him",     "himself", "his",      "how",     "i",       "if",      "in",       "into",
      "is",      "isn",     "it",      "its",      "itself",  "just",    "ll",      "m",        "ma",
      "me",      "mightn",  "more",    "most",     "mustn",   "my",      "myself",  "needn",    "no",
      "nor",     "not",     "now",     "o",        "of",      "off",     "on",      "once",     "only",
      "or",      "other",   "our",     "ours",     "ourselves", "out",   "over",    "own",      "re",
      "s",       "same",    "shan",    "she",      "should",  "shouldn", "so",      "some",     "such",
      "t",       "than",    "that",    "the",      "their",   "theirs",  "them",    "themselves", "then",
      "there",   "these",   "they",    "this",     "those",   "through", "to",      "too",      "under",
      "until",   "up",      "ve",      "very",     "was",     "wasn",    "we",      "were",     "weren",
      "what",    "when",    "where",   "which",    "while",   "who",     "whom",    "why",      "will",
      "with",    "won",     "wouldn",  "y",        "you",     "your",    "yours",   "yourself", "yourselves"};
  return words;
}

/// Lowercase ASCII, split on anything not [a-z0-9], drop stopwords and tokens shorter than 2.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (cur.size() >= 2 && !stopwords().contains(cur)) out.push_back(cur);
    cur.clear();
  };
  for (unsigned char ch : text) {
    if (ch < 128 && std::isalnum(ch)) {
      cur.push_back(static_cast<char>(std::tolower(ch)));
    } else {
      flush();
    }
  }
  flush();
  return out;
}

class Vocabulary {
 public:
  Vocabulary() = default;
  Vocabulary(std::vector<std::string> words, std::vector<long> counts)
      : words_(std::move(words)), counts_(std::move(counts)) {
    require(words_.size() == counts_.size(), "vocabulary words and counts differ in length");
    for (std::size_t i = 0; i < words_.size(); ++i) {
      if (!lookup_.emplace(words_[i], static_cast<long>(i)).second)
        throw ValidationError("duplicate vocabulary token '" + words_[i] + "'");
    }
  }

  const std::vector<std::string>& words() const { return words_; }  // most frequent first
  const std::vector<long>& counts() const { return counts_; }        // document frequencies
  std::size_t size() const { return words_.size(); }

  /// Index of a token, or -1.
  long index_of(const std::string& token) const {
    auto it = lookup_.find(token);
    return it == lookup_.end() ? -1 : it->second;
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.words_ == b.words_ && a.counts_ == b.counts_;
  }

 private:
  std::vector<std::string> words_;
  std::vector<long> counts_;
  std::unordered_map<std::string, long> lookup_;
};

/// Top-K tokens by document frequency; ties broken lexicographically.
inline Vocabulary build_vocabulary(std::span<const std::string> texts, std::size_t k) {
  require(k >= 1, "vocabulary size K must be at least 1");
  std::map<std::string, long> df;
  for (const auto& text : texts) {
    auto tokens = tokenize(text);
    std::sort(tokens.begin(), tokens.end());
    tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());
    for (auto& t : tokens) ++df[t];
  }
  if (df.empty()) throw ValidationError("cannot build a vocabulary from an empty corpus");
  std::vector<std::pair<std::string, long>> ranked(df.begin(), df.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  ranked.resize(std::min(k, ranked.size()));
  std::vector<std::string> words;
  std::vector<long> counts;
  for (auto& [word, count] : ranked) {
    words.push_back(word);
    counts.push_back(count);
  }
  return Vocabulary(std::move(words), std::move(counts));
}

/// Entry j is 1 iff word j occurs in the text.
inline Eigen::VectorXd text_indicators(const Vocabulary& vocab, std::string_view text) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(vocab.size()));
  for (const auto& token : tokenize(text)) {
    const long j = vocab.index_of(token);
    if (j >= 0) out[j] = 1.0;
  }
  return out;
}

struct Adjacency {
  std::vector<std::string> labels;
  Eigen::MatrixXd matrix;  // symmetric 0/1, zero diagonal
};

struct SpatialBasis {
  std::vector<std::string> areas;
  Eigen::MatrixXd vectors;      // one row per area, q columns
  Eigen::VectorXd eigenvalues;  // descending

  Eigen::Index dim() const { return vectors.cols(); }

  Eigen::Index row_of(std::string_view area) const {
    for (std::size_t i = 0; i < areas.size(); ++i)
      if (areas[i] == area) return static_cast<Eigen::Index>(i);
    throw ValidationError("unknown area label '" + std::string(area) + "'");
  }
};

/// The q leading eigenvectors (descending eigenvalue) of a symmetric adjacency matrix.
/// Columns are unit norm with their first nonzero entry positive.
inline SpatialBasis spatial_basis(const Adjacency& adj, Eigen::Index q) {
  const Eigen::Index m = adj.matrix.rows();
  require(adj.matrix.cols() == m, "adjacency matrix must be square");
  require(static_cast<Eigen::Index>(adj.labels.size()) == m, "adjacency labels do not match matrix size");
  require(q >= 1 && q <= m, "number of basis vectors q must lie in [1, " + std::to_string(m) + "]");
  if ((adj.matrix - adj.matrix.transpose()).cwiseAbs().maxCoeff() > 0.0)
    throw ValidationError("adjacency matrix is not symmetric");
  for (Eigen::Index i = 0; i < m; ++i)
    require(adj.matrix(i, i) == 0.0, "adjacency matrix must have a zero diagonal");

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(adj.matrix);
  if (solver.info() != Eigen::Success) throw NumericalError("eigendecomposition of adjacency failed");
  SpatialBasis basis;
  basis.areas = adj.labels;
  basis.vectors.resize(m, q);
  basis.eigenvalues.resize(q);
  for (Eigen::Index j = 0; j < q; ++j) {
    const Eigen::Index src = m - 1 - j;  // solver sorts ascending
    Eigen::VectorXd v = solver.eigenvectors().col(src).normalized();
    for (Eigen::Index i = 0; i < m; ++i) {
      if (std::abs(v[i]) > 1e-12) {
        if (v[i] < 0) v = -v;
        break;
      }
    }
    basis.vectors.col(j) = v;
    basis.eigenvalues[j] = solver.eigenvalues()[src];
  }
  return basis;
}

/// [1, demographic indicators..., basis row of the unit's area].
inline Eigen::VectorXd linear_covariates(std::span<const double> demographics, const SpatialBasis& basis,
                                         std::string_view area) {
  const Eigen::Index row = basis.row_of(area);
  const auto nd = static_cast<Eigen::Index>(demographics.size());
  Eigen::VectorXd out(1 + nd + basis.dim());
  out[0] = 1.0;
  for (Eigen::Index i = 0; i < nd; ++i) out[1 + i] = demographics[static_cast<std::size_t>(i)];
  out.tail(basis.dim()) = basis.vectors.row(row).transpose();
  return out;
}

/// Column count of the near-square grid used by grid_adjacency.
inline int grid_columns(int areas) {
  const int root = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(areas))));
  for (int c = root; c <= 2 * root; ++c)
    if (areas % c == 0) return c;
  return root;
}

/// Rook adjacency of the first `areas` cells of a near-square grid (row-major),
/// labelled A01, A02, ...
inline Adjacency grid_adjacency(int areas) {
  require(areas >= 1, "grid adjacency needs at least one area");
  const int cols = grid_columns(areas);
  Adjacency adj;
  adj.matrix = Eigen::MatrixXd::Zero(areas, areas);
  const std::size_t width = areas >= 100 ? 3 : 2;
  for (int i = 0; i < areas; ++i) {
    std::string num = std::to_string(i + 1);
    if (num.size() < width) num.insert(0, width - num.size(), '0');
    adj.labels.push_back("A" + num);
  }
  for (int i = 0; i < areas; ++i) {
    const int right = i + 1, down = i + cols;
    if ((i % cols) + 1 < cols && right < areas) adj.matrix(i, right) = adj.matrix(right, i) = 1.0;
    if (down < areas) adj.matrix(i, down) = adj.matrix(down, i) = 1.0;
  }
  return adj;
}

}  // namespace budis
