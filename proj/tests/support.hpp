#pragma once

// Shared fixtures: reference implementations written independently of the
// library code, synthetic data generators and small RAII helpers.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "hmd/common.hpp"

namespace hmd::testing {

/// AUC by counting every (positive, negative) pair; ties count as ordered.
inline double pair_count_auc(const std::vector<double>& s, const std::vector<std::uint8_t>& t) {
  double good = 0, total = 0;
  for (std::size_t a = 0; a < s.size(); ++a) {
    if (!t[a]) continue;
    for (std::size_t b = 0; b < s.size(); ++b) {
      if (t[b]) continue;
      total += 1;
      if (s[a] >= s[b]) good += 1;
    }
  }
  return good / total;
}

/// Mean pair-count AUC over the non-degenerate columns.
inline double pair_count_macro_auc(const RealMatrix& s, const LabelMatrix& t) {
  double sum = 0;
  int valid = 0;
  for (std::size_t j = 0; j < s.cols(); ++j) {
    std::vector<double> sc(s.rows());
    std::vector<std::uint8_t> tc(s.rows());
    std::size_t pos = 0;
    for (std::size_t i = 0; i < s.rows(); ++i) {
      sc[i] = s(i, j);
      tc[i] = t(i, j);
      pos += tc[i];
    }
    if (pos == 0 || pos == s.rows()) continue;
    sum += pair_count_auc(sc, tc);
    ++valid;
  }
  return sum / valid;
}

/// Sum over i = 0..m of prod_{k<i} p_k * prod_{k>=i} (1 - p_k), with p sorted
/// descending, evaluated directly.
inline double product_form_confidence(std::vector<double> p) {
  std::sort(p.begin(), p.end(), std::greater<>());
  double total = 0;
  for (std::size_t i = 0; i <= p.size(); ++i) {
    double term = 1;
    for (std::size_t k = 0; k < p.size(); ++k) term *= k < i ? p[k] : 1 - p[k];
    total += term;
  }
  return total;
}

// Independent statement of the growth rule over a fixed stream: returns the
// number of levels grown and the 1-based best level.
inline std::pair<std::size_t, std::size_t> growth_oracle(const std::vector<double>& stream, std::size_t max_layers,
                                                         std::size_t patience) {
  for (std::size_t t = 1; t <= stream.size(); ++t) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < t; ++i) {
      if (stream[i] > stream[best]) best = i;
    }
    if (t == max_layers || t - 1 - best >= patience) return {t, best + 1};
  }
  return {0, 0};
}

/// Weighted ridge with an unpenalized intercept, solved from the normal
/// equations over (b, beta) by Gauss-Jordan elimination with partial
/// pivoting. Returns {b, beta_1..beta_d}.
inline std::vector<double> ridge_oracle(const RealMatrix& z, const std::vector<double>& y, const std::vector<double>& w,
                                        double ridge) {
  const std::size_t n = z.rows(), d = z.cols(), m = d + 1;
  std::vector<std::vector<double>> a(m, std::vector<double>(m + 1, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> row(m);
    row[0] = 1.0;
    for (std::size_t j = 0; j < d; ++j) row[j + 1] = z(i, j);
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t c = 0; c < m; ++c) a[r][c] += w[i] * row[r] * row[c];
      a[r][m] += w[i] * row[r] * y[i];
    }
  }
  for (std::size_t j = 1; j < m; ++j) a[j][j] += ridge;
  for (std::size_t col = 0; col < m; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < m; ++r) {
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    }
    std::swap(a[col], a[piv]);
    for (std::size_t r = 0; r < m; ++r) {
      if (r == col) continue;
      const double f = a[r][col] / a[col][col];
      for (std::size_t c = col; c <= m; ++c) a[r][c] -= f * a[col][c];
    }
  }
  std::vector<double> x(m);
  for (std::size_t r = 0; r < m; ++r) x[r] = a[r][m] / a[r][r];
  return x;
}

struct Synthetic {
  RealMatrix x;
  LabelMatrix y;
  std::vector<std::vector<std::size_t>> support;  // features used by each label
};

/// Each label is 1[w . x_S + eps > 0] over its own 4 features S, with
/// x ~ U(-1, 1). w . x_S is close to N(0, |w|^2 / 3), so
/// eps ~ N(0, tan(18 deg)^2 |w|^2 / 3) flips about 18/180 = 10% of the
/// labels relative to the noiseless rule. The noise draws happen either
/// way, so `noisy = false` gives the same x and w.
inline Synthetic linear_labels(std::size_t n, std::size_t d, std::size_t l, std::uint64_t seed,
                               bool noisy = true) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  Synthetic s{RealMatrix(n, d), LabelMatrix(n, l), {}};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) s.x(i, j) = unif(rng);
  }
  for (std::size_t k = 0; k < l; ++k) {
    std::vector<std::size_t> feats;
    std::vector<double> w;
    double norm2 = 0;
    for (std::size_t q = 0; q < 4; ++q) {
      feats.push_back((k * 4 + q) % d);
      w.push_back(normal(rng) + (normal(rng) > 0 ? 1.0 : -1.0));
      norm2 += w.back() * w.back();
    }
    const double sigma = std::tan(18.0 * 3.14159265358979323846 / 180.0) * std::sqrt(norm2 / 3.0);
    for (std::size_t i = 0; i < n; ++i) {
      double z = 0;
      for (std::size_t q = 0; q < 4; ++q) z += w[q] * s.x(i, feats[q]);
      const double eps = sigma * normal(rng);
      if (noisy) z += eps;
      s.y(i, k) = z > 0 ? 1 : 0;
    }
    s.support.push_back(feats);
  }
  return s;
}

inline RealMatrix random_matrix(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  RealMatrix m(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) m(i, j) = unif(rng);
  }
  return m;
}

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("hmd-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Collects warnings emitted while alive.
class WarningLog {
 public:
  WarningLog() : sink_([this](const std::string& m) { messages.push_back(m); }) {}
  std::vector<std::string> messages;

  bool contains(const std::string& needle) const {
    return std::any_of(messages.begin(), messages.end(),
                       [&](const std::string& m) { return m.find(needle) != std::string::npos; });
  }

 private:
  ScopedWarningSink sink_;
};

}  // namespace hmd::testing
