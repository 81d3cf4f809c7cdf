#pragma once

// Local linear surrogates around single predictions, their average as
// global feature weights, and top-k feature selection.

#include <Eigen/Dense>

#include <algorithm>
#include <cassert>
#include <cmath>
#include <functional>
#include <numeric>
#include <istream>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "hmd/common.hpp"

namespace hmd::explain {

/// Scalar model output being explained (AMP score or one activity score).
using ScoreFunction = std::function<double(std::span<const double>)>;

struct FeatureStats {
  std::vector<double> mean;
  std::vector<double> stddev;  // population standard deviation

  std::size_t dim() const noexcept { return mean.size(); }
};

inline FeatureStats feature_stats(const RealMatrix& x) {
  if (x.rows() == 0) throw DataError("feature_stats: no rows");
  FeatureStats st{std::vector<double>(x.cols(), 0.0), std::vector<double>(x.cols(), 0.0)};
  const double n = double(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) st.mean[j] += x(i, j);
  }
  for (double& m : st.mean) m /= n;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) {
      const double d = x(i, j) - st.mean[j];
      st.stddev[j] += d * d;
    }
  }
  for (double& s : st.stddev) s = std::sqrt(s / n);
  return st;
}

struct Perturbation {
  RealMatrix samples;           // row 0 is the instance itself
  std::vector<double> weights;  // exp(-dist^2 / sigma^2)
};

/// Draws n_samples - 1 neighbours of `instance`, feature j from
/// N(instance_j, stddev_j^2); zero-variance features stay fixed. Distance is
/// Euclidean in units of the training stddev.
inline Perturbation perturb(std::span<const double> instance, std::size_t n_samples, const FeatureStats& stats,
                            double sigma, Rng& rng) {
  const std::size_t d = instance.size();
  if (stats.dim() != d) throw DataError("perturb: statistics do not match the instance dimension");
  if (n_samples == 0) throw DataError("perturb: n_samples must be positive");
  if (!(sigma > 0)) throw DataError("perturb: kernel width must be positive");
  Perturbation p{RealMatrix(n_samples, d), std::vector<double>(n_samples, 1.0)};
  std::copy(instance.begin(), instance.end(), p.samples.row(0).begin());
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 1; i < n_samples; ++i) {
    double dist2 = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      if (stats.stddev[j] > 0) {
        const double z = normal(rng);
        p.samples(i, j) = instance[j] + z * stats.stddev[j];
        dist2 += z * z;
      } else {
        p.samples(i, j) = instance[j];
      }
    }
    p.weights[i] = std::exp(-dist2 / (sigma * sigma));
  }
  return p;
}

struct ExplainConfig {
  std::size_t n_samples = 1000;
  /// Kernel width; 0 selects 0.75 * sqrt(d).
  double sigma = 0.0;
  double ridge = 1e-3;
  std::uint64_t seed = 0;
};

struct LocalExplanation {
  std::string id;
  std::vector<double> weights;  // slope per standardized feature
  double intercept = 0.0;
  double sigma = 0.0;
  std::size_t n_samples = 0;
};

/// Weighted ridge fit of y on standardized features z with an unpenalized
/// intercept: minimizes sum_i w_i (y_i - b - z_i.beta)^2 + ridge |beta|^2.
/// Centering by the weighted means eliminates b.
inline std::pair<std::vector<double>, double> weighted_ridge(const RealMatrix& z, std::span<const double> y,
                                                             std::span<const double> w, double ridge) {
  const std::size_t n = z.rows(), d = z.cols();
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const Mat> Z(z.data().data(), Eigen::Index(n), Eigen::Index(d));
  Eigen::Map<const Eigen::VectorXd> Y(y.data(), Eigen::Index(n));
  Eigen::Map<const Eigen::VectorXd> W(w.data(), Eigen::Index(n));
  const double wsum = W.sum();
  if (!(wsum > 0)) throw DataError("weighted_ridge: weights sum to zero");
  const Eigen::RowVectorXd zbar = (W.transpose() * Z) / wsum;
  const double ybar = W.dot(Y) / wsum;
  const Mat zc = Z.rowwise() - zbar;
  const Eigen::VectorXd yc = Y.array() - ybar;
  Eigen::MatrixXd a = zc.transpose() * W.asDiagonal() * zc;
  a.diagonal().array() += ridge;
  const Eigen::VectorXd rhs = zc.transpose() * (W.asDiagonal() * yc);
  Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
  assert(ldlt.info() == Eigen::Success && "ridge system must be positive definite");
  const Eigen::VectorXd beta = ldlt.solve(rhs);
  std::vector<double> out(beta.data(), beta.data() + beta.size());
  return {out, ybar - zbar.dot(beta)};
}

inline double default_sigma(std::size_t d) { return 0.75 * std::sqrt(double(d)); }

/// Standardized design matrix: (x - mean) / stddev, 0 for constant features.
inline RealMatrix standardize(const RealMatrix& x, const FeatureStats& stats) {
  RealMatrix z(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) {
      z(i, j) = stats.stddev[j] > 0 ? (x(i, j) - stats.mean[j]) / stats.stddev[j] : 0.0;
    }
  }
  return z;
}

inline LocalExplanation local_weights(const ScoreFunction& score, std::span<const double> instance,
                                      const FeatureStats& stats, const ExplainConfig& config, std::string id = {}) {
  const double sigma = config.sigma > 0 ? config.sigma : default_sigma(instance.size());
  if (!(config.ridge > 0)) throw DataError("local_weights: ridge damping must be positive");
  Rng rng(config.seed);
  auto p = perturb(instance, config.n_samples, stats, sigma, rng);
  std::vector<double> y(p.samples.rows());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = score(p.samples.row(i));
  auto [beta, b] = weighted_ridge(standardize(p.samples, stats), y, p.weights, config.ridge);
  return {std::move(id), std::move(beta), b, sigma, config.n_samples};
}

struct GlobalWeights {
  std::vector<double> weights;
  std::size_t instances = 0;
};

/// Mean of the local slope vectors over the rows of `instances`. Instance i
/// uses seed derive_seed(config.seed, i).
inline GlobalWeights global_weights(const ScoreFunction& score, const RealMatrix& instances,
                                    const FeatureStats& stats, const ExplainConfig& config) {
  if (instances.rows() == 0) throw DataError("global_weights: no instances");
  GlobalWeights g{std::vector<double>(instances.cols(), 0.0), instances.rows()};
  for (std::size_t i = 0; i < instances.rows(); ++i) {
    auto cfg = config;
    cfg.seed = derive_seed(config.seed, i);
    auto local = local_weights(score, instances.row(i), stats, cfg);
    for (std::size_t j = 0; j < g.weights.size(); ++j) g.weights[j] += local.weights[j];
  }
  for (double& w : g.weights) w /= double(instances.rows());
  return g;
}

/// Indices of the k largest weights (or magnitudes), descending, ties to the
/// lower index.
inline std::vector<std::size_t> select_top_k(std::span<const double> weights, std::size_t k = 48,
                                             bool by_magnitude = false) {
  if (k == 0) throw DataError("select_top_k: k must be positive");
  if (k > weights.size()) {
    throw DataError("select_top_k: k = " + std::to_string(k) + " exceeds " + std::to_string(weights.size()) +
                    " features");
  }
  auto key = [&](std::size_t i) { return by_magnitude ? std::abs(weights[i]) : weights[i]; };
  std::vector<std::size_t> idx(weights.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return key(a) > key(b); });
  idx.resize(k);
  return idx;
}

inline void write_global_weights(std::ostream& out, const GlobalWeights& g) {
  out << "feature\tweight\n";
  for (std::size_t j = 0; j < g.weights.size(); ++j) out << j << '\t' << format_real(g.weights[j]) << '\n';
}

inline GlobalWeights read_global_weights(std::istream& in) {
  GlobalWeights g;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    auto line = strip_cr(raw);
    if (line.empty() || line_no == 1) continue;
    auto cells = split(line, '\t');
    std::size_t idx;
    double w;
    if (cells.size() != 2 || !parse_size(cells[0], idx) || !parse_real(cells[1], w)) {
      throw ParseError(line_no, "expected '<feature>\\t<weight>'");
    }
    if (idx != g.weights.size()) throw ParseError(line_no, "feature indices must be consecutive from 0");
    g.weights.push_back(w);
  }
  return g;
}

inline void write_indices(std::ostream& out, std::span<const std::size_t> idx) {
  for (auto i : idx) out << i << '\n';
}

inline std::vector<std::size_t> read_indices(std::istream& in) {
  std::vector<std::size_t> out;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    auto line = strip_cr(raw);
    if (line.empty()) continue;
    std::size_t v;
    if (!parse_size(line, v)) throw ParseError(line_no, "expected a feature index");
    out.push_back(v);
  }
  std::vector<std::size_t> sorted = out;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw DataError("feature subset lists an index twice");
  }
  return out;
}

}  // namespace hmd::explain
