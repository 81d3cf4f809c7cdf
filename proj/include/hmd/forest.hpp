#pragma once

// Multi-label decision trees and forests.
//
// A tree node splits on `x[feature] <= threshold` (left) versus greater
// (right). Leaves hold the exact fraction of their training rows carrying
// each label. Two tree flavours are supported:
//   - random: floor(sqrt(d)) candidate features per node, best multi-label
//     Gini split over midpoint thresholds, trained on a bootstrap sample;
//   - completely random: one random non-constant feature and a uniform
//     threshold inside its observed range, trained on every row.

#include <array>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hmd/common.hpp"

namespace hmd::forest {

enum class ForestKind : std::uint8_t { kRandom = 0, kCompletelyRandom = 1 };

inline const char* to_string(ForestKind k) {
  return k == ForestKind::kRandom ? "random" : "completely-random";
}

/// Sum over labels of 2 p_k (1 - p_k).
inline double multi_label_gini(std::span<const double> p) {
  double g = 0.0;
  for (double pk : p) g += 2.0 * pk * (1.0 - pk);
  return g;
}

struct TreeNode {
  std::int32_t feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  std::int32_t left = -1;
  std::int32_t right = -1;
  std::int32_t leaf = -1;  // index into Tree::leaf_values rows
  std::uint32_t samples = 0;

  bool is_leaf() const noexcept { return feature < 0; }
  friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

struct Tree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root
  std::vector<double> leaf_values;  // leaf_count x n_labels, row-major
  std::size_t n_labels = 0;

  std::size_t leaf_count() const noexcept { return n_labels == 0 ? 0 : leaf_values.size() / n_labels; }
  std::span<const double> leaf(std::size_t i) const {
    return {leaf_values.data() + i * n_labels, n_labels};
  }
  std::size_t depth() const {
    std::size_t best = 0;
    std::vector<std::pair<std::int32_t, std::size_t>> stack{{0, 0}};
    while (!stack.empty()) {
      auto [n, d] = stack.back();
      stack.pop_back();
      best = std::max(best, d);
      if (!nodes[n].is_leaf()) {
        stack.push_back({nodes[n].left, d + 1});
        stack.push_back({nodes[n].right, d + 1});
      }
    }
    return best;
  }

  /// Leaf distribution reached by row `r` of a feature table.
  template <FeatureTable F>
  std::span<const double> route(const F& x, std::size_t r) const {
    std::size_t n = 0;
    while (!nodes[n].is_leaf()) {
      const auto& node = nodes[n];
      n = static_cast<std::size_t>(x(r, static_cast<std::size_t>(node.feature)) <= node.threshold ? node.left
                                                                                                  : node.right);
    }
    return leaf(static_cast<std::size_t>(nodes[n].leaf));
  }

  std::span<const double> route(std::span<const double> v) const {
    std::size_t n = 0;
    while (!nodes[n].is_leaf()) {
      const auto& node = nodes[n];
      n = static_cast<std::size_t>(v[static_cast<std::size_t>(node.feature)] <= node.threshold ? node.left
                                                                                              : node.right);
    }
    return leaf(static_cast<std::size_t>(nodes[n].leaf));
  }

  friend bool operator==(const Tree&, const Tree&) = default;
};

struct Split {
  std::size_t feature = 0;
  double threshold = 0.0;
  /// Parent Gini minus the sample-weighted child Gini.
  double impurity_decrease = 0.0;
  /// (n_left * Gini(left) + n_right * Gini(right)) / n.
  double child_impurity = 0.0;
};

namespace detail {

template <LabelTable L>
void count_labels(const L& y, std::span<const std::size_t> rows, std::vector<double>& counts) {
  counts.assign(y.cols(), 0.0);
  for (auto r : rows) {
    for (std::size_t k = 0; k < counts.size(); ++k) counts[k] += y(r, k);
  }
}

/// sum_k 2 c_k (n - c_k) / n, i.e. n * Gini of a node with counts c.
inline double weighted_gini(const std::vector<double>& c, double n) {
  if (n <= 0) return 0.0;
  double g = 0.0;
  for (double ck : c) g += ck * (n - ck);
  return 2.0 * g / n;
}

inline double midpoint(double a, double b) {
  double m = a + (b - a) * 0.5;
  // Adjacent doubles: keep `a` on the left.
  return (m >= b) ? a : m;
}

}  // namespace detail

/// Best Gini split of `rows` over `candidates`. Thresholds are midpoints of
/// consecutive distinct values; ties go to the lower feature index, then the
/// lower threshold. Returns nullopt when no candidate separates the rows
/// into two children of at least `min_samples_leaf` rows each.
template <FeatureTable F, LabelTable L>
std::optional<Split> best_split(const F& x, const L& y, std::span<const std::size_t> rows,
                                std::span<const std::size_t> candidates, std::size_t min_samples_leaf = 1) {
  const std::size_t n = rows.size();
  if (n < 2) return std::nullopt;
  min_samples_leaf = std::max<std::size_t>(min_samples_leaf, 1);
  std::vector<std::size_t> features(candidates.begin(), candidates.end());
  std::sort(features.begin(), features.end());
  features.erase(std::unique(features.begin(), features.end()), features.end());

  const std::size_t l = y.cols();
  std::vector<double> total;
  detail::count_labels(y, rows, total);
  const double dn = static_cast<double>(n);
  const double parent = detail::weighted_gini(total, dn) / dn;

  std::optional<Split> best;
  std::vector<std::pair<double, std::size_t>> order(n);
  std::vector<double> left(l), right(l);
  for (auto f : features) {
    for (std::size_t i = 0; i < n; ++i) order[i] = {x(rows[i], f), rows[i]};
    std::sort(order.begin(), order.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    if (!(order.front().first < order.back().first)) continue;
    std::fill(left.begin(), left.end(), 0.0);
    for (std::size_t i = 0; i + 1 < n; ++i) {
      for (std::size_t k = 0; k < l; ++k) left[k] += y(order[i].second, k);
      const std::size_t nl = i + 1;
      if (!(order[i].first < order[i + 1].first)) continue;
      if (nl < min_samples_leaf || n - nl < min_samples_leaf) continue;
      for (std::size_t k = 0; k < l; ++k) right[k] = total[k] - left[k];
      const double child = (detail::weighted_gini(left, static_cast<double>(nl)) +
                            detail::weighted_gini(right, static_cast<double>(n - nl))) / dn;
      if (!best || child < best->child_impurity) {
        best = Split{f, detail::midpoint(order[i].first, order[i + 1].first), parent - child, child};
      }
    }
  }
  return best;
}

struct TreeConfig {
  ForestKind kind = ForestKind::kRandom;
  /// Minimum rows per leaf; 0 selects the kind default (2 random, 1 CR).
  std::size_t min_samples_leaf = 0;
  /// 0 means unbounded.
  std::size_t max_depth = 0;
  /// Candidate features per node in random mode; 0 selects floor(sqrt(d)).
  std::size_t max_features = 0;
};

inline std::size_t effective_min_samples_leaf(const TreeConfig& c) {
  if (c.min_samples_leaf > 0) return c.min_samples_leaf;
  return c.kind == ForestKind::kRandom ? 2 : 1;
}

inline std::size_t effective_max_features(const TreeConfig& c, std::size_t d) {
  if (c.max_features > 0) return std::min(c.max_features, d);
  auto k = static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(d))));
  while ((k + 1) * (k + 1) <= d) ++k;
  while (k * k > d) --k;
  return std::max<std::size_t>(k, 1);
}

/// Grows one tree on `rows` (duplicates allowed; a bootstrap sample counts
/// each copy). Stops on a pure node, min_samples_leaf or max_depth.
template <FeatureTable F, LabelTable L>
Tree train_tree(const F& x, const L& y, std::vector<std::size_t> rows, const TreeConfig& config, Rng& rng) {
  if (rows.empty()) throw DataError("train_tree: no rows");
  const std::size_t d = x.cols();
  const std::size_t l = y.cols();
  const std::size_t msl = effective_min_samples_leaf(config);
  const std::size_t n_candidates = effective_max_features(config, d);

  Tree tree;
  tree.n_labels = l;
  tree.nodes.emplace_back();

  struct Pending {
    std::size_t begin, end, depth, node;
  };
  std::vector<Pending> stack{{0, rows.size(), 0, 0}};
  std::vector<std::size_t> perm(d);
  std::vector<double> counts;

  auto make_leaf = [&](std::size_t node, std::span<const std::size_t> span) {
    auto& nd = tree.nodes[node];
    nd.feature = -1;
    nd.samples = static_cast<std::uint32_t>(span.size());
    nd.leaf = static_cast<std::int32_t>(tree.leaf_count());
    for (double c : counts) tree.leaf_values.push_back(c / static_cast<double>(span.size()));
  };

  while (!stack.empty()) {
    Pending p = stack.back();
    stack.pop_back();
    std::span<std::size_t> span(rows.data() + p.begin, p.end - p.begin);
    detail::count_labels(y, span, counts);
    const double n = static_cast<double>(span.size());
    const bool pure = std::all_of(counts.begin(), counts.end(), [&](double c) { return c == 0.0 || c == n; });
    if (pure || span.size() < 2 * msl || (config.max_depth > 0 && p.depth >= config.max_depth)) {
      make_leaf(p.node, span);
      continue;
    }

    std::optional<std::pair<std::size_t, double>> chosen;
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    if (config.kind == ForestKind::kRandom) {
      // Draw candidate batches without replacement until one yields a split.
      for (std::size_t start = 0; start < d && !chosen; start += n_candidates) {
        const std::size_t stop = std::min(d, start + n_candidates);
        for (std::size_t i = start; i < stop; ++i) std::swap(perm[i], perm[i + uniform_index(rng, d - i)]);
        auto split = best_split(x, y, std::span<const std::size_t>(span.data(), span.size()),
                                std::span<const std::size_t>(perm.data() + start, stop - start), msl);
        if (split) chosen = {{split->feature, split->threshold}};
      }
    } else {
      for (std::size_t i = 0; i < d && !chosen; ++i) {
        std::swap(perm[i], perm[i + uniform_index(rng, d - i)]);
        const std::size_t f = perm[i];
        double lo = x(span[0], f), hi = lo;
        for (auto r : span) {
          const double v = x(r, f);
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
        if (!(lo < hi)) continue;
        double t = lo + uniform_real(rng) * (hi - lo);
        if (t >= hi) t = lo;
        chosen = {{f, t}};
      }
    }
    if (!chosen) {
      make_leaf(p.node, span);
      continue;
    }
    const auto [feature, threshold] = *chosen;
    auto mid = std::partition(span.begin(), span.end(), [&](std::size_t r) { return x(r, feature) <= threshold; });
    const std::size_t n_left = static_cast<std::size_t>(mid - span.begin());
    if (n_left < msl || span.size() - n_left < msl) {
      make_leaf(p.node, span);
      continue;
    }
    const auto left = static_cast<std::int32_t>(tree.nodes.size());
    tree.nodes.emplace_back();
    tree.nodes.emplace_back();
    auto& nd = tree.nodes[p.node];
    nd.feature = static_cast<std::int32_t>(feature);
    nd.threshold = threshold;
    nd.left = left;
    nd.right = left + 1;
    nd.samples = static_cast<std::uint32_t>(span.size());
    stack.push_back({p.begin + n_left, p.end, p.depth + 1, static_cast<std::size_t>(left + 1)});
    stack.push_back({p.begin, p.begin + n_left, p.depth + 1, static_cast<std::size_t>(left)});
  }
  return tree;
}

struct ForestConfig {
  ForestKind kind = ForestKind::kRandom;
  std::size_t n_trees = 1000;
  std::size_t min_samples_leaf = 0;
  std::size_t max_depth = 0;
  std::size_t max_features = 0;
  /// Worker threads for tree training; 0 means default_thread_count().
  unsigned threads = 0;

  TreeConfig tree_config() const { return {kind, min_samples_leaf, max_depth, max_features}; }
};

struct ForestModel {
  ForestKind kind = ForestKind::kRandom;
  std::size_t n_features = 0;
  std::size_t n_labels = 0;
  std::uint64_t seed = 0;
  std::size_t min_samples_leaf = 0;
  std::size_t max_depth = 0;
  std::size_t max_features = 0;
  std::vector<Tree> trees;

  std::size_t n_trees() const noexcept { return trees.size(); }
  friend bool operator==(const ForestModel&, const ForestModel&) = default;
};

/// Seed of tree `i` in a forest seeded with `forest_seed`.
constexpr std::uint64_t tree_seed(std::uint64_t forest_seed, std::size_t i) {
  return derive_seed(forest_seed, 0x7472656500000000ULL + i);
}

/// n draws with replacement from `pool`.
inline std::vector<std::size_t> bootstrap_sample(std::span<const std::size_t> pool, Rng& rng) {
  std::vector<std::size_t> out(pool.size());
  for (auto& r : out) r = pool[uniform_index(rng, pool.size())];
  return out;
}

/// Trains on the rows listed in `rows`. Each tree draws from its own engine
/// seeded by tree_seed(seed, i), so the result does not depend on the
/// thread count.
template <FeatureTable F, LabelTable L>
ForestModel train_forest(const F& x, const L& y, std::span<const std::size_t> rows, const ForestConfig& config,
                         std::uint64_t seed) {
  if (rows.empty()) throw DataError("train_forest: no training rows");
  if (x.rows() != y.rows()) throw DataError("train_forest: feature/label row count mismatch");
  if (config.n_trees == 0) throw DataError("train_forest: n_trees must be positive");
  ForestModel m;
  m.kind = config.kind;
  m.n_features = x.cols();
  m.n_labels = y.cols();
  m.seed = seed;
  m.min_samples_leaf = config.min_samples_leaf;
  m.max_depth = config.max_depth;
  m.max_features = config.max_features;
  m.trees.resize(config.n_trees);
  const TreeConfig tc = config.tree_config();
  parallel_for(config.n_trees, config.threads, [&](std::size_t i) {
    Rng rng(tree_seed(seed, i));
    std::vector<std::size_t> sample = config.kind == ForestKind::kRandom
                                          ? bootstrap_sample(rows, rng)
                                          : std::vector<std::size_t>(rows.begin(), rows.end());
    m.trees[i] = train_tree(x, y, std::move(sample), tc, rng);
  });
  return m;
}

template <FeatureTable F, LabelTable L>
ForestModel train_forest(const F& x, const L& y, const ForestConfig& config, std::uint64_t seed) {
  std::vector<std::size_t> rows(x.rows());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return train_forest(x, y, rows, config, seed);
}

/// Adds the forest's mean leaf distribution for row `r` into `out`.
template <FeatureTable F>
void accumulate_prediction(const ForestModel& m, const F& x, std::size_t r, std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  for (const auto& t : m.trees) {
    auto leaf = t.route(x, r);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += leaf[k];
  }
  const double inv = 1.0 / static_cast<double>(m.trees.size());
  for (double& v : out) v *= inv;
}

/// Unweighted mean of the leaf distributions reached in every tree.
inline std::vector<double> predict_forest(const ForestModel& m, std::span<const double> v) {
  if (v.size() != m.n_features) {
    throw DataError("predict_forest: expected " + std::to_string(m.n_features) + " features, got " +
                    std::to_string(v.size()));
  }
  std::vector<double> out(m.n_labels, 0.0);
  for (const auto& t : m.trees) {
    auto leaf = t.route(v);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += leaf[k];
  }
  const double inv = 1.0 / static_cast<double>(m.trees.size());
  for (double& x : out) x *= inv;
  return out;
}

/// Predictions for every row of `x` (or the listed rows).
template <FeatureTable F>
RealMatrix predict_rows(const ForestModel& m, const F& x, std::span<const std::size_t> rows) {
  if (x.cols() != m.n_features) throw DataError("predict_rows: feature dimension mismatch");
  RealMatrix out(rows.size(), m.n_labels);
  for (std::size_t i = 0; i < rows.size(); ++i) accumulate_prediction(m, x, rows[i], out.row(i));
  return out;
}

template <FeatureTable F>
RealMatrix predict_rows(const ForestModel& m, const F& x) {
  std::vector<std::size_t> rows(x.rows());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return predict_rows(m, x, rows);
}

/// Fold index per row: a seeded shuffle dealt round-robin into k folds.
inline std::vector<std::size_t> assign_folds(std::size_t n, std::size_t k, std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(seed);
  shuffle(perm, rng);
  std::vector<std::size_t> fold(n);
  for (std::size_t i = 0; i < n; ++i) fold[perm[i]] = i % k;
  return fold;
}

/// Out-of-fold predictions over the listed rows: row i is predicted by a
/// forest trained on the other k_inner - 1 folds. Output rows follow
/// `rows`.
template <FeatureTable F, LabelTable L>
RealMatrix out_of_fold_predict(const F& x, const L& y, std::span<const std::size_t> rows,
                               const ForestConfig& config, std::size_t k_inner, std::uint64_t seed) {
  const std::size_t n = rows.size();
  if (k_inner < 2) throw DataError("out_of_fold_predict: k_inner must be at least 2");
  if (n < k_inner) throw DataError("out_of_fold_predict: fewer rows than folds");
  for (std::size_t k = 0; k < y.cols(); ++k) {
    std::size_t pos = 0;
    for (auto r : rows) pos += y(r, k);
    if (pos < k_inner) {
      warn("label " + std::to_string(k) + " has " + std::to_string(pos) + " positive rows, fewer than the " +
           std::to_string(k_inner) + " inner folds");
    }
  }
  const auto fold = assign_folds(n, k_inner, seed);
  RealMatrix out(n, y.cols());
  for (std::size_t f = 0; f < k_inner; ++f) {
    std::vector<std::size_t> train, test;
    for (std::size_t i = 0; i < n; ++i) (fold[i] == f ? test : train).push_back(i);
    std::vector<std::size_t> train_rows, test_rows;
    for (auto i : train) train_rows.push_back(rows[i]);
    for (auto i : test) test_rows.push_back(rows[i]);
    auto model = train_forest(x, y, train_rows, config, derive_seed(seed, f));
    for (std::size_t j = 0; j < test.size(); ++j) accumulate_prediction(model, x, test_rows[j], out.row(test[j]));
  }
  return out;
}

template <FeatureTable F, LabelTable L>
RealMatrix out_of_fold_predict(const F& x, const L& y, const ForestConfig& config, std::size_t k_inner,
                               std::uint64_t seed) {
  std::vector<std::size_t> rows(x.rows());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return out_of_fold_predict(x, y, rows, config, k_inner, seed);
}

}  // namespace hmd::forest
