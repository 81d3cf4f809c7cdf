#pragma once

// Cross-validation harness: stratified fold plans, k-fold evaluation of a
// cascade or a single random forest, small-subset experiments and the
// feature/model ablation variants.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "hmd/cascade.hpp"
#include "hmd/common.hpp"
#include "hmd/embed.hpp"
#include "hmd/forest.hpp"
#include "hmd/metrics.hpp"
#include "hmd/seqio.hpp"

namespace hmd::eval {

enum class StratifyMode : std::uint8_t { kBinary, kMultilabel };

struct FoldPlan {
  std::size_t k = 0;
  std::uint64_t seed = 0;
  StratifyMode mode = StratifyMode::kBinary;
  std::vector<std::vector<std::size_t>> folds;  // row indices, ascending

  /// Rows outside fold f, ascending.
  std::vector<std::size_t> train_rows(std::size_t f) const {
    std::vector<std::size_t> out;
    for (std::size_t g = 0; g < folds.size(); ++g) {
      if (g != f) out.insert(out.end(), folds[g].begin(), folds[g].end());
    }
    std::sort(out.begin(), out.end());
    return out;
  }
  friend bool operator==(const FoldPlan&, const FoldPlan&) = default;
};

namespace detail {
inline void check_k(std::size_t n, std::size_t k) {
  if (k < 2) throw DataError("k must be at least 2");
  if (k > n) throw DataError("k = " + std::to_string(k) + " exceeds the " + std::to_string(n) + " records");
}
inline void sort_folds(FoldPlan& plan) {
  for (auto& f : plan.folds) std::sort(f.begin(), f.end());
}
}  // namespace detail

/// Each class is shuffled and dealt round-robin, continuing where the
/// previous class stopped, so every fold gets its share of each class
/// (within one) and fold sizes differ by at most one.
inline FoldPlan stratified_folds(std::span<const std::uint8_t> labels, std::size_t k, std::uint64_t seed) {
  detail::check_k(labels.size(), k);
  FoldPlan plan{k, seed, StratifyMode::kBinary, std::vector<std::vector<std::size_t>>(k)};
  Rng rng(seed);
  std::size_t offset = 0;
  for (std::uint8_t cls : {std::uint8_t{1}, std::uint8_t{0}}) {
    std::vector<std::size_t> stratum;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if ((labels[i] != 0) == (cls != 0)) stratum.push_back(i);
    }
    shuffle(stratum, rng);
    for (std::size_t i = 0; i < stratum.size(); ++i) plan.folds[(offset + i) % k].push_back(stratum[i]);
    offset = (offset + stratum.size()) % k;
  }
  detail::sort_folds(plan);
  return plan;
}

/// Greedy iterative stratification for multi-label data: repeatedly take the
/// label with the fewest unassigned positives and send each of its examples
/// to the fold that still needs the most of that label (ties: the fold with
/// the most free capacity, then the lowest index). Folds are capped at
/// ceil or floor of n / k rows, so sizes differ by at most one. Label-free
/// rows fill the remaining capacity.
inline FoldPlan stratified_folds_multilabel(const LabelMatrix& y, std::size_t k, std::uint64_t seed) {
  const std::size_t n = y.rows(), l = y.cols();
  detail::check_k(n, k);
  FoldPlan plan{k, seed, StratifyMode::kMultilabel, std::vector<std::vector<std::size_t>>(k)};
  Rng rng(seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  shuffle(order, rng);

  std::vector<std::size_t> capacity(k, n / k);
  for (std::size_t f = 0; f < n % k; ++f) ++capacity[f];
  std::vector<std::vector<double>> need(k, std::vector<double>(l));
  for (std::size_t j = 0; j < l; ++j) {
    double count = 0;
    for (std::size_t i = 0; i < n; ++i) count += y(i, j);
    for (std::size_t f = 0; f < k; ++f) need[f][j] = count / double(k);
  }
  std::vector<std::uint8_t> assigned(n, 0);
  auto place = [&](std::size_t i, std::size_t f) {
    plan.folds[f].push_back(i);
    assigned[i] = 1;
    capacity[f] -= 1;
    for (std::size_t j = 0; j < l; ++j) {
      if (y(i, j)) need[f][j] -= 1;
    }
  };
  while (true) {
    std::optional<std::size_t> rarest;
    std::size_t rarest_count = 0;
    for (std::size_t j = 0; j < l; ++j) {
      std::size_t c = 0;
      for (auto i : order) c += !assigned[i] && y(i, j);
      if (c > 0 && (!rarest || c < rarest_count)) {
        rarest = j;
        rarest_count = c;
      }
    }
    if (!rarest) break;
    const std::size_t j = *rarest;
    for (auto i : order) {
      if (assigned[i] || !y(i, j)) continue;
      std::optional<std::size_t> best;
      for (std::size_t f = 0; f < k; ++f) {
        if (capacity[f] == 0) continue;
        if (!best || need[f][j] > need[*best][j] ||
            (need[f][j] == need[*best][j] && capacity[f] > capacity[*best])) {
          best = f;
        }
      }
      place(i, *best);
    }
  }
  for (auto i : order) {
    if (assigned[i]) continue;
    std::size_t best = 0;
    for (std::size_t f = 1; f < k; ++f) {
      if (capacity[f] > capacity[best]) best = f;
    }
    place(i, best);
  }
  detail::sort_folds(plan);
  return plan;
}

enum class Task : std::uint8_t { kBinary, kMultilabel };
enum class Learner : std::uint8_t { kCascade, kRandomForest };

inline const char* to_string(Task t) { return t == Task::kBinary ? "binary" : "multilabel"; }
inline const char* to_string(Learner l) { return l == Learner::kCascade ? "cascade" : "random-forest"; }

struct TaskConfig {
  Task task = Task::kMultilabel;
  Learner learner = Learner::kCascade;
  cascade::CascadeConfig cascade;
  forest::ForestConfig forest;  // used by Learner::kRandomForest
  std::size_t k = 5;
  std::uint64_t seed = 0;
  double amp_threshold = 0.5;
  std::vector<double> thresholds;  // per label; empty means 0.5
};

/// key=value lines describing a task configuration.
inline std::string config_snapshot(const TaskConfig& c) {
  std::ostringstream os;
  os << "task=" << to_string(c.task) << '\n'
     << "learner=" << to_string(c.learner) << '\n'
     << "k=" << c.k << '\n'
     << "seed=" << c.seed << '\n'
     << "amp_threshold=" << format_real(c.amp_threshold) << '\n';
  if (c.learner == Learner::kCascade) {
    os << "max_layers=" << c.cascade.max_layers << '\n'
       << "patience=" << c.cascade.patience << '\n'
       << "k_inner=" << c.cascade.k_inner << '\n'
       << "trees=" << c.cascade.n_trees << '\n'
       << "scan=" << (c.cascade.scanning ? "true" : "false") << '\n';
    if (c.cascade.scanning) {
      os << "window=" << c.cascade.scanner.window << '\n'
         << "stride=" << c.cascade.scanner.stride << '\n'
         << "scan_trees=" << c.cascade.scanner.n_trees << '\n';
    }
  } else {
    os << "trees=" << c.forest.n_trees << '\n';
  }
  return os.str();
}

struct MetricSummary {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation; 0 for a single value
  std::size_t count = 0;
};

struct ExperimentReport {
  std::vector<std::string> label_names;
  std::vector<metrics::MetricsReport> folds;
  std::map<std::string, MetricSummary> summary;
  std::string config;
  double wall_seconds = 0.0;
  /// Held-out scores of every row, pooled over folds.
  RealMatrix pooled_scores;
  LabelMatrix truths;
};

inline MetricSummary summarize(const std::vector<double>& values) {
  MetricSummary s;
  s.count = values.size();
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= double(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(ss / double(values.size() - 1));
  }
  return s;
}

inline std::map<std::string, MetricSummary> summarize(const std::vector<metrics::MetricsReport>& folds) {
  std::map<std::string, std::vector<double>> cols;
  for (const auto& r : folds) {
    cols["subset_accuracy"].push_back(r.subset_accuracy);
    cols["labelwise_accuracy"].push_back(r.labelwise_accuracy);
    cols["macro_precision"].push_back(r.macro_precision);
    cols["macro_recall"].push_back(r.macro_recall);
    cols["macro_f1"].push_back(r.macro_f1);
    auto& auc = cols["macro_auc"];
    if (r.macro_auc) auc.push_back(*r.macro_auc);
  }
  std::map<std::string, MetricSummary> out;
  for (const auto& [name, values] : cols) out[name] = summarize(values);
  return out;
}

/// Fitted model behind a uniform scoring call.
struct FittedModel {
  std::optional<cascade::CascadeModel> cascade;
  std::optional<forest::ForestModel> forest;

  RealMatrix score(const RealMatrix& x) const {
    return cascade ? cascade::predict_cascade_rows(*cascade, x) : forest::predict_rows(*forest, x);
  }
};

inline FittedModel fit(const RealMatrix& x, const LabelMatrix& y, const TaskConfig& cfg, std::uint64_t seed) {
  FittedModel m;
  if (cfg.learner == Learner::kCascade) {
    auto cc = cfg.cascade;
    cc.seed = seed;
    m.cascade = cascade::train_cascade(x, y, cc);
  } else {
    auto fc = cfg.forest;
    fc.kind = forest::ForestKind::kRandom;
    m.forest = forest::train_forest(x, y, fc, seed);
  }
  return m;
}

/// Trains on k - 1 folds and scores the held-out fold, for every fold.
/// Fold f uses seed derive_seed(cfg.seed, f).
inline ExperimentReport cross_validate(const RealMatrix& x, const LabelMatrix& y, const FoldPlan& plan,
                                       const TaskConfig& cfg, std::vector<std::string> label_names = {}) {
  if (x.rows() != y.rows()) throw DataError("cross_validate: feature/label row count mismatch");
  if (cfg.task == Task::kBinary && y.cols() != 1) throw DataError("cross_validate: binary task needs one label");
  const auto start = std::chrono::steady_clock::now();
  ExperimentReport rep;
  rep.label_names = std::move(label_names);
  rep.config = config_snapshot(cfg);
  rep.pooled_scores = RealMatrix(x.rows(), y.cols());
  rep.truths = y;
  std::vector<double> thresholds = cfg.thresholds.empty() ? std::vector<double>(y.cols(), 0.5) : cfg.thresholds;
  for (std::size_t f = 0; f < plan.folds.size(); ++f) {
    const auto& test = plan.folds[f];
    const auto train = plan.train_rows(f);
    const RealMatrix xtr = x.select_rows(train), xte = x.select_rows(test);
    const LabelMatrix ytr = y.select_rows(train), yte = y.select_rows(test);
    const RealMatrix scores = fit(xtr, ytr, cfg, derive_seed(cfg.seed, f)).score(xte);
    for (std::size_t i = 0; i < test.size(); ++i) {
      std::copy(scores.row(i).begin(), scores.row(i).end(), rep.pooled_scores.row(test[i]).begin());
    }
    metrics::MetricsReport r;
    if (cfg.task == Task::kBinary) {
      const auto col = yte.column(0);
      if (std::none_of(col.begin(), col.end(), [](auto v) { return v != 0; })) {
        warn("fold " + std::to_string(f) + " has no positive rows; skipped from macro-AUC");
      }
      r = metrics::evaluate_binary(scores.column(0), col, cfg.amp_threshold);
    } else {
      r = metrics::evaluate(scores, yte, thresholds);
      r.label_names = rep.label_names;
    }
    rep.folds.push_back(std::move(r));
  }
  rep.summary = summarize(rep.folds);
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

inline FoldPlan make_plan(const LabelMatrix& y, Task task, std::size_t k, std::uint64_t seed) {
  return task == Task::kBinary ? stratified_folds(y.column(0), k, seed) : stratified_folds_multilabel(y, k, seed);
}

/// Picks `size` rows such that every label has a positive and a negative,
/// retrying up to `max_attempts` times.
inline std::vector<std::size_t> coverage_sample(const LabelMatrix& y, std::size_t size, std::uint64_t seed,
                                                const std::vector<std::string>& label_names,
                                                std::size_t max_attempts = 1000) {
  if (size > y.rows()) {
    throw DataError("subset size " + std::to_string(size) + " exceeds the " + std::to_string(y.rows()) + " records");
  }
  Rng rng(seed);
  std::vector<std::size_t> all(y.rows());
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::size_t failing = 0;
  for (std::size_t attempt = 0; attempt < max_attempts; ++attempt) {
    for (std::size_t i = 0; i < size; ++i) std::swap(all[i], all[i + uniform_index(rng, all.size() - i)]);
    std::vector<std::size_t> pick(all.begin(), all.begin() + std::ptrdiff_t(size));
    bool ok = true;
    for (std::size_t j = 0; j < y.cols() && ok; ++j) {
      std::size_t pos = 0;
      for (auto i : pick) pos += y(i, j);
      if (pos == 0 || pos == size) {
        ok = false;
        failing = j;
      }
    }
    if (ok) {
      std::sort(pick.begin(), pick.end());
      return pick;
    }
  }
  const std::string name = failing < label_names.size() ? label_names[failing] : std::to_string(failing);
  throw DataError("cannot draw " + std::to_string(size) + " rows with both classes of label '" + name + "' after " +
                  std::to_string(max_attempts) + " attempts");
}

/// k-fold cross-validation on random subsets of the given sizes.
inline std::map<std::size_t, ExperimentReport> subset_experiment(const RealMatrix& x, const LabelMatrix& y,
                                                                 const std::vector<std::size_t>& sizes,
                                                                 const TaskConfig& cfg,
                                                                 const std::vector<std::string>& label_names) {
  std::map<std::size_t, ExperimentReport> out;
  for (auto size : sizes) {
    const auto rows = coverage_sample(y, size, derive_seed(cfg.seed, size), label_names);
    const RealMatrix xs = x.select_rows(rows);
    const LabelMatrix ys = y.select_rows(rows);
    const auto plan = make_plan(ys, cfg.task, cfg.k, cfg.seed);
    out.emplace(size, cross_validate(xs, ys, plan, cfg, label_names));
  }
  return out;
}

enum class Variant : std::uint8_t { kHmd, kDeepForestOneHot, kRandomForestEmbed };

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::kHmd:
      return "hmd";
    case Variant::kDeepForestOneHot:
      return "deep-forest-onehot";
    case Variant::kRandomForestEmbed:
      return "random-forest-embed";
  }
  return "?";
}

inline Variant parse_variant(std::string_view s) {
  if (s == "hmd") return Variant::kHmd;
  if (s == "deep-forest-onehot") return Variant::kDeepForestOneHot;
  if (s == "random-forest-embed") return Variant::kRandomForestEmbed;
  throw DataError("unknown ablation variant '" + std::string(s) + "'");
}

/// Labels of the task: AMP (n x 1) or activities (n x l).
inline LabelMatrix task_labels(const seqio::Dataset& ds, Task task) {
  return task == Task::kBinary ? seqio::amp_matrix(ds) : seqio::activity_matrix(ds);
}

/// Runs one ablation variant. All variants derive their fold plan from the
/// dataset labels and the seed only, so they share it.
inline ExperimentReport ablation_run(const seqio::Dataset& ds, const embed::FeatureMatrix* embeddings,
                                     Variant variant, TaskConfig cfg,
                                     std::size_t one_hot_length = embed::kDefaultOneHotLength) {
  const LabelMatrix y = task_labels(ds, cfg.task);
  embed::FeatureMatrix features;
  if (variant == Variant::kDeepForestOneHot) {
    features = embed::one_hot_matrix(ds, one_hot_length);
  } else {
    if (!embeddings) throw DataError(std::string("variant '") + to_string(variant) + "' needs an embedding file");
    features = embed::join(ds, *embeddings);
  }
  cfg.learner = variant == Variant::kRandomForestEmbed ? Learner::kRandomForest : Learner::kCascade;
  const auto plan = make_plan(y, cfg.task, cfg.k, cfg.seed);
  auto names = cfg.task == Task::kBinary ? std::vector<std::string>{"AMP"} : ds.label_names;
  auto rep = cross_validate(features.values, y, plan, cfg, names);
  rep.config = "variant=" + std::string(to_string(variant)) + "\nfeature_dim=" + std::to_string(features.dim()) +
               "\n" + rep.config;
  return rep;
}

/// Per-fold metric rows, then mean and standard deviation rows, then the
/// configuration as comment lines.
inline void write_experiment_tsv(std::ostream& out, const ExperimentReport& rep) {
  static const char* kMetrics[] = {"subset_accuracy", "labelwise_accuracy", "macro_precision",
                                   "macro_recall",    "macro_f1",           "macro_auc"};
  out << "fold";
  for (auto m : kMetrics) out << '\t' << m;
  out << '\n';
  for (std::size_t f = 0; f < rep.folds.size(); ++f) {
    const auto& r = rep.folds[f];
    out << (f + 1) << '\t' << format_real(r.subset_accuracy) << '\t' << format_real(r.labelwise_accuracy) << '\t'
        << format_real(r.macro_precision) << '\t' << format_real(r.macro_recall) << '\t' << format_real(r.macro_f1)
        << '\t' << metrics::optional_cell(r.macro_auc) << '\n';
  }
  for (const char* stat : {"mean", "std"}) {
    out << stat;
    for (auto m : kMetrics) {
      auto it = rep.summary.find(m);
      out << '\t';
      if (it != rep.summary.end() && it->second.count > 0) {
        out << format_real(std::string_view(stat) == "mean" ? it->second.mean : it->second.stddev);
      }
    }
    out << '\n';
  }
  std::istringstream cfg(rep.config);
  for (std::string line; std::getline(cfg, line);) out << "# " << line << '\n';
}

/// Human-readable summary block.
inline std::string format_summary(const ExperimentReport& rep) {
  std::ostringstream os;
  os << rep.folds.size() << "-fold cross-validation\n";
  for (const auto& [name, s] : rep.summary) {
    os << "  " << name << ": ";
    if (s.count == 0) {
      os << "n/a\n";
      continue;
    }
    os << std::fixed << std::setprecision(4) << s.mean << " +/- " << s.stddev << " (" << s.count << " folds)\n";
  }
  os << "  wall-clock: " << std::fixed << std::setprecision(1) << rep.wall_seconds << " s\n";
  return os.str();
}

}  // namespace hmd::eval
