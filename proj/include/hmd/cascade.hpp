#pragma once

// Multi-grained scanning and the measure-aware cascade forest.
//
// Every level holds a forest quartet in the fixed order RF1, RF2, CRF1,
// CRF2. A level's representation is the concatenation of the four class
// vectors; a class vector has one entry per label, or (1 - p, p) when the
// task has a single label. Level t > 1 sees [base features | representation
// of level t - 1]. Per label, a level whose confidence falls below the best
// confidence seen so far keeps the previous level's slice instead of its
// own. Levels are added until the macro-AUC of the out-of-fold
// representation stops improving for `patience` levels or `max_layers` is
// reached; prediction stops at the best level.

#include <array>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "hmd/common.hpp"
#include "hmd/forest.hpp"
#include "hmd/metrics.hpp"

namespace hmd::cascade {

using forest::ForestConfig;
using forest::ForestKind;
using forest::ForestModel;

inline constexpr std::size_t kQuartet = 4;
inline constexpr std::array<ForestKind, kQuartet> kQuartetKinds = {
    ForestKind::kRandom, ForestKind::kRandom, ForestKind::kCompletelyRandom, ForestKind::kCompletelyRandom};

/// Entries per class vector: l labels, or 2 for a single-label task.
constexpr std::size_t class_width(std::size_t n_labels) noexcept { return n_labels == 1 ? 2 : n_labels; }

// ---------------------------------------------------------------------------
// Multi-grained scanning

constexpr std::size_t window_count(std::size_t d, std::size_t w, std::size_t s) {
  if (w == 0 || s == 0) throw DataError("window and stride must be positive");
  if (w > d) throw DataError("window " + std::to_string(w) + " exceeds input dimension " + std::to_string(d));
  return (d - w) / s + 1;
}

/// Contiguous windows of width w every s positions, left to right.
inline std::vector<std::span<const double>> scan_windows(std::span<const double> v, std::size_t w, std::size_t s) {
  const std::size_t n = window_count(v.size(), w, s);
  std::vector<std::span<const double>> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(v.subspan(i * s, w));
  return out;
}

/// Pooled window instances of a feature matrix without materializing them:
/// instance r is window r % count of source row r / count.
class WindowTable {
 public:
  WindowTable(const RealMatrix& x, std::size_t window, std::size_t stride)
      : x_(&x), window_(window), stride_(stride), count_(window_count(x.cols(), window, stride)) {}
  std::size_t rows() const noexcept { return x_->rows() * count_; }
  std::size_t cols() const noexcept { return window_; }
  double operator()(std::size_t r, std::size_t c) const {
    return (*x_)(r / count_, (r % count_) * stride_ + c);
  }
  std::size_t windows_per_row() const noexcept { return count_; }

 private:
  const RealMatrix* x_;
  std::size_t window_, stride_, count_;
};

/// Label rows repeated once per window so that every window instance
/// carries its parent row's full label vector.
class RepeatedLabels {
 public:
  RepeatedLabels(const LabelMatrix& y, std::size_t repeat) : y_(&y), repeat_(repeat) {}
  std::size_t rows() const noexcept { return y_->rows() * repeat_; }
  std::size_t cols() const noexcept { return y_->cols(); }
  std::uint8_t operator()(std::size_t r, std::size_t k) const { return (*y_)(r / repeat_, k); }

 private:
  const LabelMatrix* y_;
  std::size_t repeat_;
};

struct ScannerConfig {
  std::size_t window = 100;
  std::size_t stride = 1;
  std::size_t n_trees = 100;
  std::size_t min_samples_leaf = 0;
  std::size_t max_depth = 0;
  unsigned threads = 0;
};

struct ScanningModel {
  std::size_t window = 0;
  std::size_t stride = 1;
  std::size_t input_dim = 0;
  std::size_t n_labels = 0;
  std::array<ForestModel, kQuartet> forests;

  std::size_t windows() const { return window_count(input_dim, window, stride); }
  std::size_t output_dim() const { return windows() * class_width(n_labels) * kQuartet; }
  friend bool operator==(const ScanningModel&, const ScanningModel&) = default;
};

inline ForestConfig quartet_config(std::size_t f, std::size_t n_trees, std::size_t min_samples_leaf,
                                   std::size_t max_depth, std::size_t max_features, unsigned threads) {
  ForestConfig c;
  c.kind = kQuartetKinds[f];
  c.n_trees = n_trees;
  c.min_samples_leaf = min_samples_leaf;
  c.max_depth = max_depth;
  c.max_features = max_features;
  c.threads = threads;
  return c;
}

/// Writes the class vector for label probabilities `p` into `out`.
inline void write_class_vector(std::span<const double> p, std::span<double> out) {
  if (p.size() == 1) {
    out[0] = 1.0 - p[0];
    out[1] = p[0];
  } else {
    std::copy(p.begin(), p.end(), out.begin());
  }
}

inline ScanningModel train_scanner(const RealMatrix& x, const LabelMatrix& y, const ScannerConfig& config,
                                   std::uint64_t seed) {
  if (x.rows() != y.rows()) throw DataError("train_scanner: feature/label row count mismatch");
  ScanningModel m;
  m.window = config.window;
  m.stride = config.stride;
  m.input_dim = x.cols();
  m.n_labels = y.cols();
  WindowTable windows(x, config.window, config.stride);
  RepeatedLabels labels(y, windows.windows_per_row());
  for (std::size_t f = 0; f < kQuartet; ++f) {
    auto cfg = quartet_config(f, config.n_trees, config.min_samples_leaf, config.max_depth, 0, config.threads);
    m.forests[f] = forest::train_forest(windows, labels, cfg, derive_seed(seed, f));
  }
  return m;
}

/// Transformed features of every row: per window, per forest, one class
/// vector.
inline RealMatrix transform_rows(const ScanningModel& m, const RealMatrix& x) {
  if (x.cols() != m.input_dim) {
    throw DataError("transform: expected " + std::to_string(m.input_dim) + " features, got " +
                    std::to_string(x.cols()));
  }
  WindowTable windows(x, m.window, m.stride);
  const std::size_t count = windows.windows_per_row();
  const std::size_t c = class_width(m.n_labels);
  RealMatrix out(x.rows(), m.output_dim());
  std::vector<double> p(m.n_labels);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto dst = out.row(r);
    for (std::size_t w = 0; w < count; ++w) {
      for (std::size_t f = 0; f < kQuartet; ++f) {
        forest::accumulate_prediction(m.forests[f], windows, r * count + w, p);
        write_class_vector(p, dst.subspan((w * kQuartet + f) * c, c));
      }
    }
  }
  return out;
}

inline std::vector<double> transform(const ScanningModel& m, std::span<const double> v) {
  RealMatrix one(1, v.size(), std::vector<double>(v.begin(), v.end()));
  auto out = transform_rows(m, one);
  return std::move(out.data());
}

// ---------------------------------------------------------------------------
// Level plumbing

/// [original | previous level representation]. The first level passes an
/// empty previous representation.
inline std::vector<double> level_input(std::span<const double> original, std::span<const double> previous) {
  std::vector<double> out;
  out.reserve(original.size() + previous.size());
  out.insert(out.end(), original.begin(), original.end());
  out.insert(out.end(), previous.begin(), previous.end());
  return out;
}

/// Width of a level representation.
constexpr std::size_t representation_width(std::size_t n_labels) noexcept {
  return kQuartet * class_width(n_labels);
}

/// Columns of a representation that belong to label j.
inline std::vector<std::size_t> label_slice(std::size_t n_labels, std::size_t j) {
  std::vector<std::size_t> cols;
  const std::size_t c = class_width(n_labels);
  for (std::size_t f = 0; f < kQuartet; ++f) {
    if (n_labels == 1) {
      cols.push_back(f * c);
      cols.push_back(f * c + 1);
    } else {
      cols.push_back(f * c + j);
    }
  }
  return cols;
}

/// Per-label positive-class score: mean over the four class vectors.
inline RealMatrix representation_scores(const RealMatrix& repr, std::size_t n_labels) {
  const std::size_t c = class_width(n_labels);
  RealMatrix out(repr.rows(), n_labels);
  for (std::size_t i = 0; i < repr.rows(); ++i) {
    for (std::size_t j = 0; j < n_labels; ++j) {
      const std::size_t offset = n_labels == 1 ? 1 : j;
      double s = 0.0;
      for (std::size_t f = 0; f < kQuartet; ++f) s += repr(i, f * c + offset);
      out(i, j) = s / double(kQuartet);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Confidence

/// Natural log of
///   sum_{i=0..m} prod_{k<=i} p_k * prod_{k>i} (1 - p_k)
/// with p sorted in descending order. Evaluated from prefix sums of log p
/// and suffix sums of log(1 - p), then log-sum-exp.
inline double log_label_confidence(std::span<const double> probs) {
  std::vector<double> p(probs.begin(), probs.end());
  for (double v : p) {
    if (!(v >= 0.0 && v <= 1.0)) throw DataError("label_confidence: probability outside [0, 1]");
  }
  std::sort(p.begin(), p.end(), std::greater<>());
  const std::size_t m = p.size();
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  // suffix[i] = sum_{k >= i} log(1 - p_k) (0-based).
  std::vector<double> suffix(m + 1, 0.0);
  for (std::size_t i = m; i-- > 0;) {
    const double q = std::log1p(-p[i]);
    suffix[i] = (suffix[i + 1] == kNegInf || q == kNegInf) ? kNegInf : suffix[i + 1] + q;
  }
  std::vector<double> terms(m + 1);
  double prefix = 0.0;
  for (std::size_t i = 0; i <= m; ++i) {
    if (i > 0) {
      const double lp = std::log(p[i - 1]);
      prefix = (prefix == kNegInf || lp == kNegInf) ? kNegInf : prefix + lp;
    }
    terms[i] = (prefix == kNegInf || suffix[i] == kNegInf) ? kNegInf : prefix + suffix[i];
  }
  const double top = *std::max_element(terms.begin(), terms.end());
  if (top == kNegInf) return kNegInf;
  // Sum the shifted exponentials smallest-first.
  std::vector<double> shifted;
  shifted.reserve(terms.size());
  for (double t : terms) shifted.push_back(t == kNegInf ? 0.0 : std::exp(t - top));
  std::sort(shifted.begin(), shifted.end());
  double sum = 0.0;
  for (double v : shifted) sum += v;
  return top + std::log(sum);
}

inline double label_confidence(std::span<const double> probs) { return std::exp(log_label_confidence(probs)); }

// ---------------------------------------------------------------------------
// Feature reuse

struct ReuseResult {
  RealMatrix representation;
  std::vector<std::uint8_t> reused;        // per label
  std::vector<double> confidence;          // per label, after reuse
};

/// Per label j: if current_conf[j] < threshold[j] the label's slice comes
/// from `previous` and the recorded confidence stays at the threshold;
/// otherwise the current slice and confidence are kept. Confidences may be
/// on any monotone scale (the cascade uses log confidence).
inline ReuseResult feature_reuse(const RealMatrix& current, const RealMatrix& previous,
                                 std::span<const double> current_conf, std::span<const double> threshold,
                                 std::size_t n_labels) {
  if (current.rows() != previous.rows() || current.cols() != previous.cols()) {
    throw DataError("feature_reuse: representation shapes differ");
  }
  if (current.cols() != representation_width(n_labels) || current_conf.size() != n_labels ||
      threshold.size() != n_labels) {
    throw DataError("feature_reuse: representation not aligned with the label count");
  }
  ReuseResult res{current, std::vector<std::uint8_t>(n_labels, 0), std::vector<double>(n_labels)};
  for (std::size_t j = 0; j < n_labels; ++j) {
    if (current_conf[j] < threshold[j]) {
      res.reused[j] = 1;
      res.confidence[j] = threshold[j];
      for (auto c : label_slice(n_labels, j)) {
        for (std::size_t i = 0; i < current.rows(); ++i) res.representation(i, c) = previous(i, c);
      }
    } else {
      res.confidence[j] = current_conf[j];
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Layer growth

/// Tracks the measure history and decides when growth ends. The best layer
/// is the first maximum; growth stops once `patience` levels have passed
/// without beating it, or at `max_layers`.
class LayerGrowth {
 public:
  LayerGrowth(std::size_t max_layers, std::size_t patience) : max_layers_(max_layers), patience_(patience) {
    if (max_layers == 0) throw DataError("max_layers must be positive");
    if (patience == 0) throw DataError("patience must be positive");
  }

  /// Records the next level's measure; returns true when growth must stop.
  bool push(double measure) {
    history_.push_back(measure);
    if (history_.size() == 1 || measure > history_[best_]) best_ = history_.size() - 1;
    if (history_.size() >= max_layers_) {
      reason_ = "max_layers";
    } else if (history_.size() - 1 - best_ >= patience_) {
      reason_ = "patience";
    }
    return !reason_.empty();
  }

  bool stopped() const noexcept { return !reason_.empty(); }
  const std::string& stop_reason() const noexcept { return reason_; }
  /// 1-based index of the best level.
  std::size_t best_layer() const noexcept { return best_ + 1; }
  const std::vector<double>& history() const noexcept { return history_; }

 private:
  std::size_t max_layers_;
  std::size_t patience_;
  std::size_t best_ = 0;
  std::vector<double> history_;
  std::string reason_;
};

// ---------------------------------------------------------------------------
// Cascade

struct CascadeConfig {
  std::size_t max_layers = 20;
  std::size_t patience = 3;
  std::size_t k_inner = 3;
  std::size_t n_trees = 1000;
  std::size_t min_samples_leaf = 0;
  std::size_t max_depth = 0;
  std::size_t max_features = 0;
  bool scanning = false;
  ScannerConfig scanner;
  unsigned threads = 0;
  std::uint64_t seed = 0;
  /// Optional hook applied to each level's measured macro-AUC (1-based
  /// level, measured value) before the growth decision. Not persisted.
  std::function<double(std::size_t, double)> measure_override;
};

struct CascadeLevel {
  std::array<ForestModel, kQuartet> forests;
  /// Log confidence per label after reuse (non-decreasing across levels).
  std::vector<double> log_confidence;
  /// Log confidence of this level's own out-of-fold class vectors.
  std::vector<double> raw_log_confidence;
  /// 1 where the label's slice is taken from the previous level.
  std::vector<std::uint8_t> reused;
  std::size_t input_dim = 0;
  friend bool operator==(const CascadeLevel&, const CascadeLevel&) = default;
};

struct CascadeModel {
  std::size_t n_labels = 0;
  std::size_t input_dim = 0;  // original feature dimension
  std::optional<ScanningModel> scanner;
  std::vector<CascadeLevel> levels;
  std::size_t best_layer = 0;  // 1-based
  std::vector<double> history;
  std::string stop_reason;
  CascadeConfig config;

  std::size_t base_dim() const { return scanner ? scanner->output_dim() : input_dim; }
};

inline bool operator==(const CascadeModel& a, const CascadeModel& b) {
  return a.n_labels == b.n_labels && a.input_dim == b.input_dim && a.scanner == b.scanner &&
         a.levels == b.levels && a.best_layer == b.best_layer && a.history == b.history &&
         a.stop_reason == b.stop_reason;
}

namespace detail {

inline double measure(const RealMatrix& scores, const LabelMatrix& y, const std::vector<std::size_t>& valid) {
  double sum = 0.0;
  for (auto j : valid) sum += *metrics::label_auc(scores.column(j), y.column(j));
  return sum / double(valid.size());
}

/// Representation of one level from per-forest label probabilities.
inline RealMatrix assemble_representation(const std::array<RealMatrix, kQuartet>& probs, std::size_t n_labels) {
  const std::size_t n = probs[0].rows();
  const std::size_t c = class_width(n_labels);
  RealMatrix repr(n, representation_width(n_labels));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t f = 0; f < kQuartet; ++f) write_class_vector(probs[f].row(i), repr.row(i).subspan(f * c, c));
  }
  return repr;
}

inline std::vector<double> log_confidences(const std::array<RealMatrix, kQuartet>& probs, std::size_t n_labels) {
  std::vector<double> out(n_labels);
  std::vector<double> col(probs[0].rows());
  for (std::size_t j = 0; j < n_labels; ++j) {
    for (std::size_t i = 0; i < col.size(); ++i) {
      double s = 0.0;
      for (const auto& p : probs) s += p(i, j);
      col[i] = std::clamp(s / double(kQuartet), 0.0, 1.0);
    }
    out[j] = log_label_confidence(col);
  }
  return out;
}

}  // namespace detail

/// Fits the cascade on (x, y). Out-of-fold class vectors (k_inner folds)
/// feed the next level, the reuse decision and the growth measure; each
/// level also keeps forests fitted on all rows for prediction.
inline CascadeModel train_cascade(const RealMatrix& x, const LabelMatrix& y, const CascadeConfig& config) {
  if (x.rows() != y.rows()) throw DataError("train_cascade: feature/label row count mismatch");
  if (y.cols() == 0) throw DataError("train_cascade: no labels");
  if (x.rows() < config.k_inner) throw DataError("train_cascade: fewer rows than inner folds");
  const std::size_t l = y.cols();

  std::vector<std::size_t> valid;
  std::string degenerate;
  for (std::size_t j = 0; j < l; ++j) {
    std::size_t pos = 0;
    for (std::size_t i = 0; i < y.rows(); ++i) pos += y(i, j);
    if (pos == 0 || pos == y.rows()) {
      degenerate += " " + std::to_string(j);
    } else {
      valid.push_back(j);
    }
  }
  if (valid.empty()) throw DataError("train_cascade: every label is all-positive or all-negative");
  if (!degenerate.empty()) warn("labels excluded from the growth measure (single class):" + degenerate);

  CascadeModel model;
  model.n_labels = l;
  model.input_dim = x.cols();
  model.config = config;
  model.config.measure_override = nullptr;

  RealMatrix base;
  if (config.scanning) {
    model.scanner = train_scanner(x, y, config.scanner, derive_seed(config.seed, 0x5343414eULL));
    base = transform_rows(*model.scanner, x);
  } else {
    base = x;
  }

  LayerGrowth growth(config.max_layers, config.patience);
  RealMatrix previous;
  std::vector<double> previous_conf;
  for (std::size_t t = 0; !growth.stopped(); ++t) {
    const RealMatrix input = t == 0 ? base : hconcat(base, previous);
    CascadeLevel level;
    level.input_dim = input.cols();
    std::array<RealMatrix, kQuartet> oof;
    for (std::size_t f = 0; f < kQuartet; ++f) {
      const auto cfg = quartet_config(f, config.n_trees, config.min_samples_leaf, config.max_depth,
                                      config.max_features, config.threads);
      const std::uint64_t seed = derive_seed(config.seed, t + 1, f);
      oof[f] = forest::out_of_fold_predict(input, y, cfg, config.k_inner, derive_seed(seed, 1));
      level.forests[f] = forest::train_forest(input, y, cfg, seed);
    }
    RealMatrix current = detail::assemble_representation(oof, l);
    level.raw_log_confidence = detail::log_confidences(oof, l);
    if (t == 0) {
      level.log_confidence = level.raw_log_confidence;
      level.reused.assign(l, 0);
      previous = std::move(current);
    } else {
      auto res = feature_reuse(current, previous, level.raw_log_confidence, previous_conf, l);
      level.log_confidence = std::move(res.confidence);
      level.reused = std::move(res.reused);
      previous = std::move(res.representation);
    }
    previous_conf = level.log_confidence;
    double m = detail::measure(representation_scores(previous, l), y, valid);
    if (config.measure_override) m = config.measure_override(t + 1, m);
    model.levels.push_back(std::move(level));
    growth.push(m);
  }
  model.history = growth.history();
  model.best_layer = growth.best_layer();
  model.stop_reason = growth.stop_reason();
  return model;
}

/// n x l label scores for every row of `x`, using levels 1..best_layer with
/// full-data forests and the recorded reuse choices.
inline RealMatrix predict_cascade_rows(const CascadeModel& model, const RealMatrix& x) {
  if (x.cols() != model.input_dim) {
    throw DataError("predict_cascade: expected " + std::to_string(model.input_dim) + " features, got " +
                    std::to_string(x.cols()));
  }
  if (model.best_layer == 0 || model.best_layer > model.levels.size()) {
    throw DataError("predict_cascade: model has no usable level");
  }
  const std::size_t l = model.n_labels;
  const RealMatrix base = model.scanner ? transform_rows(*model.scanner, x) : x;
  RealMatrix previous;
  for (std::size_t t = 0; t < model.best_layer; ++t) {
    const auto& level = model.levels[t];
    const RealMatrix input = t == 0 ? base : hconcat(base, previous);
    if (input.cols() != level.input_dim) throw DataError("predict_cascade: level input width mismatch");
    std::array<RealMatrix, kQuartet> probs;
    for (std::size_t f = 0; f < kQuartet; ++f) probs[f] = forest::predict_rows(level.forests[f], input);
    RealMatrix current = detail::assemble_representation(probs, l);
    if (t > 0) {
      for (std::size_t j = 0; j < l; ++j) {
        if (!level.reused[j]) continue;
        for (auto c : label_slice(l, j)) {
          for (std::size_t i = 0; i < current.rows(); ++i) current(i, c) = previous(i, c);
        }
      }
    }
    previous = std::move(current);
  }
  return representation_scores(previous, l);
}

inline std::vector<double> predict_cascade(const CascadeModel& model, std::span<const double> v) {
  RealMatrix one(1, v.size(), std::vector<double>(v.begin(), v.end()));
  auto out = predict_cascade_rows(model, one);
  return std::move(out.data());
}

inline void write_history(std::ostream& out, const CascadeModel& model) {
  out << "level\tmacro_auc\tstopped\n";
  for (std::size_t t = 0; t < model.history.size(); ++t) {
    out << (t + 1) << '\t' << format_real(model.history[t]) << '\t'
        << (t + 1 == model.history.size() ? model.stop_reason : std::string()) << '\n';
  }
}

}  // namespace hmd::cascade
