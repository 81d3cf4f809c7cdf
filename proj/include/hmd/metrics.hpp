#pragma once

// Evaluation measures for multi-label scoring: macro-AUC (ties between a
// positive and a negative count as correctly ordered), macro precision,
// recall and F1, subset and label-wise accuracy, and ROC point export.

#include <iomanip>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "hmd/common.hpp"

namespace hmd::metrics {

/// Fraction of (positive, negative) pairs with score(pos) >= score(neg).
/// Returns nullopt when the column lacks either class.
inline std::optional<double> label_auc(std::span<const double> scores, std::span<const std::uint8_t> truths) {
  if (scores.size() != truths.size()) throw DataError("label_auc: length mismatch");
  std::vector<double> neg;
  std::vector<double> pos;
  for (std::size_t i = 0; i < scores.size(); ++i) (truths[i] ? pos : neg).push_back(scores[i]);
  if (pos.empty() || neg.empty()) return std::nullopt;
  std::sort(neg.begin(), neg.end());
  // Counts stay below 2^53 for any realistic n, so the ratio is exact up to
  // the final division.
  std::uint64_t ordered = 0;
  for (double s : pos) {
    ordered += static_cast<std::uint64_t>(std::upper_bound(neg.begin(), neg.end(), s) - neg.begin());
  }
  return static_cast<double>(ordered) / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

struct AucResult {
  double macro = 0.0;
  std::vector<std::optional<double>> per_label;
  std::vector<std::size_t> excluded;
};

/// Mean of label_auc over labels with both classes present. Degenerate
/// labels are excluded with a warning; no valid label is an error.
inline AucResult macro_auc(const RealMatrix& scores, const LabelMatrix& truths) {
  if (scores.rows() != truths.rows() || scores.cols() != truths.cols()) {
    throw DataError("macro_auc: score and truth shapes differ");
  }
  AucResult res;
  double sum = 0.0;
  std::size_t valid = 0;
  for (std::size_t j = 0; j < scores.cols(); ++j) {
    auto s = scores.column(j);
    auto t = truths.column(j);
    auto auc = label_auc(s, t);
    res.per_label.push_back(auc);
    if (auc) {
      sum += *auc;
      ++valid;
    } else {
      res.excluded.push_back(j);
      warn("label " + std::to_string(j) + " has a single class; excluded from macro-AUC");
    }
  }
  if (valid == 0) throw DataError("macro_auc: no label has both positive and negative instances");
  res.macro = sum / static_cast<double>(valid);
  return res;
}

/// Pooled AUC over all (instance, label) cells. Convenience measure for the
/// micro-average ROC; not used for model selection.
inline std::optional<double> micro_auc(const RealMatrix& scores, const LabelMatrix& truths) {
  return label_auc(scores.data(), truths.data());
}

struct LabelMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::optional<double> auc;
  std::size_t support = 0;  // positives in the truth column
};

struct MetricsReport {
  std::vector<std::string> label_names;
  double subset_accuracy = 0.0;
  double labelwise_accuracy = 0.0;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  std::optional<double> macro_auc;
  std::vector<LabelMetrics> per_label;
  std::vector<std::size_t> excluded;
  std::size_t instances = 0;
};

inline double safe_ratio(double num, double den) { return den > 0 ? num / den : 0.0; }

/// Thresholded-prediction metrics. Precision and recall use 0/0 -> 0;
/// macro values are unweighted means over labels.
inline MetricsReport classification_report(const LabelMatrix& predictions, const LabelMatrix& truths) {
  if (predictions.rows() != truths.rows() || predictions.cols() != truths.cols()) {
    throw DataError("classification_report: prediction and truth shapes differ");
  }
  const std::size_t n = truths.rows(), l = truths.cols();
  MetricsReport rep;
  rep.instances = n;
  rep.per_label.resize(l);
  std::size_t exact = 0, cells_ok = 0;
  for (std::size_t i = 0; i < n; ++i) {
    bool all = true;
    for (std::size_t j = 0; j < l; ++j) {
      const bool ok = (predictions(i, j) != 0) == (truths(i, j) != 0);
      cells_ok += ok;
      all = all && ok;
    }
    exact += all;
  }
  for (std::size_t j = 0; j < l; ++j) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool p = predictions(i, j) != 0, t = truths(i, j) != 0;
      tp += p && t;
      fp += p && !t;
      fn += !p && t;
    }
    auto& m = rep.per_label[j];
    m.support = tp + fn;
    m.precision = safe_ratio(double(tp), double(tp + fp));
    m.recall = safe_ratio(double(tp), double(tp + fn));
    m.f1 = safe_ratio(2 * m.precision * m.recall, m.precision + m.recall);
    rep.macro_precision += m.precision;
    rep.macro_recall += m.recall;
    rep.macro_f1 += m.f1;
  }
  if (l > 0) {
    rep.macro_precision /= double(l);
    rep.macro_recall /= double(l);
    rep.macro_f1 /= double(l);
  }
  rep.subset_accuracy = safe_ratio(double(exact), double(n));
  rep.labelwise_accuracy = safe_ratio(double(cells_ok), double(n * l));
  return rep;
}

/// Thresholds scores at `thresholds[j]` (score >= threshold is positive).
inline LabelMatrix apply_thresholds(const RealMatrix& scores, std::span<const double> thresholds) {
  if (thresholds.size() != scores.cols()) throw DataError("apply_thresholds: one threshold per label required");
  LabelMatrix out(scores.rows(), scores.cols());
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    for (std::size_t j = 0; j < scores.cols(); ++j) out(i, j) = scores(i, j) >= thresholds[j] ? 1 : 0;
  }
  return out;
}

/// Full report from scores: thresholded metrics plus per-label and macro
/// AUC. A report with no scorable label carries no macro_auc.
inline MetricsReport evaluate(const RealMatrix& scores, const LabelMatrix& truths, std::span<const double> thresholds) {
  auto rep = classification_report(apply_thresholds(scores, thresholds), truths);
  double sum = 0.0;
  std::size_t valid = 0;
  for (std::size_t j = 0; j < truths.cols(); ++j) {
    auto auc = label_auc(scores.column(j), truths.column(j));
    rep.per_label[j].auc = auc;
    if (auc) {
      sum += *auc;
      ++valid;
    } else {
      rep.excluded.push_back(j);
    }
  }
  if (valid > 0) rep.macro_auc = sum / double(valid);
  return rep;
}

/// Binary AMP evaluation reported over the two classes (non-AMP, AMP), so
/// that precision, recall and F1 are macro averages over both classes.
inline MetricsReport evaluate_binary(std::span<const double> amp_scores, std::span<const std::uint8_t> is_amp,
                                     double threshold) {
  if (amp_scores.size() != is_amp.size()) throw DataError("evaluate_binary: length mismatch");
  const std::size_t n = amp_scores.size();
  RealMatrix scores(n, 2);
  LabelMatrix truths(n, 2);
  LabelMatrix preds(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    scores(i, 0) = 1.0 - amp_scores[i];
    scores(i, 1) = amp_scores[i];
    truths(i, 0) = is_amp[i] ? 0 : 1;
    truths(i, 1) = is_amp[i] ? 1 : 0;
    preds(i, 1) = amp_scores[i] >= threshold ? 1 : 0;
    preds(i, 0) = 1 - preds(i, 1);
  }
  auto rep = classification_report(preds, truths);
  // Subset accuracy over the complementary columns is ordinary accuracy.
  double sum = 0.0;
  std::size_t valid = 0;
  for (std::size_t j = 0; j < 2; ++j) {
    auto auc = label_auc(scores.column(j), truths.column(j));
    rep.per_label[j].auc = auc;
    if (auc) {
      sum += *auc;
      ++valid;
    } else {
      rep.excluded.push_back(j);
    }
  }
  if (valid > 0) rep.macro_auc = sum / double(valid);
  rep.label_names = {"non-AMP", "AMP"};
  return rep;
}

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;  // +inf for the origin
};

/// ROC curve over distinct score thresholds in descending order, from
/// (0,0) to (1,1).
inline std::vector<RocPoint> roc_points(std::span<const double> scores, std::span<const std::uint8_t> truths) {
  if (scores.size() != truths.size()) throw DataError("roc_points: length mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double pos = 0, neg = 0;
  for (auto t : truths) (t ? pos : neg) += 1;
  if (pos == 0 || neg == 0) throw DataError("roc_points: column has a single class");
  std::vector<RocPoint> out{{0.0, 0.0, std::numeric_limits<double>::infinity()}};
  double tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    while (i < order.size() && scores[order[i]] == s) {
      (truths[order[i]] ? tp : fp) += 1;
      ++i;
    }
    out.push_back({fp / neg, tp / pos, s});
  }
  return out;
}

/// Trapezoidal area under a ROC point list.
inline double roc_area(const std::vector<RocPoint>& pts) {
  double a = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    a += (pts[i].fpr - pts[i - 1].fpr) * (pts[i].tpr + pts[i - 1].tpr) * 0.5;
  }
  return a;
}

inline void write_roc(std::ostream& out, const std::vector<RocPoint>& pts) {
  out << "fpr\ttpr\n";
  for (const auto& p : pts) out << format_real(p.fpr) << '\t' << format_real(p.tpr) << '\n';
}

inline std::string optional_cell(const std::optional<double>& v) { return v ? format_real(*v) : std::string(); }

/// One row per label plus a "macro" row.
inline void write_report_tsv(std::ostream& out, const MetricsReport& rep) {
  out << "label\tprecision\trecall\tf1\tauc\tsupport\n";
  for (std::size_t j = 0; j < rep.per_label.size(); ++j) {
    const auto& m = rep.per_label[j];
    const std::string name = j < rep.label_names.size() ? rep.label_names[j] : std::to_string(j);
    out << name << '\t' << format_real(m.precision) << '\t' << format_real(m.recall) << '\t' << format_real(m.f1)
        << '\t' << optional_cell(m.auc) << '\t' << m.support << '\n';
  }
  out << "macro\t" << format_real(rep.macro_precision) << '\t' << format_real(rep.macro_recall) << '\t'
      << format_real(rep.macro_f1) << '\t' << optional_cell(rep.macro_auc) << '\t' << rep.instances << '\n';
  out << "# subset_accuracy\t" << format_real(rep.subset_accuracy) << '\n';
  out << "# labelwise_accuracy\t" << format_real(rep.labelwise_accuracy) << '\n';
}

/// Aligned plain-text rendering for terminals.
inline std::string format_report_table(const MetricsReport& rep) {
  std::ostringstream os;
  std::size_t w = 8;
  for (const auto& n : rep.label_names) w = std::max(w, n.size() + 1);
  auto num = [](std::optional<double> v) {
    std::ostringstream s;
    if (v) {
      s << std::fixed << std::setprecision(3) << *v;
    } else {
      s << "-";
    }
    return s.str();
  };
  os << std::left << std::setw(int(w)) << "label" << std::right << std::setw(10) << "precision" << std::setw(10)
     << "recall" << std::setw(10) << "f1" << std::setw(10) << "auc" << std::setw(10) << "support" << '\n';
  for (std::size_t j = 0; j < rep.per_label.size(); ++j) {
    const auto& m = rep.per_label[j];
    const std::string name = j < rep.label_names.size() ? rep.label_names[j] : std::to_string(j);
    os << std::left << std::setw(int(w)) << name << std::right << std::setw(10) << num(m.precision)
       << std::setw(10) << num(m.recall) << std::setw(10) << num(m.f1) << std::setw(10) << num(m.auc)
       << std::setw(10) << m.support << '\n';
  }
  os << std::left << std::setw(int(w)) << "macro" << std::right << std::setw(10) << num(rep.macro_precision)
     << std::setw(10) << num(rep.macro_recall) << std::setw(10) << num(rep.macro_f1) << std::setw(10)
     << num(rep.macro_auc) << std::setw(10) << rep.instances << '\n';
  os << "subset accuracy " << num(rep.subset_accuracy) << ", label-wise accuracy " << num(rep.labelwise_accuracy)
     << '\n';
  return os.str();
}

}  // namespace hmd::metrics
