#pragma once

// The two-level predictor: a single-label cascade decides AMP versus
// non-AMP, and only sequences that pass the gate are scored by the
// activity cascade.

#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "hmd/cascade.hpp"
#include "hmd/common.hpp"
#include "hmd/embed.hpp"

namespace hmd::hierarchy {

/// How the pipeline's features were produced; prediction inputs must be
/// built the same way.
struct FeatureSpec {
  embed::FeatureSource source = embed::FeatureSource::kEmbeddingFile;
  std::size_t one_hot_length = embed::kDefaultOneHotLength;
  /// Columns kept from the raw feature vector; empty keeps all of them.
  std::vector<std::size_t> subset;
  std::size_t raw_dim = 0;
  friend bool operator==(const FeatureSpec&, const FeatureSpec&) = default;
};

struct PipelineModel {
  cascade::CascadeModel binary;
  cascade::CascadeModel activity;
  double amp_threshold = 0.5;
  std::vector<double> activity_thresholds;
  std::vector<std::string> label_names;
  FeatureSpec features;

  std::size_t feature_dim() const { return binary.input_dim; }
};

inline bool operator==(const PipelineModel& a, const PipelineModel& b) {
  return a.binary == b.binary && a.activity == b.activity && a.amp_threshold == b.amp_threshold &&
         a.activity_thresholds == b.activity_thresholds && a.label_names == b.label_names &&
         a.features == b.features;
}

struct PipelineConfig {
  cascade::CascadeConfig binary;
  cascade::CascadeConfig activity;
  double amp_threshold = 0.5;
  /// One per label, or empty for 0.5 everywhere.
  std::vector<double> activity_thresholds;
};

struct Verdict {
  std::string id;
  bool is_amp = false;
  double amp_score = 0.0;
  std::optional<std::vector<double>> activity_scores;
  std::optional<std::vector<std::uint8_t>> activity_labels;
};

inline void check_threshold(double t, const std::string& what) {
  if (!(t > 0.0 && t <= 1.0)) throw DataError(what + " threshold must lie in (0, 1]");
}

/// Binary cascade on every record (label = AMP), activity cascade on the
/// positive records only. Both tables must share the feature dimension and
/// every positive id must be an AMP in `full`.
inline PipelineModel train_pipeline(const seqio::Dataset& full, const embed::FeatureMatrix& full_features,
                                    const seqio::Dataset& positive, const embed::FeatureMatrix& positive_features,
                                    const PipelineConfig& config) {
  std::map<std::string, bool> amp;
  for (const auto& r : full.records) {
    if (!r.amp_label) throw DataError("record '" + r.id + "' has no AMP label");
    amp[r.id] = *r.amp_label;
  }
  for (const auto& r : positive.records) {
    auto it = amp.find(r.id);
    if (it != amp.end() && !it->second) {
      throw DataError("positive record '" + r.id + "' is labeled non-AMP in the full dataset");
    }
  }
  if (full_features.dim() != positive_features.dim()) {
    throw DataError("binary and activity feature dimensions differ");
  }
  if (full_features.size() != full.size() || positive_features.size() != positive.size()) {
    throw DataError("feature rows are not aligned with the datasets");
  }
  check_threshold(config.amp_threshold, "AMP");
  PipelineModel m;
  m.label_names = positive.label_names;
  m.amp_threshold = config.amp_threshold;
  m.activity_thresholds = config.activity_thresholds.empty()
                              ? std::vector<double>(positive.label_names.size(), 0.5)
                              : config.activity_thresholds;
  if (m.activity_thresholds.size() != positive.label_names.size()) {
    throw DataError("one activity threshold per label required");
  }
  for (double t : m.activity_thresholds) check_threshold(t, "activity");
  m.features.source = full_features.source;
  m.features.raw_dim = full_features.dim();
  m.features.one_hot_length =
      full_features.source == embed::FeatureSource::kOneHot ? full_features.dim() / seqio::kAminoAcids.size() : 0;
  m.binary = cascade::train_cascade(full_features.values, seqio::amp_matrix(full), config.binary);
  m.activity = cascade::train_cascade(positive_features.values, seqio::activity_matrix(positive), config.activity);
  return m;
}

/// Applies the model's feature subset to raw feature rows.
inline embed::FeatureMatrix prepare_features(const FeatureSpec& spec, const embed::FeatureMatrix& raw) {
  if (spec.raw_dim != 0 && raw.dim() != spec.raw_dim) {
    throw DataError("expected " + std::to_string(spec.raw_dim) + " raw features, got " + std::to_string(raw.dim()));
  }
  if (spec.subset.empty()) return raw;
  return embed::project(raw, spec.subset);
}

/// score >= threshold, except that a threshold of 1 closes the gate.
inline bool passes_gate(const PipelineModel& m, double amp_score) {
  return m.amp_threshold < 1.0 && amp_score >= m.amp_threshold;
}

/// Builds the verdict for one feature vector (already projected onto the
/// model's feature subset).
inline Verdict make_verdict(const PipelineModel& m, std::string id, double amp_score,
                            const std::function<std::vector<double>()>& activity) {
  Verdict v;
  v.id = std::move(id);
  v.amp_score = amp_score;
  v.is_amp = passes_gate(m, amp_score);
  if (v.is_amp) {
    auto scores = activity();
    std::vector<std::uint8_t> labels(scores.size());
    for (std::size_t j = 0; j < scores.size(); ++j) labels[j] = scores[j] >= m.activity_thresholds[j] ? 1 : 0;
    v.activity_scores = std::move(scores);
    v.activity_labels = std::move(labels);
  }
  return v;
}

inline Verdict predict(const PipelineModel& m, std::span<const double> features, std::string id = {}) {
  if (features.size() != m.feature_dim()) {
    throw DataError("predict: expected " + std::to_string(m.feature_dim()) + " features, got " +
                    std::to_string(features.size()));
  }
  const double amp = cascade::predict_cascade(m.binary, features)[0];
  return make_verdict(m, std::move(id), amp, [&] { return cascade::predict_cascade(m.activity, features); });
}

/// Verdicts for a batch. Activity scores are computed only for rows that
/// pass the gate.
inline std::vector<Verdict> predict_batch(const PipelineModel& m, const embed::FeatureMatrix& fm) {
  if (fm.dim() != m.feature_dim()) {
    throw DataError("predict: expected " + std::to_string(m.feature_dim()) + " features, got " +
                    std::to_string(fm.dim()));
  }
  const RealMatrix amp = cascade::predict_cascade_rows(m.binary, fm.values);
  std::vector<std::size_t> gated;
  for (std::size_t i = 0; i < fm.size(); ++i) {
    if (passes_gate(m, amp(i, 0))) gated.push_back(i);
  }
  const RealMatrix act = cascade::predict_cascade_rows(m.activity, fm.values.select_rows(gated));
  std::vector<Verdict> out;
  out.reserve(fm.size());
  std::size_t next = 0;
  for (std::size_t i = 0; i < fm.size(); ++i) {
    out.push_back(make_verdict(m, fm.ids[i], amp(i, 0), [&] {
      auto row = act.row(next++);
      return std::vector<double>(row.begin(), row.end());
    }));
  }
  return out;
}

struct Ranking {
  std::vector<Verdict> verdicts;
  /// ranks[v][j]: 1-based rank of verdict v on label j, 0 when gated out.
  std::vector<std::vector<std::size_t>> ranks;
};

/// Per label, predicted AMPs ordered by descending score with ties broken
/// by id.
inline Ranking rank_candidates(std::vector<Verdict> verdicts, std::size_t n_labels) {
  Ranking r;
  r.ranks.assign(verdicts.size(), std::vector<std::size_t>(n_labels, 0));
  std::vector<std::size_t> amps;
  for (std::size_t i = 0; i < verdicts.size(); ++i) {
    if (verdicts[i].is_amp) amps.push_back(i);
  }
  for (std::size_t j = 0; j < n_labels; ++j) {
    auto order = amps;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const double sa = (*verdicts[a].activity_scores)[j], sb = (*verdicts[b].activity_scores)[j];
      if (sa != sb) return sa > sb;
      return verdicts[a].id < verdicts[b].id;
    });
    for (std::size_t k = 0; k < order.size(); ++k) r.ranks[order[k]][j] = k + 1;
  }
  r.verdicts = std::move(verdicts);
  return r;
}

inline Ranking rank_candidates(const PipelineModel& m, const embed::FeatureMatrix& batch) {
  if (batch.size() == 0) throw DataError("rank_candidates: empty batch");
  return rank_candidates(predict_batch(m, batch), m.label_names.size());
}

inline void write_verdicts(std::ostream& out, const std::vector<Verdict>& verdicts,
                           const std::vector<std::string>& label_names) {
  out << "id\tis_amp\tamp_score";
  for (const auto& n : label_names) out << "\tscore:" << n;
  for (const auto& n : label_names) out << "\tlabel:" << n;
  out << '\n';
  for (const auto& v : verdicts) {
    out << v.id << '\t' << (v.is_amp ? 1 : 0) << '\t' << format_real(v.amp_score);
    for (std::size_t j = 0; j < label_names.size(); ++j) {
      out << '\t';
      if (v.activity_scores) out << format_real((*v.activity_scores)[j]);
    }
    for (std::size_t j = 0; j < label_names.size(); ++j) {
      out << '\t';
      if (v.activity_labels) out << int((*v.activity_labels)[j]);
    }
    out << '\n';
  }
}

inline void write_ranking(std::ostream& out, const Ranking& r, const std::vector<std::string>& label_names) {
  out << "label\trank\tid\tscore\n";
  for (std::size_t j = 0; j < label_names.size(); ++j) {
    std::vector<std::pair<std::size_t, std::size_t>> rows;
    for (std::size_t v = 0; v < r.verdicts.size(); ++v) {
      if (r.ranks[v][j] > 0) rows.push_back({r.ranks[v][j], v});
    }
    std::sort(rows.begin(), rows.end());
    for (auto [rank, v] : rows) {
      out << label_names[j] << '\t' << rank << '\t' << r.verdicts[v].id << '\t'
          << format_real((*r.verdicts[v].activity_scores)[j]) << '\n';
    }
  }
}

}  // namespace hmd::hierarchy
