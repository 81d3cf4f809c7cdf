#pragma once

// Per-sequence feature vectors: the embedding TSV loader, mean pooling of
// residue embeddings, one-hot encoding and id alignment.

#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "hmd/common.hpp"
#include "hmd/seqio.hpp"

namespace hmd::embed {

enum class FeatureSource : std::uint8_t { kEmbeddingFile = 0, kOneHot = 1 };

inline const char* to_string(FeatureSource s) {
  return s == FeatureSource::kOneHot ? "one-hot" : "embedding-file";
}

/// Rows of real features keyed by sequence id.
struct FeatureMatrix {
  std::vector<std::string> ids;
  RealMatrix values;
  FeatureSource source = FeatureSource::kEmbeddingFile;

  std::size_t dim() const noexcept { return values.cols(); }
  std::size_t size() const noexcept { return ids.size(); }
};

inline constexpr std::size_t kDefaultOneHotLength = 200;

/// Reads the "#dim <d>" embedding format. Cells are tab separated; runs of
/// spaces are accepted as well.
inline FeatureMatrix load_embeddings(std::istream& in) {
  FeatureMatrix fm;
  std::string raw;
  std::size_t line_no = 0;
  std::size_t dim = 0;
  bool have_header = false;
  std::unordered_map<std::string, std::size_t> seen;
  std::vector<double> data;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = strip_cr(raw);
    if (line.empty()) continue;
    if (!have_header) {
      constexpr std::string_view tag = "#dim ";
      if (line.substr(0, tag.size()) != tag || !parse_size(line.substr(tag.size()), dim) || dim == 0) {
        throw ParseError(line_no, "expected header '#dim <d>'");
      }
      have_header = true;
      continue;
    }
    auto cells = split_ws(line);
    if (cells.size() != dim + 1) {
      throw ParseError(line_no, "row has " + std::to_string(cells.size() - 1) +
                                    " values, header declares " + std::to_string(dim));
    }
    std::string id(cells[0]);
    if (id.empty()) throw ParseError(line_no, "empty id");
    if (!seen.emplace(id, fm.ids.size()).second) throw ParseError(line_no, "duplicate id '" + id + "'");
    for (std::size_t j = 1; j < cells.size(); ++j) {
      double v;
      if (!parse_real(cells[j], v)) {
        throw ParseError(line_no, "non-numeric cell '" + std::string(cells[j]) + "'");
      }
      data.push_back(v);
    }
    fm.ids.push_back(std::move(id));
  }
  if (!have_header) throw DataError("embedding file has no '#dim' header");
  fm.values = RealMatrix(fm.ids.size(), dim, std::move(data));
  return fm;
}

inline FeatureMatrix load_embeddings(std::string_view text) {
  std::istringstream in{std::string(text)};
  return load_embeddings(in);
}

inline void write_embeddings(std::ostream& out, const FeatureMatrix& fm) {
  out << "#dim " << fm.dim() << '\n';
  for (std::size_t i = 0; i < fm.size(); ++i) {
    out << fm.ids[i];
    for (double v : fm.values.row(i)) out << '\t' << format_real(v);
    out << '\n';
  }
}

/// Column means of an L x d residue embedding matrix.
inline std::vector<double> mean_pool(const RealMatrix& residues) {
  if (residues.rows() == 0 || residues.cols() == 0) throw DataError("mean_pool: empty matrix");
  std::vector<double> out(residues.cols(), 0.0);
  for (std::size_t r = 0; r < residues.rows(); ++r) {
    auto row = residues.row(r);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += row[j];
  }
  for (double& v : out) v /= static_cast<double>(residues.rows());
  return out;
}

/// Position-major one-hot code: residue i with alphabetical rank a sets
/// index 20*i + a. Truncates past max_len and zero-pads short sequences.
inline std::vector<double> one_hot_encode(std::string_view residues, std::size_t max_len = kDefaultOneHotLength) {
  seqio::validate_residues(residues);
  const std::size_t alpha = seqio::kAminoAcids.size();
  std::vector<double> out(alpha * max_len, 0.0);
  const std::size_t n = std::min(residues.size(), max_len);
  for (std::size_t i = 0; i < n; ++i) {
    out[alpha * i + static_cast<std::size_t>(seqio::residue_rank(residues[i]))] = 1.0;
  }
  return out;
}

inline FeatureMatrix one_hot_matrix(const seqio::Dataset& ds, std::size_t max_len = kDefaultOneHotLength) {
  FeatureMatrix fm;
  fm.source = FeatureSource::kOneHot;
  fm.values = RealMatrix(ds.size(), seqio::kAminoAcids.size() * max_len);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    fm.ids.push_back(ds.records[i].id);
    auto code = one_hot_encode(ds.records[i].residues, max_len);
    std::copy(code.begin(), code.end(), fm.values.row(i).begin());
  }
  return fm;
}

/// Features re-ordered to follow the dataset. Every dataset id must be
/// present; the error lists all missing ids.
inline FeatureMatrix join(const seqio::Dataset& ds, const FeatureMatrix& fm) {
  std::unordered_map<std::string_view, std::size_t> index;
  for (std::size_t i = 0; i < fm.ids.size(); ++i) index.emplace(fm.ids[i], i);
  std::vector<std::size_t> rows;
  std::vector<std::string> missing;
  for (const auto& rec : ds.records) {
    auto it = index.find(rec.id);
    if (it == index.end()) {
      missing.push_back(rec.id);
    } else {
      rows.push_back(it->second);
    }
  }
  if (!missing.empty()) {
    std::string msg = "ids missing from the feature matrix:";
    for (const auto& id : missing) msg += " " + id;
    throw DataError(msg);
  }
  FeatureMatrix out;
  out.source = fm.source;
  out.values = fm.values.select_rows(rows);
  if (ds.size() == 0) out.values = RealMatrix(0, fm.dim());
  for (const auto& rec : ds.records) out.ids.push_back(rec.id);
  return out;
}

/// Keeps the listed feature columns, in the listed order.
inline FeatureMatrix project(const FeatureMatrix& fm, std::span<const std::size_t> columns) {
  for (auto c : columns) {
    if (c >= fm.dim()) throw DataError("feature index " + std::to_string(c) + " out of range");
  }
  FeatureMatrix out;
  out.ids = fm.ids;
  out.source = fm.source;
  out.values = RealMatrix(fm.size(), columns.size());
  for (std::size_t i = 0; i < fm.size(); ++i) {
    for (std::size_t j = 0; j < columns.size(); ++j) out.values(i, j) = fm.values(i, columns[j]);
  }
  return out;
}

inline std::vector<double> project(std::span<const double> v, std::span<const std::size_t> columns) {
  std::vector<double> out;
  out.reserve(columns.size());
  for (auto c : columns) {
    if (c >= v.size()) throw DataError("feature index " + std::to_string(c) + " out of range");
    out.push_back(v[c]);
  }
  return out;
}

}  // namespace hmd::embed
