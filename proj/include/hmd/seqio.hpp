#pragma once

// Peptide datasets: FASTA parsing, activity label tables, deduplication and
// summary statistics.

#include <array>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "hmd/common.hpp"

namespace hmd::seqio {

/// The 20 standard amino acids in alphabetical one-letter order.
inline constexpr std::string_view kAminoAcids = "ACDEFGHIKLMNPQRSTVWY";

/// Activity targets in the canonical column order.
inline constexpr std::size_t kActivityCount = 11;
inline const std::array<std::string, kActivityCount>& activity_names() {
  static const std::array<std::string, kActivityCount> names = {
      "Gram-positive", "Gram-negative", "Mammalian Cell", "Virus",
      "Fungus",        "Insect",        "Cancer",         "Parasite",
      "Mollicute",     "Nematode",      "Protista"};
  return names;
}

inline std::vector<std::string> default_label_names() {
  const auto& a = activity_names();
  return {a.begin(), a.end()};
}

/// Alphabetical rank of an amino acid letter, or -1.
constexpr int residue_rank(char c) noexcept {
  for (std::size_t i = 0; i < kAminoAcids.size(); ++i) {
    if (kAminoAcids[i] == c) return static_cast<int>(i);
  }
  return -1;
}

struct FastaRecord {
  std::string id;
  std::string residues;
  friend bool operator==(const FastaRecord&, const FastaRecord&) = default;
};

struct LabeledSequence {
  std::string id;
  std::string residues;
  std::optional<bool> amp_label;
  std::optional<std::vector<std::uint8_t>> activity_labels;
};

struct Dataset {
  std::vector<LabeledSequence> records;
  std::vector<std::string> label_names = default_label_names();
  std::string provenance;

  std::size_t size() const noexcept { return records.size(); }
};

/// Throws DataError if `residues` is empty or has a symbol outside the
/// 20-letter alphabet. Expects uppercase input.
inline void validate_residues(std::string_view residues, std::string_view id = {}) {
  if (residues.empty()) {
    throw DataError("empty sequence" + (id.empty() ? std::string() : " for '" + std::string(id) + "'"));
  }
  for (char c : residues) {
    if (residue_rank(c) < 0) {
      throw DataError("illegal residue '" + std::string(1, c) + "'" +
                      (id.empty() ? std::string() : " in '" + std::string(id) + "'"));
    }
  }
}

/// Parses FASTA text. The record id is the header up to the first
/// whitespace. Residues are uppercased and joined across wrapped lines.
inline std::vector<FastaRecord> parse_fasta(std::istream& in) {
  std::vector<FastaRecord> out;
  std::string raw;
  std::size_t line_no = 0;
  std::size_t header_line = 0;
  auto close_record = [&] {
    if (!out.empty() && out.back().residues.empty()) {
      throw ParseError(header_line, "empty record '" + out.back().id + "'");
    }
  };
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = strip_cr(raw);
    if (line.empty()) continue;
    if (line.front() == '>') {
      close_record();
      std::string_view header = line.substr(1);
      auto end = header.find_first_of(" \t");
      std::string id(header.substr(0, end));
      if (id.empty()) throw ParseError(line_no, "header without an id");
      out.push_back({std::move(id), {}});
      header_line = line_no;
      continue;
    }
    if (out.empty()) throw ParseError(line_no, "sequence data before the first header");
    for (char c : line) {
      if (c == ' ' || c == '\t') continue;
      char up = static_cast<char>(c >= 'a' && c <= 'z' ? c - 'a' + 'A' : c);
      if (residue_rank(up) < 0) {
        throw ParseError(line_no, "illegal residue '" + std::string(1, c) + "' in '" +
                                      out.back().id + "'");
      }
      out.back().residues.push_back(up);
    }
  }
  close_record();
  return out;
}

inline std::vector<FastaRecord> parse_fasta(std::string_view text) {
  std::istringstream in{std::string(text)};
  return parse_fasta(in);
}

inline void write_fasta(std::ostream& out, const std::vector<FastaRecord>& records,
                        std::size_t width = 60) {
  for (const auto& r : records) {
    out << '>' << r.id << '\n';
    for (std::size_t i = 0; i < r.residues.size(); i += width) {
      out << std::string_view(r.residues).substr(i, width) << '\n';
    }
  }
}

using LabelMap = std::map<std::string, std::vector<std::uint8_t>>;

/// Parses the activity table: a header "id<TAB>name1..nameL" whose names
/// must equal `label_names` in order, then one 0/1 row per peptide.
inline LabelMap parse_labels(std::istream& in, const std::vector<std::string>& label_names) {
  LabelMap out;
  std::string raw;
  std::size_t line_no = 0;
  bool have_header = false;
  const std::size_t width = label_names.size() + 1;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = strip_cr(raw);
    if (line.empty()) continue;
    auto cells = split(line, '\t');
    if (!have_header) {
      if (cells.size() != width) {
        throw ParseError(line_no, "header has " + std::to_string(cells.size()) +
                                      " columns, expected " + std::to_string(width));
      }
      for (std::size_t j = 0; j < label_names.size(); ++j) {
        if (cells[j + 1] != label_names[j]) {
          throw ParseError(line_no, "unknown column '" + std::string(cells[j + 1]) +
                                        "', expected '" + label_names[j] + "'");
        }
      }
      have_header = true;
      continue;
    }
    if (cells.size() != width) {
      throw ParseError(line_no, "wrong column count " + std::to_string(cells.size()) +
                                    ", expected " + std::to_string(width));
    }
    std::string id(cells[0]);
    if (id.empty()) throw ParseError(line_no, "empty id");
    std::vector<std::uint8_t> bits(label_names.size());
    for (std::size_t j = 0; j < label_names.size(); ++j) {
      const auto cell = cells[j + 1];
      if (cell == "1") {
        bits[j] = 1;
      } else if (cell != "0") {
        throw ParseError(line_no, "cell '" + std::string(cell) + "' is not 0 or 1");
      }
    }
    if (!out.emplace(id, std::move(bits)).second) {
      throw ParseError(line_no, "duplicate id '" + id + "'");
    }
  }
  if (!have_header) throw DataError("label table has no header row");
  return out;
}

inline LabelMap parse_labels(std::string_view text, const std::vector<std::string>& label_names) {
  std::istringstream in{std::string(text)};
  return parse_labels(in, label_names);
}

/// Builds a dataset from FASTA records and the label table. A record is an
/// AMP exactly when it has a row in the table; rows whose id is not in the
/// FASTA are an error.
inline Dataset assemble(const std::vector<FastaRecord>& fasta, const LabelMap& labels,
                        std::vector<std::string> label_names = default_label_names()) {
  Dataset ds;
  ds.label_names = std::move(label_names);
  std::set<std::string> seen;
  for (const auto& rec : fasta) {
    if (!seen.insert(rec.id).second) throw DataError("duplicate FASTA id '" + rec.id + "'");
    LabeledSequence s{rec.id, rec.residues, false, std::nullopt};
    if (auto it = labels.find(rec.id); it != labels.end()) {
      s.amp_label = true;
      s.activity_labels = it->second;
    }
    ds.records.push_back(std::move(s));
  }
  std::vector<std::string> orphans;
  for (const auto& [id, _] : labels) {
    if (!seen.count(id)) orphans.push_back(id);
  }
  if (!orphans.empty()) {
    std::string msg = "label rows without a FASTA record:";
    for (const auto& id : orphans) msg += " " + id;
    throw DataError(msg);
  }
  return ds;
}

/// Dataset whose amp_label is left unset, for prediction inputs.
inline Dataset unlabeled(const std::vector<FastaRecord>& fasta) {
  Dataset ds;
  for (const auto& rec : fasta) ds.records.push_back({rec.id, rec.residues, std::nullopt, std::nullopt});
  return ds;
}

inline void write_labels(std::ostream& out, const Dataset& ds) {
  out << "id";
  for (const auto& n : ds.label_names) out << '\t' << n;
  out << '\n';
  for (const auto& r : ds.records) {
    if (!r.activity_labels) continue;
    out << r.id;
    for (auto b : *r.activity_labels) out << '\t' << int(b);
    out << '\n';
  }
}

struct DedupResult {
  Dataset dataset;
  std::size_t removed = 0;
};

/// Keeps the first record of each distinct residue string. Activity labels
/// of merged duplicates are OR-ed; a true/false amp_label disagreement is an
/// error naming both ids.
inline DedupResult deduplicate(const Dataset& in) {
  DedupResult res;
  res.dataset.label_names = in.label_names;
  res.dataset.provenance = in.provenance;
  std::unordered_map<std::string, std::size_t> first;
  for (const auto& rec : in.records) {
    auto [it, inserted] = first.emplace(rec.residues, res.dataset.records.size());
    if (inserted) {
      res.dataset.records.push_back(rec);
      continue;
    }
    ++res.removed;
    auto& kept = res.dataset.records[it->second];
    if (rec.amp_label) {
      if (kept.amp_label && *kept.amp_label != *rec.amp_label) {
        throw DataError("conflicting AMP labels for identical sequences '" + kept.id +
                        "' and '" + rec.id + "'");
      }
      kept.amp_label = rec.amp_label;
    }
    if (rec.activity_labels) {
      if (!kept.activity_labels) {
        kept.activity_labels = rec.activity_labels;
      } else {
        if (kept.activity_labels->size() != rec.activity_labels->size()) {
          throw DataError("label width mismatch between '" + kept.id + "' and '" + rec.id + "'");
        }
        for (std::size_t j = 0; j < rec.activity_labels->size(); ++j) {
          (*kept.activity_labels)[j] |= (*rec.activity_labels)[j];
        }
      }
    }
  }
  return res;
}

struct DatasetStats {
  std::vector<std::string> label_names;
  std::vector<std::size_t> positives;  // per label
  /// histogram[c] = number of labeled records carrying exactly c labels.
  std::vector<std::size_t> cardinality;
  std::size_t records = 0;
  std::size_t labeled = 0;
  std::size_t amp = 0;
};

inline DatasetStats dataset_stats(const Dataset& ds) {
  DatasetStats st;
  st.label_names = ds.label_names;
  st.positives.assign(ds.label_names.size(), 0);
  st.cardinality.assign(ds.label_names.size() + 1, 0);
  st.records = ds.records.size();
  for (const auto& r : ds.records) {
    if (r.amp_label.value_or(false)) ++st.amp;
    if (!r.activity_labels) continue;
    ++st.labeled;
    std::size_t c = 0;
    for (std::size_t j = 0; j < r.activity_labels->size() && j < st.positives.size(); ++j) {
      if ((*r.activity_labels)[j]) {
        ++st.positives[j];
        ++c;
      }
    }
    ++st.cardinality[c];
  }
  return st;
}

inline void write_stats(std::ostream& out, const DatasetStats& st) {
  out << "section\tkey\tcount\n";
  out << "summary\trecords\t" << st.records << '\n';
  out << "summary\tamp\t" << st.amp << '\n';
  out << "summary\tlabeled\t" << st.labeled << '\n';
  for (std::size_t j = 0; j < st.label_names.size(); ++j) {
    out << "label\t" << st.label_names[j] << '\t' << st.positives[j] << '\n';
  }
  for (std::size_t c = 0; c < st.cardinality.size(); ++c) {
    out << "cardinality\t" << c << '\t' << st.cardinality[c] << '\n';
  }
}

/// Binary AMP labels as an n x 1 matrix; throws if any record lacks one.
inline LabelMatrix amp_matrix(const Dataset& ds) {
  LabelMatrix y(ds.size(), 1);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& r = ds.records[i];
    if (!r.amp_label) throw DataError("record '" + r.id + "' has no AMP label");
    y(i, 0) = *r.amp_label ? 1 : 0;
  }
  return y;
}

/// Activity labels as an n x l matrix; throws if any record lacks them.
inline LabelMatrix activity_matrix(const Dataset& ds) {
  LabelMatrix y(ds.size(), ds.label_names.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& r = ds.records[i];
    if (!r.activity_labels) throw DataError("record '" + r.id + "' has no activity labels");
    if (r.activity_labels->size() != ds.label_names.size()) {
      throw DataError("record '" + r.id + "' has the wrong number of activity labels");
    }
    for (std::size_t j = 0; j < ds.label_names.size(); ++j) y(i, j) = (*r.activity_labels)[j];
  }
  return y;
}

/// The AMP-positive records that carry activity labels.
inline Dataset positives(const Dataset& ds) {
  Dataset out;
  out.label_names = ds.label_names;
  out.provenance = ds.provenance;
  for (const auto& r : ds.records) {
    if (r.amp_label.value_or(false) && r.activity_labels) out.records.push_back(r);
  }
  return out;
}

}  // namespace hmd::seqio
