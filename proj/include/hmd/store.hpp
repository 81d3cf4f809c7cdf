#pragma once

// Binary model files. Layout (all integers little-endian):
//
//   "HMDF" | u32 version | u32 kind | u32 section count
//   per section: char name[16] | u64 offset | u64 length | u32 crc32
//   u32 crc32 of everything above
//   section payloads
//
// See docs/FORMAT.md for the payload encodings.

#include <zlib.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <unistd.h>
#include <vector>

#include "hmd/cascade.hpp"
#include "hmd/common.hpp"
#include "hmd/forest.hpp"
#include "hmd/hierarchy.hpp"

namespace hmd::store {

inline constexpr std::array<char, 4> kMagic = {'H', 'M', 'D', 'F'};
inline constexpr std::uint32_t kVersion = 1;
inline constexpr std::size_t kNameBytes = 16;
inline constexpr std::size_t kEntryBytes = kNameBytes + 8 + 8 + 4;

enum class ModelKind : std::uint32_t { kForest = 1, kCascade = 2, kPipeline = 3 };

inline const char* to_string(ModelKind k) {
  switch (k) {
    case ModelKind::kForest:
      return "forest";
    case ModelKind::kCascade:
      return "cascade";
    case ModelKind::kPipeline:
      return "pipeline";
  }
  return "?";
}

inline std::uint32_t crc32_of(std::string_view bytes) {
  uLong c = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large buffers in chunks.
  while (!bytes.empty()) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(bytes.size(), 1u << 30));
    c = ::crc32(c, reinterpret_cast<const Bytef*>(bytes.data()), n);
    bytes.remove_prefix(n);
  }
  return static_cast<std::uint32_t>(c);
}

// ---------------------------------------------------------------------------
// Primitive encoding

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void size(std::size_t v) { u64(v); }
  void str(std::string_view s) {
    size(s.size());
    buf_.append(s);
  }
  void reals(const std::vector<double>& v) {
    size(v.size());
    for (double d : v) f64(d);
  }
  void bytes(const std::vector<std::uint8_t>& v) {
    size(v.size());
    for (auto b : v) u8(b);
  }
  void sizes(const std::vector<std::size_t>& v) {
    size(v.size());
    for (auto s : v) size(s);
  }
  void raw(std::string_view s) { buf_.append(s); }

  const std::string& data() const noexcept { return buf_; }
  std::string take() { return std::move(buf_); }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string_view data, std::string what = "model") : data_(data), what_(std::move(what)) {}

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<std::uint8_t>(data_[pos_++])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(static_cast<std::uint8_t>(data_[pos_++])) << (8 * i);
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::size_t size() {
    const auto v = u64();
    if (v > std::numeric_limits<std::size_t>::max()) fail("size out of range");
    return static_cast<std::size_t>(v);
  }
  /// A count of elements that each occupy at least `min_bytes`; rejects counts
  /// the remaining payload cannot hold, so a corrupt length never triggers a
  /// huge allocation.
  std::size_t count(std::size_t min_bytes) {
    const auto n = size();
    if (min_bytes > 0 && n > remaining() / min_bytes) fail("truncated (count " + std::to_string(n) + ")");
    return n;
  }
  std::string str() {
    const auto n = count(1);
    std::string s(data_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::vector<double> reals() {
    std::vector<double> v(count(8));
    for (double& d : v) d = f64();
    return v;
  }
  std::vector<std::uint8_t> bytes() {
    std::vector<std::uint8_t> v(count(1));
    for (auto& b : v) b = u8();
    return v;
  }
  std::vector<std::size_t> sizes() {
    std::vector<std::size_t> v(count(8));
    for (auto& s : v) s = size();
    return v;
  }
  std::string_view raw(std::size_t n) {
    need(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const noexcept { return data_.size() - pos_; }
  std::size_t position() const noexcept { return pos_; }
  void expect_end() const {
    if (remaining() != 0) fail(std::to_string(remaining()) + " trailing bytes");
  }
  [[noreturn]] void fail(const std::string& msg) const { throw FormatError(what_ + ": " + msg); }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) fail("truncated");
  }
  std::string_view data_;
  std::size_t pos_ = 0;
  std::string what_;
};

// ---------------------------------------------------------------------------
// Forests

inline void encode(Writer& w, const forest::Tree& t) {
  w.size(t.n_labels);
  w.size(t.nodes.size());
  for (const auto& n : t.nodes) {
    w.i32(n.feature);
    w.f64(n.threshold);
    w.i32(n.left);
    w.i32(n.right);
    w.i32(n.leaf);
    w.u32(n.samples);
  }
  w.reals(t.leaf_values);
}

inline forest::Tree decode_tree(Reader& r, std::size_t n_features, std::size_t n_labels) {
  forest::Tree t;
  t.n_labels = r.size();
  if (t.n_labels != n_labels) r.fail("tree label count " + std::to_string(t.n_labels) + " != forest's");
  t.nodes.resize(r.count(4 + 8 + 4 + 4 + 4 + 4));
  if (t.nodes.empty()) r.fail("tree without nodes");
  for (auto& n : t.nodes) {
    n.feature = r.i32();
    n.threshold = r.f64();
    n.left = r.i32();
    n.right = r.i32();
    n.leaf = r.i32();
    n.samples = r.u32();
  }
  t.leaf_values = r.reals();
  if (n_labels == 0 || t.leaf_values.size() % n_labels != 0) r.fail("leaf table is not a multiple of the label count");
  const auto node_count = static_cast<std::int64_t>(t.nodes.size());
  const auto leaf_count = static_cast<std::int64_t>(t.leaf_count());
  for (std::int64_t i = 0; i < node_count; ++i) {
    const auto& n = t.nodes[std::size_t(i)];
    if (n.is_leaf()) {
      if (n.feature != -1) r.fail("node " + std::to_string(i) + ": bad feature index");
      if (n.leaf < 0 || n.leaf >= leaf_count) r.fail("node " + std::to_string(i) + ": leaf index out of range");
    } else {
      if (std::size_t(n.feature) >= n_features) r.fail("node " + std::to_string(i) + ": feature index out of range");
      // Children always follow their parent, which rules out cycles.
      if (n.left <= i || n.left >= node_count || n.right <= i || n.right >= node_count) {
        r.fail("node " + std::to_string(i) + ": child index out of range");
      }
    }
  }
  return t;
}

inline void encode(Writer& w, const forest::ForestModel& m) {
  w.u8(static_cast<std::uint8_t>(m.kind));
  w.size(m.n_features);
  w.size(m.n_labels);
  w.u64(m.seed);
  w.size(m.min_samples_leaf);
  w.size(m.max_depth);
  w.size(m.max_features);
  w.size(m.trees.size());
  for (const auto& t : m.trees) encode(w, t);
}

inline forest::ForestModel decode_forest(Reader& r) {
  forest::ForestModel m;
  const auto kind = r.u8();
  if (kind > 1) r.fail("unknown forest kind " + std::to_string(kind));
  m.kind = static_cast<forest::ForestKind>(kind);
  m.n_features = r.size();
  m.n_labels = r.size();
  m.seed = r.u64();
  m.min_samples_leaf = r.size();
  m.max_depth = r.size();
  m.max_features = r.size();
  m.trees.resize(r.count(16));
  for (auto& t : m.trees) t = decode_tree(r, m.n_features, m.n_labels);
  return m;
}

// ---------------------------------------------------------------------------
// Cascades

inline void encode(Writer& w, const cascade::CascadeConfig& c) {
  w.size(c.max_layers);
  w.size(c.patience);
  w.size(c.k_inner);
  w.size(c.n_trees);
  w.size(c.min_samples_leaf);
  w.size(c.max_depth);
  w.size(c.max_features);
  w.u8(c.scanning ? 1 : 0);
  w.size(c.scanner.window);
  w.size(c.scanner.stride);
  w.size(c.scanner.n_trees);
  w.size(c.scanner.min_samples_leaf);
  w.size(c.scanner.max_depth);
  w.u32(c.scanner.threads);
  w.u32(c.threads);
  w.u64(c.seed);
}

inline cascade::CascadeConfig decode_cascade_config(Reader& r) {
  cascade::CascadeConfig c;
  c.max_layers = r.size();
  c.patience = r.size();
  c.k_inner = r.size();
  c.n_trees = r.size();
  c.min_samples_leaf = r.size();
  c.max_depth = r.size();
  c.max_features = r.size();
  c.scanning = r.u8() != 0;
  c.scanner.window = r.size();
  c.scanner.stride = r.size();
  c.scanner.n_trees = r.size();
  c.scanner.min_samples_leaf = r.size();
  c.scanner.max_depth = r.size();
  c.scanner.threads = r.u32();
  c.threads = r.u32();
  c.seed = r.u64();
  return c;
}

inline void encode(Writer& w, const cascade::CascadeModel& m) {
  w.size(m.n_labels);
  w.size(m.input_dim);
  w.u8(m.scanner ? 1 : 0);
  if (m.scanner) {
    w.size(m.scanner->window);
    w.size(m.scanner->stride);
    w.size(m.scanner->input_dim);
    w.size(m.scanner->n_labels);
    for (const auto& f : m.scanner->forests) encode(w, f);
  }
  w.size(m.levels.size());
  for (const auto& lv : m.levels) {
    w.size(lv.input_dim);
    for (const auto& f : lv.forests) encode(w, f);
    w.reals(lv.log_confidence);
    w.reals(lv.raw_log_confidence);
    w.bytes(lv.reused);
  }
  w.size(m.best_layer);
  w.reals(m.history);
  w.str(m.stop_reason);
  encode(w, m.config);
}

inline void check_quartet(Reader& r, const std::array<forest::ForestModel, cascade::kQuartet>& forests,
                          std::size_t n_features, std::size_t n_labels, const std::string& where) {
  for (std::size_t f = 0; f < cascade::kQuartet; ++f) {
    if (forests[f].kind != cascade::kQuartetKinds[f]) r.fail(where + ": forest kinds out of order");
    if (forests[f].n_features != n_features) r.fail(where + ": forest input dimension mismatch");
    if (forests[f].n_labels != n_labels) r.fail(where + ": forest label count mismatch");
  }
}

inline cascade::CascadeModel decode_cascade(Reader& r) {
  cascade::CascadeModel m;
  m.n_labels = r.size();
  m.input_dim = r.size();
  if (m.n_labels == 0) r.fail("cascade without labels");
  if (r.u8()) {
    cascade::ScanningModel s;
    s.window = r.size();
    s.stride = r.size();
    s.input_dim = r.size();
    s.n_labels = r.size();
    for (auto& f : s.forests) f = decode_forest(r);
    if (s.input_dim != m.input_dim || s.n_labels != m.n_labels) r.fail("scanner does not match the cascade");
    if (s.window == 0 || s.stride == 0 || s.window > s.input_dim) r.fail("scanner window out of range");
    check_quartet(r, s.forests, s.window, m.n_labels, "scanner");
    m.scanner = std::move(s);
  }
  m.levels.resize(r.count(8));
  const std::size_t width = cascade::representation_width(m.n_labels);
  for (std::size_t t = 0; t < m.levels.size(); ++t) {
    auto& lv = m.levels[t];
    lv.input_dim = r.size();
    const std::size_t expected = m.base_dim() + (t == 0 ? 0 : width);
    const std::string where = "level " + std::to_string(t + 1);
    if (lv.input_dim != expected) r.fail(where + ": input dimension mismatch");
    for (auto& f : lv.forests) f = decode_forest(r);
    check_quartet(r, lv.forests, lv.input_dim, m.n_labels, where);
    lv.log_confidence = r.reals();
    lv.raw_log_confidence = r.reals();
    lv.reused = r.bytes();
    if (lv.log_confidence.size() != m.n_labels || lv.raw_log_confidence.size() != m.n_labels ||
        lv.reused.size() != m.n_labels) {
      r.fail(where + ": per-label vectors have the wrong length");
    }
  }
  m.best_layer = r.size();
  if (m.best_layer == 0 || m.best_layer > m.levels.size()) r.fail("best layer out of range");
  m.history = r.reals();
  m.stop_reason = r.str();
  m.config = decode_cascade_config(r);
  return m;
}

// ---------------------------------------------------------------------------
// Pipelines

inline void encode(Writer& w, const hierarchy::PipelineModel& m) {
  encode(w, m.binary);
  encode(w, m.activity);
  w.f64(m.amp_threshold);
  w.reals(m.activity_thresholds);
  w.size(m.label_names.size());
  for (const auto& n : m.label_names) w.str(n);
  w.u8(static_cast<std::uint8_t>(m.features.source));
  w.size(m.features.one_hot_length);
  w.sizes(m.features.subset);
  w.size(m.features.raw_dim);
}

inline hierarchy::PipelineModel decode_pipeline(Reader& r) {
  hierarchy::PipelineModel m;
  m.binary = decode_cascade(r);
  m.activity = decode_cascade(r);
  m.amp_threshold = r.f64();
  m.activity_thresholds = r.reals();
  m.label_names.resize(r.count(8));
  for (auto& n : m.label_names) n = r.str();
  const auto source = r.u8();
  if (source > 1) r.fail("unknown feature source");
  m.features.source = static_cast<embed::FeatureSource>(source);
  m.features.one_hot_length = r.size();
  m.features.subset = r.sizes();
  m.features.raw_dim = r.size();
  if (m.binary.n_labels != 1) r.fail("binary cascade must have one label");
  if (m.activity.n_labels != m.label_names.size() || m.activity_thresholds.size() != m.label_names.size()) {
    r.fail("activity label count mismatch");
  }
  if (m.binary.input_dim != m.activity.input_dim) r.fail("cascade input dimensions differ");
  for (auto j : m.features.subset) {
    if (j >= m.features.raw_dim) r.fail("feature subset index out of range");
  }
  if (!m.features.subset.empty() && m.features.subset.size() != m.binary.input_dim) {
    r.fail("feature subset size does not match the model input");
  }
  return m;
}

// ---------------------------------------------------------------------------
// Container

struct Section {
  std::string name;
  std::string payload;
};

inline std::string pack(ModelKind kind, const std::vector<Section>& sections) {
  Writer head;
  head.raw(std::string_view(kMagic.data(), kMagic.size()));
  head.u32(kVersion);
  head.u32(static_cast<std::uint32_t>(kind));
  head.u32(static_cast<std::uint32_t>(sections.size()));
  std::uint64_t offset = 16 + sections.size() * kEntryBytes + 4;
  for (const auto& s : sections) {
    if (s.name.size() > kNameBytes) throw Error("section name too long: " + s.name);
    std::string name = s.name;
    name.resize(kNameBytes, '\0');
    head.raw(name);
    head.u64(offset);
    head.u64(s.payload.size());
    head.u32(crc32_of(s.payload));
    offset += s.payload.size();
  }
  head.u32(crc32_of(head.data()));
  std::string out = head.take();
  for (const auto& s : sections) out += s.payload;
  return out;
}

struct Unpacked {
  ModelKind kind = ModelKind::kForest;
  std::map<std::string, std::string_view> sections;
};

/// Validates the header and every section checksum. Views point into `file`.
inline Unpacked unpack(std::string_view file) {
  Reader r(file, "model file");
  if (file.size() < 16 || std::memcmp(file.data(), kMagic.data(), 4) != 0) r.fail("not an HMDF model file");
  r.raw(4);
  const auto version = r.u32();
  if (version != kVersion) {
    r.fail("unsupported format version " + std::to_string(version) + " (expected " + std::to_string(kVersion) + ")");
  }
  const auto kind = r.u32();
  const auto n = r.u32();
  if (std::size_t(n) > r.remaining() / kEntryBytes) r.fail("truncated section table");
  struct Entry {
    std::string name;
    std::uint64_t offset, length;
    std::uint32_t crc;
  };
  std::vector<Entry> entries(n);
  for (auto& e : entries) {
    auto raw = r.raw(kNameBytes);
    e.name = std::string(raw.substr(0, raw.find('\0')));
    e.offset = r.u64();
    e.length = r.u64();
    e.crc = r.u32();
  }
  const auto header_end = r.position();
  const auto header_crc = r.u32();
  if (header_crc != crc32_of(file.substr(0, header_end))) r.fail("header checksum mismatch");
  if (kind < 1 || kind > 3) r.fail("unknown model kind " + std::to_string(kind));
  Unpacked u;
  u.kind = static_cast<ModelKind>(kind);
  for (const auto& e : entries) {
    if (e.offset > file.size() || e.length > file.size() - e.offset) r.fail("section '" + e.name + "' is truncated");
    auto payload = file.substr(std::size_t(e.offset), std::size_t(e.length));
    if (crc32_of(payload) != e.crc) r.fail("checksum mismatch in section '" + e.name + "'");
    if (!u.sections.emplace(e.name, payload).second) r.fail("duplicate section '" + e.name + "'");
  }
  return u;
}

inline std::string_view section(const Unpacked& u, const std::string& name) {
  auto it = u.sections.find(name);
  if (it == u.sections.end()) throw FormatError("model file: missing section '" + name + "'");
  return it->second;
}

// ---------------------------------------------------------------------------
// Whole-model serialization

template <class M>
constexpr ModelKind kind_of() {
  if constexpr (std::is_same_v<M, forest::ForestModel>) return ModelKind::kForest;
  else if constexpr (std::is_same_v<M, cascade::CascadeModel>) return ModelKind::kCascade;
  else return ModelKind::kPipeline;
}

/// Text written to the "config" section: informational key=value lines.
inline std::string describe(const forest::ForestModel& m) {
  std::ostringstream os;
  os << "kind=" << (m.kind == forest::ForestKind::kRandom ? "random" : "completely-random") << '\n'
     << "trees=" << m.n_trees() << '\n'
     << "features=" << m.n_features << '\n'
     << "labels=" << m.n_labels << '\n'
     << "seed=" << m.seed << '\n';
  return os.str();
}

inline std::string describe(const cascade::CascadeModel& m) {
  std::ostringstream os;
  os << "labels=" << m.n_labels << '\n'
     << "input_dim=" << m.input_dim << '\n'
     << "levels=" << m.levels.size() << '\n'
     << "best_layer=" << m.best_layer << '\n'
     << "stop_reason=" << m.stop_reason << '\n'
     << "trees=" << m.config.n_trees << '\n'
     << "k_inner=" << m.config.k_inner << '\n'
     << "seed=" << m.config.seed << '\n'
     << "scan=" << (m.scanner ? "true" : "false") << '\n';
  return os.str();
}

inline std::string describe(const hierarchy::PipelineModel& m) {
  std::ostringstream os;
  os << "amp_threshold=" << format_real(m.amp_threshold) << '\n'
     << "features=" << embed::to_string(m.features.source) << '\n'
     << "feature_dim=" << m.feature_dim() << '\n'
     << "labels=";
  for (std::size_t j = 0; j < m.label_names.size(); ++j) os << (j ? "," : "") << m.label_names[j];
  os << '\n' << "binary_best_layer=" << m.binary.best_layer << '\n' << "activity_best_layer=" << m.activity.best_layer << '\n';
  return os.str();
}

inline void check_trained(const forest::ForestModel& m) {
  if (m.trees.empty()) throw Error("cannot save an untrained forest");
}
inline void check_trained(const cascade::CascadeModel& m) {
  if (m.levels.empty() || m.best_layer == 0) throw Error("cannot save an untrained cascade");
}
inline void check_trained(const hierarchy::PipelineModel& m) {
  check_trained(m.binary);
  check_trained(m.activity);
}

template <class M>
std::string serialize(const M& model) {
  check_trained(model);
  Writer w;
  encode(w, model);
  return pack(kind_of<M>(), {{"config", describe(model)}, {"model", w.take()}});
}

template <class M>
M deserialize(std::string_view file) {
  const auto u = unpack(file);
  if (u.kind != kind_of<M>()) {
    throw FormatError(std::string("model file holds a ") + to_string(u.kind) + ", expected a " +
                      to_string(kind_of<M>()));
  }
  section(u, "config");
  Reader r(section(u, "model"));
  M m;
  if constexpr (std::is_same_v<M, forest::ForestModel>) m = decode_forest(r);
  else if constexpr (std::is_same_v<M, cascade::CascadeModel>) m = decode_cascade(r);
  else m = decode_pipeline(r);
  r.expect_end();
  return m;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes to a temporary file in the same directory, then renames it over
/// `path`, so readers never see a partial file.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  auto tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(bytes.data(), std::streamsize(bytes.size()));
    out.flush();
    if (!out) {
      out.close();
      std::filesystem::remove(tmp);
      throw Error("short write to " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw Error("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
  }
}

template <class M>
void save(const std::filesystem::path& path, const M& model) {
  write_file_atomic(path, serialize(model));
}

template <class M>
M load(const std::filesystem::path& path) {
  return deserialize<M>(read_file(path));
}

/// Kind of a model file without decoding the payload.
inline ModelKind peek_kind(const std::filesystem::path& path) { return unpack(read_file(path)).kind; }

}  // namespace hmd::store
