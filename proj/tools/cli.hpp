#pragma once

// Command-line front end. Every subcommand writes its artifacts under
// --out-dir together with a "<subcommand>.config" snapshot of the resolved
// options. Exit status: 0 success, 1 usage error, 2 data or I/O error.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "hmd/hmd.hpp"

namespace hmd::cli {

namespace fs = std::filesystem;

/// Bad flags, missing inputs or conflicting options.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::string fasta, labels, embeddings, model, out, weights, feature_subset, config;
  std::string task = "multilabel";
  std::string learner = "cascade";
  std::string variant = "all";
  std::string label;
  std::string thresholds;  // comma separated, one per activity label
  std::string sizes = "50,100,200";
  std::string out_dir = ".";
  bool onehot = false, abs = false, scan = false;
  std::size_t max_len = embed::kDefaultOneHotLength;
  std::size_t k = 5, trials = 1;
  std::size_t max_layers = 20, patience = 3, k_inner = 3, trees = 1000;
  std::size_t window = 100, stride = 1, scan_trees = 100;
  std::size_t top_k = 48, samples = 1000, max_instances = 0;
  std::uint64_t seed = 0;
  unsigned threads = 0;
  double amp_threshold = 0.5, kernel_width = 0.0, ridge = 1e-3;
};

// ---------------------------------------------------------------------------
// Option groups

inline void add_common(CLI::App* s, RunConfig& c) {
  s->add_option("--config", c.config, "key=value file; keys are flag names without '--', flags win");
  s->add_option("--seed", c.seed, "Master seed for all randomness")->capture_default_str();
  s->add_option("--threads", c.threads, "Worker cap, 0 = HMD_THREADS or all cores")->capture_default_str();
  s->add_option("--out-dir", c.out_dir, "Directory for outputs")->capture_default_str();
}

inline void add_dataset(CLI::App* s, RunConfig& c, bool labels) {
  s->add_option("--fasta", c.fasta, "Peptide FASTA file");
  if (labels) s->add_option("--labels", c.labels, "Activity table: id<TAB>label columns, one row per AMP");
}

inline void add_features(CLI::App* s, RunConfig& c) {
  auto* emb = s->add_option("--embeddings", c.embeddings, "Embedding TSV ('#dim d' header)");
  s->add_flag("--onehot", c.onehot, "Use one-hot residue encoding instead of embeddings")->excludes(emb);
  s->add_option("--max-len", c.max_len, "One-hot sequence length")->capture_default_str();
  s->add_option("--feature-subset", c.feature_subset, "File of feature indices to keep, one per line");
}

inline void add_cascade(CLI::App* s, RunConfig& c) {
  s->add_option("--max-layers", c.max_layers, "Cascade depth limit")->capture_default_str();
  s->add_option("--patience", c.patience, "Stop after this many levels without improvement")->capture_default_str();
  s->add_option("--k-inner", c.k_inner, "Folds for out-of-fold class vectors")->capture_default_str();
  s->add_option("--trees", c.trees, "Trees per forest")->capture_default_str();
  s->add_flag("--scan", c.scan, "Enable multi-grained scanning");
  s->add_option("--window", c.window, "Scanning window")->capture_default_str();
  s->add_option("--stride", c.stride, "Scanning stride")->capture_default_str();
  s->add_option("--scan-trees", c.scan_trees, "Trees per scanning forest")->capture_default_str();
}

inline void add_thresholds(CLI::App* s, RunConfig& c) {
  s->add_option("--amp-threshold", c.amp_threshold, "AMP gate in (0, 1]; 1 closes the gate")->capture_default_str();
  s->add_option("--thresholds", c.thresholds, "Comma-separated activity thresholds in (0, 1], default 0.5 each");
}

inline void add_task(CLI::App* s, RunConfig& c, bool pipeline) {
  std::vector<std::string> tasks{"binary", "multilabel"};
  if (pipeline) tasks.push_back("pipeline");
  s->add_option("--task", c.task, "Task")->check(CLI::IsMember(tasks))->capture_default_str();
}

inline void add_cv(CLI::App* s, RunConfig& c) {
  s->add_option("--k", c.k, "Cross-validation folds")->capture_default_str();
  s->add_option("--learner", c.learner, "cascade or random-forest")
      ->check(CLI::IsMember({"cascade", "random-forest"}))
      ->capture_default_str();
}

// ---------------------------------------------------------------------------
// Config file and validation

/// Fills options not given on the command line from a key=value file.
inline void apply_config_file(CLI::App* sub, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file " + path);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line(strip_cr(raw));
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError(path + ":" + std::to_string(line_no) + ": expected key=value");
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t"));
      s.erase(s.find_last_not_of(" \t") + 1);
      return s;
    };
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    auto* opt = key == "config" ? nullptr : sub->get_option_no_throw("--" + key);
    if (!opt) throw UsageError(path + ":" + std::to_string(line_no) + ": unknown key '" + key + "'");
    if (opt->count() > 0) continue;
    opt->add_result(value);
    try {
      opt->run_callback();
    } catch (const CLI::ParseError& e) {
      throw UsageError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

inline void require(bool ok, const std::string& what) {
  if (!ok) throw UsageError(what);
}

inline void validate(const RunConfig& c) {
  require(!(c.onehot && !c.embeddings.empty()), "--onehot conflicts with --embeddings");
  require(c.max_layers >= 1, "--max-layers must be at least 1");
  require(c.patience >= 1, "--patience must be at least 1");
  require(c.k_inner >= 2, "--k-inner must be at least 2");
  require(c.trees >= 1 && c.scan_trees >= 1, "tree counts must be positive");
  require(c.window >= 1 && c.stride >= 1, "--window and --stride must be positive");
  require(c.max_len >= 1, "--max-len must be positive");
  require(c.k >= 2, "--k must be at least 2");
  require(c.trials >= 1, "--trials must be at least 1");
  require(c.amp_threshold > 0 && c.amp_threshold <= 1, "--amp-threshold must lie in (0, 1]");
  require(c.samples >= 2, "--samples must be at least 2");
  require(c.kernel_width >= 0, "--kernel-width must be non-negative");
  require(c.ridge > 0, "--ridge must be positive");
  require(c.top_k >= 1, "--top-k must be positive");
}

inline std::vector<double> parse_thresholds(const std::string& text) {
  std::vector<double> out;
  if (text.empty()) return out;
  for (auto cell : split(text, ',')) {
    double v;
    if (!parse_real(cell, v) || !(v > 0 && v <= 1)) {
      throw UsageError("--thresholds: '" + std::string(cell) + "' is not a number in (0, 1]");
    }
    out.push_back(v);
  }
  return out;
}

inline std::vector<std::size_t> parse_sizes(const std::string& text) {
  std::vector<std::size_t> out;
  for (auto cell : split(text, ',')) {
    std::size_t v;
    if (!parse_size(cell, v) || v == 0) throw UsageError("--sizes: '" + std::string(cell) + "' is not a positive count");
    out.push_back(v);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Inputs and outputs

inline std::ifstream open_input(const std::string& path, const char* flag) {
  require(!path.empty(), std::string(flag) + " is required");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  return in;
}

/// Label names come from the table's header row.
inline std::vector<std::string> label_header(const std::string& path) {
  auto in = open_input(path, "--labels");
  std::string raw;
  while (std::getline(in, raw)) {
    auto line = strip_cr(raw);
    if (line.empty()) continue;
    auto cells = split(line, '\t');
    if (cells.size() < 2 || cells[0] != "id") throw ParseError(1, "label header must be 'id<TAB>name...'");
    return {cells.begin() + 1, cells.end()};
  }
  throw DataError("label table " + path + " is empty");
}

inline seqio::Dataset load_dataset(const RunConfig& c, bool need_labels) {
  auto fin = open_input(c.fasta, "--fasta");
  const auto fasta = seqio::parse_fasta(fin);
  if (c.labels.empty()) {
    require(!need_labels, "--labels is required");
    return seqio::assemble(fasta, {});
  }
  auto names = label_header(c.labels);
  auto lin = open_input(c.labels, "--labels");
  auto ds = seqio::assemble(fasta, seqio::parse_labels(lin, names), names);
  ds.provenance = c.fasta;
  return ds;
}

inline std::vector<std::size_t> load_subset(const RunConfig& c) {
  if (c.feature_subset.empty()) return {};
  auto in = open_input(c.feature_subset, "--feature-subset");
  auto idx = explain::read_indices(in);
  if (idx.empty()) throw DataError("feature subset file " + c.feature_subset + " lists no indices");
  return idx;
}

inline embed::FeatureMatrix load_embedding_file(const RunConfig& c) {
  auto in = open_input(c.embeddings, "--embeddings");
  return embed::load_embeddings(in);
}

/// Raw features for `ds` (one-hot or joined embeddings), before subsetting.
inline embed::FeatureMatrix raw_features(const RunConfig& c, const seqio::Dataset& ds) {
  if (c.onehot) return embed::one_hot_matrix(ds, c.max_len);
  require(!c.embeddings.empty(), "one of --embeddings or --onehot is required");
  return embed::join(ds, load_embedding_file(c));
}

inline embed::FeatureMatrix subset_features(const embed::FeatureMatrix& fm, const std::vector<std::size_t>& subset) {
  return subset.empty() ? fm : embed::project(fm, subset);
}

inline cascade::CascadeConfig cascade_config(const RunConfig& c) {
  cascade::CascadeConfig cc;
  cc.max_layers = c.max_layers;
  cc.patience = c.patience;
  cc.k_inner = c.k_inner;
  cc.n_trees = c.trees;
  cc.scanning = c.scan;
  cc.scanner.window = c.window;
  cc.scanner.stride = c.stride;
  cc.scanner.n_trees = c.scan_trees;
  cc.scanner.threads = c.threads;
  cc.threads = c.threads;
  cc.seed = c.seed;
  return cc;
}

inline eval::TaskConfig task_config(const RunConfig& c) {
  eval::TaskConfig t;
  t.task = c.task == "binary" ? eval::Task::kBinary : eval::Task::kMultilabel;
  t.learner = c.learner == "random-forest" ? eval::Learner::kRandomForest : eval::Learner::kCascade;
  t.cascade = cascade_config(c);
  t.forest.n_trees = c.trees;
  t.forest.threads = c.threads;
  t.k = c.k;
  t.seed = c.seed;
  t.amp_threshold = c.amp_threshold;
  t.thresholds = parse_thresholds(c.thresholds);
  return t;
}

class Outputs {
 public:
  explicit Outputs(const std::string& dir) : dir_(dir) { fs::create_directories(dir_); }

  fs::path path(const std::string& name) const { return dir_ / name; }

  void write(const std::string& name, const std::string& text) const {
    store::write_file_atomic(path(name), text);
    std::cerr << "wrote " << path(name).string() << '\n';
  }

  template <class F>
  void write_with(const std::string& name, F&& fill) const {
    std::ostringstream os;
    fill(os);
    write(name, os.str());
  }

 private:
  fs::path dir_;
};

/// Dataset restricted to the records the task trains on.
inline seqio::Dataset task_dataset(const RunConfig& c, const seqio::Dataset& ds) {
  return c.task == "multilabel" ? seqio::positives(ds) : ds;
}

inline void check_thresholds(const std::vector<double>& t, std::size_t labels) {
  if (!t.empty() && t.size() != labels) {
    throw UsageError("--thresholds lists " + std::to_string(t.size()) + " values for " + std::to_string(labels) +
                     " labels");
  }
}

// ---------------------------------------------------------------------------
// Subcommands

inline void run_stats(const RunConfig& c, const Outputs& out) {
  const auto ds = load_dataset(c, false);
  std::ostringstream os;
  seqio::write_stats(os, seqio::dataset_stats(ds));
  std::cout << os.str();
  out.write("stats.tsv", os.str());
}

inline void run_dedup(const RunConfig& c, const Outputs& out) {
  const auto res = seqio::deduplicate(load_dataset(c, false));
  std::vector<seqio::FastaRecord> fasta;
  for (const auto& r : res.dataset.records) fasta.push_back({r.id, r.residues});
  out.write_with("dedup.fasta", [&](std::ostream& os) { seqio::write_fasta(os, fasta); });
  if (!c.labels.empty()) {
    out.write_with("dedup_labels.tsv", [&](std::ostream& os) { seqio::write_labels(os, res.dataset); });
  }
  std::cout << "kept " << res.dataset.size() << " records, removed " << res.removed << " duplicates\n";
}

inline void run_train(const RunConfig& c, const Outputs& out) {
  const auto ds = load_dataset(c, true);
  const auto subset = load_subset(c);
  const auto raw = raw_features(c, ds);
  const auto features = subset_features(raw, subset);
  const auto model_path = c.out.empty() ? out.path("model.hmdf") : fs::path(c.out);
  auto cc = cascade_config(c);
  if (c.task == "pipeline") {
    hierarchy::PipelineConfig pc;
    pc.binary = cc;
    pc.binary.seed = derive_seed(c.seed, 0);
    pc.activity = cc;
    pc.activity.seed = derive_seed(c.seed, 1);
    pc.amp_threshold = c.amp_threshold;
    pc.activity_thresholds = parse_thresholds(c.thresholds);
    check_thresholds(pc.activity_thresholds, ds.label_names.size());
    const auto pos = seqio::positives(ds);
    auto m = hierarchy::train_pipeline(ds, features, pos, embed::join(pos, features), pc);
    m.features.subset = subset;
    m.features.raw_dim = raw.dim();
    m.features.one_hot_length = c.onehot ? c.max_len : 0;
    store::save(model_path, m);
    out.write_with("history_binary.tsv", [&](std::ostream& os) { cascade::write_history(os, m.binary); });
    out.write_with("history_activity.tsv", [&](std::ostream& os) { cascade::write_history(os, m.activity); });
    std::cout << "binary cascade: " << m.binary.levels.size() << " levels, best " << m.binary.best_layer << '\n'
              << "activity cascade: " << m.activity.levels.size() << " levels, best " << m.activity.best_layer
              << '\n';
  } else {
    const auto tds = task_dataset(c, ds);
    const auto x = embed::join(tds, features);
    auto m = cascade::train_cascade(x.values, eval::task_labels(tds, task_config(c).task), cc);
    store::save(model_path, m);
    out.write_with("history.tsv", [&](std::ostream& os) { cascade::write_history(os, m); });
    std::cout << "cascade: " << m.levels.size() << " levels, best " << m.best_layer << " (" << m.stop_reason
              << ")\n";
  }
  std::cerr << "wrote " << model_path.string() << '\n';
}

/// Query features: FASTA order when --fasta is given, else embedding-file order.
inline embed::FeatureMatrix query_features(const RunConfig& c, bool onehot, std::size_t max_len) {
  if (onehot) {
    require(!c.fasta.empty(), "this model uses one-hot features; --fasta is required");
    auto in = open_input(c.fasta, "--fasta");
    return embed::one_hot_matrix(seqio::unlabeled(seqio::parse_fasta(in)), max_len);
  }
  auto fm = load_embedding_file(c);
  if (c.fasta.empty()) return fm;
  auto in = open_input(c.fasta, "--fasta");
  return embed::join(seqio::unlabeled(seqio::parse_fasta(in)), fm);
}

inline void write_scores(std::ostream& os, const embed::FeatureMatrix& fm, const RealMatrix& scores) {
  os << "id";
  for (std::size_t j = 0; j < scores.cols(); ++j) os << "\tscore:" << j;
  os << '\n';
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    os << fm.ids[i];
    for (double v : scores.row(i)) os << '\t' << format_real(v);
    os << '\n';
  }
}

inline void run_predict(const RunConfig& c, const CLI::App* sub, const Outputs& out) {
  require(!c.model.empty(), "--model is required");
  const auto kind = store::peek_kind(c.model);
  if (kind == store::ModelKind::kPipeline) {
    require(c.feature_subset.empty(), "pipeline models carry their own feature subset");
    auto m = store::load<hierarchy::PipelineModel>(c.model);
    if (sub->get_option("--amp-threshold")->count() > 0) m.amp_threshold = c.amp_threshold;
    if (!c.thresholds.empty()) {
      auto t = parse_thresholds(c.thresholds);
      check_thresholds(t, m.label_names.size());
      m.activity_thresholds = t;
    }
    const bool onehot = m.features.source == embed::FeatureSource::kOneHot;
    const auto fm = hierarchy::prepare_features(m.features, query_features(c, onehot, m.features.one_hot_length));
    if (fm.size() == 0) throw DataError("no query sequences");
    auto ranking = hierarchy::rank_candidates(m, fm);
    out.write_with("predictions.tsv",
                   [&](std::ostream& os) { hierarchy::write_verdicts(os, ranking.verdicts, m.label_names); });
    out.write_with("ranking.tsv", [&](std::ostream& os) { hierarchy::write_ranking(os, ranking, m.label_names); });
    std::size_t amps = 0;
    for (const auto& v : ranking.verdicts) amps += v.is_amp;
    std::cout << amps << " of " << ranking.verdicts.size() << " sequences predicted AMP\n";
    return;
  }
  const auto fm = subset_features(query_features(c, c.onehot, c.max_len), load_subset(c));
  RealMatrix scores;
  if (kind == store::ModelKind::kCascade) {
    scores = cascade::predict_cascade_rows(store::load<cascade::CascadeModel>(c.model), fm.values);
  } else {
    scores = forest::predict_rows(store::load<forest::ForestModel>(c.model), fm.values);
  }
  out.write_with("scores.tsv", [&](std::ostream& os) { write_scores(os, fm, scores); });
  std::cout << "scored " << fm.size() << " sequences\n";
}

struct TaskData {
  seqio::Dataset ds;
  embed::FeatureMatrix features;
  LabelMatrix y;
  std::vector<std::string> names;
};

inline TaskData task_data(const RunConfig& c) {
  const auto all = load_dataset(c, true);
  TaskData d;
  d.ds = task_dataset(c, all);
  d.features = subset_features(raw_features(c, d.ds), load_subset(c));
  const auto tc = task_config(c);
  d.y = eval::task_labels(d.ds, tc.task);
  d.names = tc.task == eval::Task::kBinary ? std::vector<std::string>{"AMP"} : d.ds.label_names;
  check_thresholds(tc.thresholds, d.names.size());
  return d;
}

inline std::string report_tsv(const eval::ExperimentReport& rep) {
  std::ostringstream os;
  eval::write_experiment_tsv(os, rep);
  return os.str();
}

inline void run_cv(const RunConfig& c, const Outputs& out) {
  const auto d = task_data(c);
  std::vector<eval::ExperimentReport> reports;
  for (std::size_t t = 0; t < c.trials; ++t) {
    auto tc = task_config(c);
    tc.seed = c.seed + t;
    const auto plan = eval::make_plan(d.y, tc.task, tc.k, tc.seed);
    reports.push_back(eval::cross_validate(d.features.values, d.y, plan, tc, d.names));
    std::cout << (c.trials > 1 ? "trial " + std::to_string(t + 1) + ": " : "")
              << eval::format_summary(reports.back());
  }
  if (c.trials == 1) {
    out.write("cv_report.tsv", report_tsv(reports[0]));
    return;
  }
  std::ostringstream os;
  os << "trial\tseed\tmacro_auc\tmacro_f1\tsubset_accuracy\n";
  std::vector<double> auc, f1, acc;
  for (std::size_t t = 0; t < reports.size(); ++t) {
    out.write("cv_report_trial" + std::to_string(t + 1) + ".tsv", report_tsv(reports[t]));
    auto& s = reports[t].summary;
    os << (t + 1) << '\t' << (c.seed + t) << '\t'
       << (s["macro_auc"].count ? format_real(s["macro_auc"].mean) : std::string()) << '\t'
       << format_real(s["macro_f1"].mean) << '\t' << format_real(s["subset_accuracy"].mean) << '\n';
    if (s["macro_auc"].count) auc.push_back(s["macro_auc"].mean);
    f1.push_back(s["macro_f1"].mean);
    acc.push_back(s["subset_accuracy"].mean);
  }
  const auto a = eval::summarize(auc), f = eval::summarize(f1), s = eval::summarize(acc);
  os << "mean\t\t" << (a.count ? format_real(a.mean) : std::string()) << '\t' << format_real(f.mean) << '\t'
     << format_real(s.mean) << '\n';
  os << "std\t\t" << (a.count ? format_real(a.stddev) : std::string()) << '\t' << format_real(f.stddev) << '\t'
     << format_real(s.stddev) << '\n';
  out.write("cv_trials.tsv", os.str());
}

inline void run_subset(const RunConfig& c, const Outputs& out) {
  const auto d = task_data(c);
  const auto reports = eval::subset_experiment(d.features.values, d.y, parse_sizes(c.sizes), task_config(c), d.names);
  for (const auto& [size, rep] : reports) {
    std::cout << "subset of " << size << ": " << eval::format_summary(rep);
    out.write("subset_" + std::to_string(size) + ".tsv", report_tsv(rep));
  }
}

inline void run_ablation(const RunConfig& c, const Outputs& out) {
  require(!c.onehot, "ablation picks its own features; use --variant deep-forest-onehot for one-hot");
  const auto all = load_dataset(c, true);
  const auto ds = task_dataset(c, all);
  std::vector<eval::Variant> variants;
  if (c.variant == "all") {
    variants = {eval::Variant::kHmd, eval::Variant::kDeepForestOneHot, eval::Variant::kRandomForestEmbed};
  } else {
    variants = {eval::parse_variant(c.variant)};
  }
  std::optional<embed::FeatureMatrix> emb;
  for (auto v : variants) {
    if (v != eval::Variant::kDeepForestOneHot) {
      require(!c.embeddings.empty(), std::string("variant '") + eval::to_string(v) + "' needs --embeddings");
    }
  }
  if (!c.embeddings.empty()) emb = subset_features(load_embedding_file(c), load_subset(c));
  const auto tc = task_config(c);
  std::ostringstream summary;
  summary << "variant\tmacro_auc_mean\tmacro_auc_std\tmacro_f1_mean\tmacro_f1_std\n";
  for (auto v : variants) {
    auto rep = eval::ablation_run(ds, emb ? &*emb : nullptr, v, tc, c.max_len);
    std::cout << eval::to_string(v) << ": " << eval::format_summary(rep);
    out.write(std::string("ablation_") + eval::to_string(v) + ".tsv", report_tsv(rep));
    const auto& auc = rep.summary["macro_auc"];
    const auto& f1 = rep.summary["macro_f1"];
    summary << eval::to_string(v) << '\t' << (auc.count ? format_real(auc.mean) : "") << '\t'
            << (auc.count ? format_real(auc.stddev) : "") << '\t' << format_real(f1.mean) << '\t'
            << format_real(f1.stddev) << '\n';
  }
  out.write("ablation_summary.tsv", summary.str());
}

inline void run_explain(const RunConfig& c, const Outputs& out) {
  require(!c.model.empty(), "--model is required");
  const auto kind = store::peek_kind(c.model);
  require(kind != store::ModelKind::kForest, "explain needs a cascade or pipeline model");
  cascade::CascadeModel target;
  std::size_t column = 0;
  embed::FeatureMatrix fm;
  auto pick_column = [&](const std::vector<std::string>& names, std::size_t width) {
    if (c.label.empty()) return std::size_t{0};
    for (std::size_t j = 0; j < names.size(); ++j) {
      if (names[j] == c.label) return j;
    }
    std::size_t j;
    if (parse_size(c.label, j) && j < width) return j;
    throw UsageError("--label '" + c.label + "' names no model output");
  };
  if (kind == store::ModelKind::kPipeline) {
    auto m = store::load<hierarchy::PipelineModel>(c.model);
    const bool onehot = m.features.source == embed::FeatureSource::kOneHot;
    fm = hierarchy::prepare_features(m.features, query_features(c, onehot, m.features.one_hot_length));
    if (c.label.empty() || c.label == "AMP") {
      target = std::move(m.binary);
    } else {
      column = pick_column(m.label_names, m.label_names.size());
      target = std::move(m.activity);
    }
  } else {
    target = store::load<cascade::CascadeModel>(c.model);
    fm = subset_features(query_features(c, c.onehot, c.max_len), load_subset(c));
    column = pick_column({}, target.n_labels);
  }
  if (fm.dim() != target.input_dim) {
    throw DataError("model expects " + std::to_string(target.input_dim) + " features, got " +
                    std::to_string(fm.dim()));
  }
  const auto stats = explain::feature_stats(fm.values);
  const std::size_t n = c.max_instances == 0 ? fm.size() : std::min(c.max_instances, fm.size());
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  explain::ExplainConfig ec;
  ec.n_samples = c.samples;
  ec.sigma = c.kernel_width;
  ec.ridge = c.ridge;
  ec.seed = c.seed;
  explain::ScoreFunction score = [&](std::span<const double> v) {
    return cascade::predict_cascade(target, v)[column];
  };
  const auto g = explain::global_weights(score, fm.values.select_rows(rows), stats, ec);
  out.write_with("global_weights.tsv", [&](std::ostream& os) { explain::write_global_weights(os, g); });
  const auto top = explain::select_top_k(g.weights, std::min<std::size_t>(10, g.weights.size()));
  std::cout << "explained output " << column << " over " << g.instances << " instances; top features:";
  for (auto j : top) std::cout << ' ' << j;
  std::cout << '\n';
}

inline void run_select(const RunConfig& c, const Outputs& out) {
  auto in = open_input(c.weights, "--weights");
  const auto g = explain::read_global_weights(in);
  const auto idx = explain::select_top_k(g.weights, c.top_k, c.abs);
  out.write_with("feature_subset.txt", [&](std::ostream& os) { explain::write_indices(os, idx); });
  std::cout << "selected " << idx.size() << " of " << g.weights.size() << " features\n";
}

// ---------------------------------------------------------------------------
// Entry point

inline int run(int argc, char** argv) {
  RunConfig c;
  CLI::App app{"Hierarchical multi-label deep forest for antimicrobial peptide prediction"};
  app.require_subcommand(1, 1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  auto* stats = app.add_subcommand("stats", "Dataset statistics");
  add_dataset(stats, c, true);
  stats->footer("Outputs: stats.tsv");

  auto* dedup = app.add_subcommand("dedup", "Remove identical sequences");
  add_dataset(dedup, c, true);
  dedup->footer("Outputs: dedup.fasta, dedup_labels.tsv (with --labels)");

  auto* train = app.add_subcommand("train", "Train a cascade or the two-level pipeline");
  add_task(train, c, true);
  add_dataset(train, c, true);
  add_features(train, c);
  add_cascade(train, c);
  add_thresholds(train, c);
  train->add_option("--out", c.out, "Model path (default <out-dir>/model.hmdf)");
  train->footer("Outputs: model.hmdf, history.tsv (history_binary.tsv and history_activity.tsv for pipelines)");

  auto* predict = app.add_subcommand("predict", "Score sequences with a saved model");
  predict->add_option("--model", c.model, "Model file");
  add_dataset(predict, c, false);
  add_features(predict, c);
  add_thresholds(predict, c);
  predict->footer("Outputs: predictions.tsv and ranking.tsv (pipeline), scores.tsv (cascade or forest)");

  auto* cv = app.add_subcommand("cv", "Stratified k-fold cross-validation");
  add_task(cv, c, false);
  add_dataset(cv, c, true);
  add_features(cv, c);
  add_cascade(cv, c);
  add_thresholds(cv, c);
  add_cv(cv, c);
  cv->add_option("--trials", c.trials, "Repeat with seeds seed, seed+1, ...")->capture_default_str();
  cv->footer("Outputs: cv_report.tsv, or cv_report_trial<N>.tsv and cv_trials.tsv with --trials > 1");

  auto* subset = app.add_subcommand("subset", "Cross-validation on random subsets");
  add_task(subset, c, false);
  add_dataset(subset, c, true);
  add_features(subset, c);
  add_cascade(subset, c);
  add_thresholds(subset, c);
  add_cv(subset, c);
  subset->add_option("--sizes", c.sizes, "Comma-separated subset sizes")->capture_default_str();
  subset->footer("Outputs: subset_<size>.tsv per size");

  auto* ablation = app.add_subcommand("ablation", "Compare the full model with its baselines");
  add_task(ablation, c, false);
  add_dataset(ablation, c, true);
  add_features(ablation, c);
  add_cascade(ablation, c);
  add_thresholds(ablation, c);
  ablation->add_option("--k", c.k, "Cross-validation folds")->capture_default_str();
  ablation->add_option("--variant", c.variant, "hmd, deep-forest-onehot, random-forest-embed or all")
      ->check(CLI::IsMember({"all", "hmd", "deep-forest-onehot", "random-forest-embed"}))
      ->capture_default_str();
  ablation->footer("Outputs: ablation_<variant>.tsv, ablation_summary.tsv");

  auto* expl = app.add_subcommand("explain", "Global feature weights from local linear surrogates");
  expl->add_option("--model", c.model, "Cascade or pipeline model");
  add_dataset(expl, c, false);
  add_features(expl, c);
  expl->add_option("--label", c.label, "Output to explain: AMP, a label name or a column index");
  expl->add_option("--samples", c.samples, "Perturbations per instance")->capture_default_str();
  expl->add_option("--kernel-width", c.kernel_width, "Proximity kernel width, 0 = 0.75 sqrt(d)")
      ->capture_default_str();
  expl->add_option("--ridge", c.ridge, "Ridge damping")->capture_default_str();
  expl->add_option("--max-instances", c.max_instances, "Explain at most this many rows, 0 = all")
      ->capture_default_str();
  expl->footer("Outputs: global_weights.tsv");

  auto* select = app.add_subcommand("select-features", "Keep the top-k features by global weight");
  select->add_option("--weights", c.weights, "global_weights.tsv from explain");
  select->add_option("--top-k", c.top_k, "Number of features")->capture_default_str();
  select->add_flag("--abs", c.abs, "Rank by absolute weight");
  select->footer("Outputs: feature_subset.txt");

  for (auto* s : app.get_subcommands({})) add_common(s, c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }
  CLI::App* sub = app.get_subcommands().front();
  try {
    if (!c.config.empty()) apply_config_file(sub, c.config);
    validate(c);
    const Outputs out(c.out_dir);
    out.write(sub->get_name() + ".config", "subcommand=" + sub->get_name() + "\n" + sub->config_to_str(true, false));
    const std::string name = sub->get_name();
    if (name == "stats") run_stats(c, out);
    else if (name == "dedup") run_dedup(c, out);
    else if (name == "train") run_train(c, out);
    else if (name == "predict") run_predict(c, sub, out);
    else if (name == "cv") run_cv(c, out);
    else if (name == "subset") run_subset(c, out);
    else if (name == "ablation") run_ablation(c, out);
    else if (name == "explain") run_explain(c, out);
    else run_select(c, out);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\nRun with --help for more information.\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

}  // namespace hmd::cli
