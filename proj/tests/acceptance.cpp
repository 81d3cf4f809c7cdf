// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria (0 when everything passes).

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "hmd/hmd.hpp"
#include "support.hpp"

namespace {

using namespace hmd;

struct Outcome {
  bool pass = true;
  std::string detail;
};

/// Collects the first failure message; later checks are still counted.
class Check {
 public:
  void expect(bool ok, const std::string& what) {
    ++checks_;
    if (!ok && first_.empty()) first_ = what;
    failures_ += !ok;
  }
  Outcome done(const std::string& detail) const {
    if (failures_ == 0) return {true, detail};
    return {false, std::to_string(failures_) + "/" + std::to_string(checks_) + " checks failed, first: " + first_};
  }

 private:
  std::size_t checks_ = 0, failures_ = 0;
  std::string first_;
};

std::string fmt(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

std::string sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

// 1 ------------------------------------------------------------------------
Outcome scanning_arithmetic() {
  Check c;
  cascade::ScanningModel m;
  m.window = 100;
  m.stride = 1;
  m.input_dim = 1280;
  m.n_labels = 1;
  std::vector<double> v(1280, 0.0);
  const auto wins = cascade::scan_windows(v, 100, 1);
  c.expect(wins.size() == 1181, "scan_windows produced " + std::to_string(wins.size()) + " windows");
  c.expect(m.windows() == 1181, "windows() = " + std::to_string(m.windows()));
  c.expect(m.output_dim() == 9448, "output_dim() = " + std::to_string(m.output_dim()));
  c.expect(wins.back().data() == v.data() + 1180 && wins.back().size() == 100, "last window misplaced");
  return c.done("windows=" + std::to_string(m.windows()) + " dim=" + std::to_string(m.output_dim()));
}

// 2 ------------------------------------------------------------------------
Outcome macro_auc_oracle() {
  Check c;
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    RealMatrix s(200, 11);
    LabelMatrix t(200, 11);
    const bool coarse = seed % 2 == 0;  // coarse scores force ties
    for (std::size_t j = 0; j < 11; ++j) {
      const double rate = 0.05 + 0.9 * u(rng);
      for (std::size_t i = 0; i < 200; ++i) {
        t(i, j) = u(rng) < rate ? 1 : 0;
        const double raw = 0.3 * t(i, j) + u(rng);
        s(i, j) = coarse ? std::round(raw * 10.0) / 10.0 : raw;
      }
    }
    const double got = metrics::macro_auc(s, t).macro;
    const double want = testing::pair_count_macro_auc(s, t);
    worst = std::max(worst, std::abs(got - want));
    c.expect(std::abs(got - want) <= 1e-12, "seed " + std::to_string(seed) + ": " + fmt(got, 15) + " vs " +
                                                 fmt(want, 15));
  }
  return c.done("100 seeds, max |diff| = " + sci(worst));
}

// 3 ------------------------------------------------------------------------
Outcome gini_correctness() {
  Check c;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> p(1 + rng() % 11);
    for (auto& v : p) v = u(rng);
    double direct = 0.0;
    for (double q : p) direct += 1.0 - q * q - (1.0 - q) * (1.0 - q);
    const double got = forest::multi_label_gini(p);
    worst = std::max(worst, std::abs(got - direct));
    c.expect(std::abs(got - direct) <= 1e-14, "trial " + std::to_string(trial));
  }
  std::size_t pure = 0;
  for (std::size_t m = 1; m <= 11; ++m) {
    for (std::size_t code = 0; code < (std::size_t{1} << m); code += 1 + (m > 8 ? 7 : 0)) {
      std::vector<double> p(m);
      for (std::size_t j = 0; j < m; ++j) p[j] = (code >> j) & 1 ? 1.0 : 0.0;
      c.expect(forest::multi_label_gini(p) == 0.0, "pure distribution with nonzero impurity");
      ++pure;
    }
  }
  return c.done("1000 random, max |diff| = " + sci(worst) + "; " + std::to_string(pure) + " pure = 0");
}

// 4 ------------------------------------------------------------------------
Outcome confidence_brute_force() {
  Check c;
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  std::size_t cases = 0;
  for (std::size_t m = 1; m <= 12; ++m) {
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<double> p(m);
      for (auto& v : p) {
        v = u(rng);
        if (trial % 10 == 0) v = std::round(v * 4.0) / 4.0;  // include 0, 1 and repeats
      }
      const double want = testing::product_form_confidence(p);
      const double got = cascade::label_confidence(p);
      worst = std::max(worst, std::abs(got - want));
      c.expect(std::abs(got - want) <= 1e-10, "m=" + std::to_string(m) + " trial " + std::to_string(trial));
      const double log_conf = cascade::log_label_confidence(p);
      for (int shuffle = 0; shuffle < 3; ++shuffle) {
        std::shuffle(p.begin(), p.end(), rng);
        c.expect(cascade::log_label_confidence(p) == log_conf, "not permutation invariant at m=" + std::to_string(m));
      }
      ++cases;
    }
  }
  return c.done(std::to_string(cases) + " cases m<=12, max |diff| = " + sci(worst) + ", permutation invariant");
}

// 5 ------------------------------------------------------------------------
Outcome growth_contract() {
  Check c;
  const double grid[3] = {0.6, 0.7, 0.8};
  auto s = testing::linear_labels(18, 3, 2, 5);
  std::size_t histories = 0;
  for (std::size_t len = 1; len <= 8; ++len) {
    std::size_t total = 1;
    for (std::size_t i = 0; i < len; ++i) total *= 3;
    for (std::size_t code = 0; code < total; ++code) {
      std::vector<double> stream;
      for (std::size_t i = 0, k = code; i < len; ++i, k /= 3) stream.push_back(grid[k % 3]);
      // Values after the history never improve, so every stream terminates.
      while (stream.size() < 25) stream.push_back(0.0);
      const auto [levels, best] = testing::growth_oracle(stream, 20, 3);
      const std::string tag = "history " + std::to_string(len) + "/" + std::to_string(code);

      cascade::LayerGrowth g(20, 3);
      std::size_t pushed = 0;
      while (!g.push(stream[pushed++])) {
      }
      c.expect(pushed == levels && g.best_layer() == best, tag + ": LayerGrowth disagrees");

      cascade::CascadeConfig cfg;
      cfg.n_trees = 1;
      cfg.threads = 1;
      cfg.seed = code;
      cfg.measure_override = [&](std::size_t level, double) { return stream[level - 1]; };
      const auto m = cascade::train_cascade(s.x, s.y, cfg);
      c.expect(m.levels.size() == levels && m.best_layer == best, tag + ": train_cascade disagrees");
      c.expect(m.history.size() == m.levels.size(), tag + ": history length");
      ++histories;
    }
  }
  // A strictly improving stream runs to the depth limit.
  cascade::LayerGrowth up(20, 3);
  std::size_t n = 0;
  while (!up.push(double(n))) ++n;
  c.expect(up.history().size() == 20 && up.best_layer() == 20 && up.stop_reason() == "max_layers",
           "improving stream did not stop at 20");
  return c.done(std::to_string(histories) + " histories via LayerGrowth and train_cascade");
}

// 6 ------------------------------------------------------------------------
Outcome reuse_monotonicity() {
  Check c;
  std::size_t reused = 0, slots = 0;
  for (std::uint64_t run = 0; run < 50; ++run) {
    std::mt19937_64 rng(run);
    const std::size_t n = 40 + rng() % 41, d = 4 + rng() % 6, l = 1 + rng() % 4;
    auto s = testing::linear_labels(n, d, l, 1000 + run);
    cascade::CascadeConfig cfg;
    cfg.n_trees = 3 + rng() % 5;
    cfg.max_layers = 6;
    cfg.threads = 1;
    cfg.seed = run;
    cfg.measure_override = [](std::size_t level, double) { return double(level); };  // always grow
    testing::WarningLog quiet;
    const auto m = cascade::train_cascade(s.x, s.y, cfg);
    for (std::size_t t = 1; t < m.levels.size(); ++t) {
      for (std::size_t j = 0; j < l; ++j) {
        c.expect(m.levels[t].log_confidence[j] >= m.levels[t - 1].log_confidence[j],
                 "run " + std::to_string(run) + " level " + std::to_string(t + 1) + " label " + std::to_string(j));
        reused += m.levels[t].reused[j];
        ++slots;
      }
    }
  }
  return c.done("50 runs, " + std::to_string(reused) + "/" + std::to_string(slots) + " label slices reused");
}

// 7 ------------------------------------------------------------------------
Outcome end_to_end() {
  Check c;
  const auto s = testing::linear_labels(600, 40, 5, 2026);
  const auto clean = testing::linear_labels(600, 40, 5, 2026, false);
  std::size_t flipped = 0;
  for (std::size_t i = 0; i < 600; ++i) {
    for (std::size_t j = 0; j < 5; ++j) flipped += s.y(i, j) != clean.y(i, j);
  }
  const double noise = double(flipped) / 3000.0;
  c.expect(noise > 0.07 && noise < 0.13, "label noise " + fmt(noise, 3) + " is not near 10%");
  eval::TaskConfig cfg;
  cfg.task = eval::Task::kMultilabel;
  cfg.cascade.n_trees = 100;
  cfg.seed = 17;
  cfg.k = 5;
  const auto plan = eval::make_plan(s.y, cfg.task, cfg.k, cfg.seed);
  std::vector<double> aucs;
  std::string layers;
  for (std::size_t f = 0; f < plan.folds.size(); ++f) {
    const auto train = plan.train_rows(f);
    const auto& test = plan.folds[f];
    const auto model = eval::fit(s.x.select_rows(train), s.y.select_rows(train), cfg, derive_seed(cfg.seed, f));
    const auto& m = *model.cascade;
    c.expect(m.history[m.best_layer - 1] >= m.history[0], "fold " + std::to_string(f) + ": best below level 1");
    for (double h : m.history) c.expect(h <= m.history[m.best_layer - 1], "best layer is not the argmax");
    const auto scores = model.score(s.x.select_rows(test));
    aucs.push_back(metrics::macro_auc(scores, s.y.select_rows(test)).macro);
    layers += (f ? "," : "") + std::to_string(m.best_layer) + "/" + std::to_string(m.levels.size());
  }
  const double mean = eval::summarize(aucs).mean;
  c.expect(mean >= 0.90, "held-out macro-AUC " + fmt(mean));
  return c.done("label noise " + fmt(noise, 3) + ", held-out macro-AUC " + fmt(mean) +
                " (>= 0.90), best/levels per fold " + layers);
}

// 8 ------------------------------------------------------------------------
Outcome hierarchy_gating() {
  Check c;
  auto s = testing::linear_labels(160, 10, 4, 8);
  seqio::Dataset full;
  full.label_names = {"l1", "l2", "l3"};
  embed::FeatureMatrix ff;
  ff.values = s.x;
  for (std::size_t i = 0; i < 160; ++i) {
    const bool amp = s.y(i, 3) != 0;
    std::optional<std::vector<std::uint8_t>> act;
    if (amp) act = std::vector<std::uint8_t>{s.y(i, 0), s.y(i, 1), s.y(i, 2)};
    full.records.push_back({"r" + std::to_string(i), "KLK", amp, act});
    ff.ids.push_back("r" + std::to_string(i));
  }
  const auto pos = seqio::positives(full);
  hierarchy::PipelineConfig pc;
  pc.binary.n_trees = pc.activity.n_trees = 20;
  pc.binary.threads = pc.activity.threads = 1;
  pc.binary.max_layers = pc.activity.max_layers = 3;
  auto model = hierarchy::train_pipeline(full, ff, pos, embed::join(pos, ff), pc);

  embed::FeatureMatrix queries;
  queries.values = RealMatrix(1000, 10);
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  for (std::size_t i = 0; i < 1000; ++i) {
    queries.ids.push_back("q" + std::to_string(i));
    for (std::size_t j = 0; j < 10; ++j) queries.values(i, j) = u(rng);
  }
  const std::vector<double> taus{0.05, 0.2, 0.35, 0.5, 0.65, 0.8, 0.95, 1.0};
  std::vector<bool> was_amp(1000, true);
  std::size_t gated_total = 0, amp_at_half = 0;
  for (double tau : taus) {
    model.amp_threshold = tau;
    const auto verdicts = hierarchy::predict_batch(model, queries);
    for (std::size_t i = 0; i < 1000; ++i) {
      const auto& v = verdicts[i];
      if (!v.is_amp) {
        c.expect(!v.activity_scores && !v.activity_labels, "gated verdict carries activity fields");
        ++gated_total;
      } else {
        c.expect(v.activity_scores && v.activity_labels, "AMP verdict without activity fields");
      }
      c.expect(!v.is_amp || was_amp[i], "raising the gate flipped a non-AMP to AMP");
      was_amp[i] = v.is_amp;
      if (tau == 0.5) amp_at_half += v.is_amp;
    }
    if (tau == 1.0) {
      for (const auto& v : verdicts) c.expect(!v.is_amp, "gate of 1 let a sequence through");
    }
  }
  return c.done(std::to_string(taus.size()) + " gates x 1000 predictions; " + std::to_string(amp_at_half) +
                " AMP at 0.5, " + std::to_string(gated_total) + " gated verdicts checked");
}

// 9 ------------------------------------------------------------------------
Outcome explainer_fidelity() {
  Check c;
  const std::size_t d = 200;
  std::mt19937_64 rng(9);
  std::vector<std::size_t> all(d);
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::shuffle(all.begin(), all.end(), rng);
  const std::set<std::size_t> planted(all.begin(), all.begin() + 10);
  std::vector<double> w(d, 0.0);
  std::uniform_real_distribution<double> mag(1.0, 2.0);
  for (auto j : planted) w[j] = mag(rng);
  explain::ScoreFunction score = [&](std::span<const double> v) {
    double z = 0.0;
    for (auto j : planted) z += w[j] * v[j];
    return z;
  };
  const auto train = testing::random_matrix(300, d, 10);
  const auto stats = explain::feature_stats(train);
  explain::ExplainConfig cfg;
  cfg.seed = 11;
  cfg.n_samples = 1000;
  const auto g = explain::global_weights(score, train.select_rows(std::vector<std::size_t>{0, 1, 2, 3, 4}), stats, cfg);
  const auto top = explain::select_top_k(g.weights, 20);
  std::size_t hits = 0;
  for (auto j : top) hits += planted.count(j);
  c.expect(hits >= 8, "top-20 recovered only " + std::to_string(hits) + " planted features");

  // Closed-form check of the local surrogate for small dimensions.
  double worst = 0.0;
  for (std::size_t dim = 1; dim <= 10; ++dim) {
    const auto x = testing::random_matrix(50, dim, 100 + dim);
    const auto st = explain::feature_stats(x);
    explain::ScoreFunction f = [](std::span<const double> v) {
      double z = 0.0;
      for (std::size_t j = 0; j < v.size(); ++j) z += std::sin(double(j + 1) * v[j]);
      return 1.0 / (1.0 + std::exp(-z));
    };
    explain::ExplainConfig ec;
    ec.seed = dim;
    ec.n_samples = 300;
    const auto local = explain::local_weights(f, x.row(0), st, ec);
    Rng r(ec.seed);
    const auto p = explain::perturb(x.row(0), ec.n_samples, st, explain::default_sigma(dim), r);
    std::vector<double> y(ec.n_samples);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(p.samples.row(i));
    const auto ref = testing::ridge_oracle(explain::standardize(p.samples, st), y, p.weights, ec.ridge);
    worst = std::max(worst, std::abs(local.intercept - ref[0]));
    for (std::size_t j = 0; j < dim; ++j) worst = std::max(worst, std::abs(local.weights[j] - ref[j + 1]));
  }
  c.expect(worst <= 1e-8, "local weights differ from the closed form by " + sci(worst));
  return c.done(std::to_string(hits) + "/10 planted in top-20; ridge max |diff| = " + sci(worst) + " for d<=10");
}

// 10 -----------------------------------------------------------------------
template <class M, class Predict>
void check_persistence(Check& c, const std::string& what, const std::function<M()>& train, std::size_t dim,
                       Predict predict) {
  testing::TempDir dir;
  const auto a = train(), b = train();
  store::save(dir / "a.hmdf", a);
  store::save(dir / "b.hmdf", b);
  const auto bytes = store::read_file(dir / "a.hmdf");
  c.expect(bytes == store::read_file(dir / "b.hmdf"), what + ": files differ for the same seed");
  const auto back = store::load<M>(dir / "a.hmdf");
  const auto probe = testing::random_matrix(100, dim, 1234);
  for (std::size_t i = 0; i < 100; ++i) {
    const std::vector<double> x(probe.row(i).begin(), probe.row(i).end());
    const auto p = predict(a, x), q = predict(back, x);
    c.expect(p.size() == q.size() && std::memcmp(p.data(), q.data(), p.size() * sizeof(double)) == 0,
             what + ": prediction changed after reload");
  }
}

Outcome determinism_persistence() {
  Check c;
  const auto s = testing::linear_labels(80, 6, 3, 10);
  check_persistence<forest::ForestModel>(
      c, "forest",
      [&] {
        forest::ForestConfig fc;
        fc.n_trees = 25;
        return forest::train_forest(s.x, s.y, fc, 5);
      },
      6, [](const forest::ForestModel& m, const std::vector<double>& x) { return forest::predict_forest(m, x); });
  check_persistence<cascade::CascadeModel>(
      c, "cascade",
      [&] {
        cascade::CascadeConfig cc;
        cc.n_trees = 10;
        cc.max_layers = 4;
        cc.seed = 5;
        return cascade::train_cascade(s.x, s.y, cc);
      },
      6, [](const cascade::CascadeModel& m, const std::vector<double>& x) { return cascade::predict_cascade(m, x); });
  check_persistence<hierarchy::PipelineModel>(
      c, "pipeline",
      [&] {
        seqio::Dataset full;
        full.label_names = {"a", "b"};
        embed::FeatureMatrix ff;
        ff.values = s.x;
        for (std::size_t i = 0; i < 80; ++i) {
          const bool amp = s.y(i, 2) != 0;
          std::optional<std::vector<std::uint8_t>> act;
          if (amp) act = std::vector<std::uint8_t>{s.y(i, 0), s.y(i, 1)};
          full.records.push_back({"r" + std::to_string(i), "GIGK", amp, act});
          ff.ids.push_back("r" + std::to_string(i));
        }
        const auto pos = seqio::positives(full);
        hierarchy::PipelineConfig pc;
        pc.binary.n_trees = pc.activity.n_trees = 10;
        pc.binary.max_layers = pc.activity.max_layers = 3;
        pc.binary.seed = 1;
        pc.activity.seed = 2;
        return hierarchy::train_pipeline(full, ff, pos, embed::join(pos, ff), pc);
      },
      6, [](const hierarchy::PipelineModel& m, const std::vector<double>& x) {
        const auto v = hierarchy::predict(m, x);
        std::vector<double> out{v.amp_score};
        if (v.activity_scores) out.insert(out.end(), v.activity_scores->begin(), v.activity_scores->end());
        return out;
      });
  return c.done("forest, cascade, pipeline: byte-identical files, 100 bitwise-equal predictions each");
}

// 11 -----------------------------------------------------------------------
Outcome fold_validity() {
  Check c;
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 10 + rng() % 491, k = 2 + rng() % 9;
    const double rate = double(rng() % 1001) / 1000.0;
    std::vector<std::uint8_t> y(n);
    for (auto& v : y) v = double(rng() % 100000) / 100000.0 < rate;
    const auto plan = eval::stratified_folds(y, k, std::uint64_t(trial));
    std::vector<int> seen(n, 0);
    std::size_t lo_pos = n, hi_pos = 0, lo_neg = n, hi_neg = 0;
    for (const auto& f : plan.folds) {
      std::size_t pos = 0;
      for (auto i : f) {
        if (i < n) ++seen[i];
        pos += i < n && y[i];
      }
      lo_pos = std::min(lo_pos, pos);
      hi_pos = std::max(hi_pos, pos);
      lo_neg = std::min(lo_neg, f.size() - pos);
      hi_neg = std::max(hi_neg, f.size() - pos);
    }
    const std::string tag = "dataset " + std::to_string(trial);
    c.expect(plan.folds.size() == k, tag + ": fold count");
    c.expect(std::all_of(seen.begin(), seen.end(), [](int v) { return v == 1; }), tag + ": not a partition");
    c.expect(hi_pos - lo_pos <= 1 && hi_neg - lo_neg <= 1, tag + ": strata unbalanced");
    c.expect(plan == eval::stratified_folds(y, k, std::uint64_t(trial)), tag + ": plan not reproducible");
  }
  return c.done("100 random datasets: partitions, strata within +/-1, reproducible");
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    Outcome (*run)();
  };
  const Criterion criteria[] = {
      {"scanning arithmetic", scanning_arithmetic},
      {"macro-AUC oracle equivalence", macro_auc_oracle},
      {"Gini correctness", gini_correctness},
      {"label confidence vs brute force", confidence_brute_force},
      {"cascade growth contract", growth_contract},
      {"feature-reuse monotonicity", reuse_monotonicity},
      {"end-to-end synthetic recovery", end_to_end},
      {"hierarchy gating", hierarchy_gating},
      {"explainer fidelity", explainer_fidelity},
      {"determinism and persistence", determinism_persistence},
      {"fold-plan validity", fold_validity},
  };
  int failed = 0;
  for (std::size_t i = 0; i < std::size(criteria); ++i) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failed += !o.pass;
    std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << (i + 1) << ". " << criteria[i].name << ": " << o.detail << " ("
              << fmt(secs, 2) << " s)" << std::endl;
  }
  std::cout << (std::size(criteria) - std::size_t(failed)) << "/" << std::size(criteria) << " criteria passed"
            << std::endl;
  return failed;
}
