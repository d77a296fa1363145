#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <json.hpp>

#include "shortcutlab/metrics.hpp"
#include "testutil.hpp"

using namespace shortcutlab;

namespace {

// Test-local table builder that bypasses rendering entirely.
Sample row(const DatasetConfig& cfg, int y, std::vector<int> cues) {
  Sample s;
  s.y = y;
  s.cue_labels = std::move(cues);
  s.group = group_of(cfg, y, s.cue_labels);
  return s;
}

Matrix two_class_probs(const std::vector<double>& p_class0) {
  Matrix m(p_class0.size(), 2);
  for (std::size_t i = 0; i < p_class0.size(); ++i) {
    m(i, 0) = p_class0[i];
    m(i, 1) = 1.0 - p_class0[i];
  }
  return m;
}

DatasetConfig k_config(std::size_t k) {
  DatasetConfig cfg;
  if (k == 3) cfg.cues.push_back({"watermark", 0.95});
  return cfg;
}

bool same_value(double a, double b) {
  if (std::isnan(a) || std::isnan(b)) return std::isnan(a) && std::isnan(b);
  return a == b;
}

// ---------------------------------------------------------------------------
// Brute-force recomputations, written as plain row scans that share nothing
// with the library implementations.
// ---------------------------------------------------------------------------

double bf_group_acc(const PredictionTable& t, int g) {
  std::size_t hit = 0, n = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t.group[i] != g) continue;
    ++n;
    if (t.pred[i] == t.y[i]) ++hit;
  }
  if (n == 0) return std::numeric_limits<double>::quiet_NaN();
  return double(hit) / double(n);
}

double bf_id(const DatasetConfig& cfg, const PredictionTable& t) {
  std::vector<double> freq = train_group_frequencies(cfg);
  double s = 0.0;
  for (std::size_t g = 0; g < freq.size(); ++g) {
    if (freq[g] == 0.0) continue;
    s += freq[g] * bf_group_acc(t, int(g));
  }
  return s;
}

// Accuracy over rows whose cue-agreement bits equal `bits`.
double bf_bits_acc(const DatasetConfig& cfg, const PredictionTable& t, int bits) {
  std::size_t hit = 0, n = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    int b = 0;
    for (std::size_t c = 0; c < cfg.cues.size(); ++c)
      if (t.cue_labels[i][c] == t.y[i]) b |= 1 << c;
    if (b != bits) continue;
    ++n;
    if (t.pred[i] == t.y[i]) ++hit;
  }
  return double(hit) / double(n);
}

double bf_worst(const DatasetConfig& cfg, const PredictionTable& t) {
  double w = 2.0;
  for (std::size_t g = 0; g < num_groups(cfg); ++g) {
    double a = bf_group_acc(t, int(g));
    if (!std::isnan(a)) w = std::min(w, a);
  }
  return w;
}

double bf_match_fraction(const PredictionTable& t, const std::vector<int>& labels) {
  std::size_t hit = 0;
  for (std::size_t i = 0; i < t.size(); ++i) hit += t.pred[i] == labels[i];
  return double(hit) / double(t.size());
}

}  // namespace

TEST_CASE("make_table validates probabilities and group keys") {
  DatasetConfig cfg = k_config(2);
  std::vector<Sample> rows = {row(cfg, 0, {0, 0}), row(cfg, 1, {0, 1})};
  Matrix probs = two_class_probs({0.9, 0.2});
  PredictionTable t = make_table(cfg, rows, probs, "val");
  CHECK(t.pred == std::vector<int>{0, 1});
  CHECK(t.group[0] == 3);

  Matrix bad = probs;
  bad(0, 0) = 0.95;
  CHECK_THROWS_AS(make_table(cfg, rows, bad, "val"), DataError);

  std::vector<Sample> wrong = rows;
  wrong[0].group = 1;
  CHECK_THROWS_AS(make_table(cfg, wrong, probs, "val"), DataError);

  // Argmax ties resolve to the lower class.
  Matrix tie = two_class_probs({0.5, 0.5});
  PredictionTable tt = make_table(cfg, rows, tie, "val");
  CHECK(tt.pred == std::vector<int>{0, 0});
}

TEST_CASE("per-group accuracy counts exact fractions") {
  DatasetConfig cfg = k_config(2);
  std::vector<Sample> rows = {row(cfg, 0, {0, 0}), row(cfg, 0, {0, 0}), row(cfg, 1, {1, 1})};
  // First two rows share group 3; predictions alternate.
  PredictionTable t = make_table(cfg, rows, two_class_probs({0.9, 0.1, 0.1}), "val");
  GroupStats gs = per_group_accuracy(cfg, t);
  CHECK(gs.total[3] == 2);
  CHECK(gs.acc[3] == 0.5);
  CHECK(gs.acc[7] == 1.0);
  CHECK_FALSE(gs.defined(0));
  CHECK(std::isnan(gs.acc[0]));
}

TEST_CASE("id_accuracy worked example and validation") {
  std::vector<double> acc = {1.0, 1.0, 1.0, 0.0};
  std::vector<double> w = {0.9025, 0.0475, 0.0475, 0.0025};
  double id = id_accuracy(acc, w);
  // Bit-exact against the defining arithmetic; the decimal 0.9975 is one ulp
  // away from that sum in binary64.
  CHECK(id == (0.9025 * 1.0 + 0.0475 * 1.0) + 0.0475 * 1.0);
  CHECK(std::abs(id - 0.9975) <= 1e-15);

  // Uniform weights reduce to the plain mean.
  std::vector<double> uniform(4, 0.25);
  CHECK(std::abs(id_accuracy(acc, uniform) - 0.75) <= 1e-12);

  CHECK(id_accuracy({1.0, 1.0, 1.0, 1.0}, w) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(id_accuracy({1.0}, w), ConfigError);
  CHECK_THROWS_AS(id_accuracy(acc, {0.5, 0.5, 0.5, 0.5}), ConfigError);
  CHECK_THROWS_AS(id_accuracy(acc, {-0.5, 0.5, 0.5, 0.5}), ConfigError);
  std::vector<double> with_nan = acc;
  with_nan[1] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(id_accuracy(with_nan, w), DataError);
  // Zero-weight entries may be undefined.
  CHECK(id_accuracy(with_nan, {0.5, 0.0, 0.25, 0.25}) == 0.5 * 1.0 + 0.25 * 1.0 + 0.25 * 0.0);
}

TEST_CASE("uniform accuracy gives zero gaps") {
  DatasetConfig cfg = k_config(2);
  std::vector<Sample> rows;
  std::vector<double> p;
  // Four samples per group: three correct, one wrong, accuracy 0.75 everywhere.
  for (int y = 0; y < 2; ++y)
    for (int bits = 0; bits < 4; ++bits) {
      std::vector<int> cues = {(bits & 1) ? y : 1 - y, (bits & 2) ? y : 1 - y};
      for (int i = 0; i < 4; ++i) {
        rows.push_back(row(cfg, y, cues));
        bool correct = i < 3;
        int pred = correct ? y : 1 - y;
        p.push_back(pred == 0 ? 0.9 : 0.1);
      }
    }
  PredictionTable t = make_table(cfg, rows, two_class_probs(p), "test");
  MetricsReport r = evaluate(cfg, t);
  CHECK(std::abs(r.id_acc - 0.75) <= 1e-12);
  CHECK(std::abs(r.gaps.cue_gaps[0]) <= 1e-12);
  CHECK(std::abs(r.gaps.cue_gaps[1]) <= 1e-12);
  CHECK(std::abs(r.gaps.combined_gap) <= 1e-12);
  CHECK(r.worst.acc == 0.75);
  CHECK_FALSE(r.worst.skipped_empty);
}

TEST_CASE("worst group skips empty groups and flags them") {
  GroupStats gs;
  gs.correct = {1, 0, 9, 2};
  gs.total = {2, 0, 10, 4};
  gs.acc = {0.5, std::numeric_limits<double>::quiet_NaN(), 0.9, 0.5};
  WorstGroup w = worst_group(gs);
  CHECK(w.acc == 0.5);
  CHECK(w.group == 0);  // tie with group 3 resolves to the lower index
  CHECK(w.skipped_empty);

  GroupStats empty;
  empty.correct = {0};
  empty.total = {0};
  empty.acc = {std::numeric_limits<double>::quiet_NaN()};
  CHECK_THROWS_AS(worst_group(empty), DataError);
}

TEST_CASE("perturbation gaps: identity and a hand-built flip") {
  DatasetConfig cfg = k_config(2);
  std::vector<Sample> rows;
  std::vector<double> p_clean;
  for (int i = 0; i < 10; ++i) {
    int y = i < 5 ? 0 : 1;
    rows.push_back(row(cfg, y, {y, y}));
    p_clean.push_back(y == 0 ? 0.9 : 0.1);
  }
  PredictionTable clean = make_table(cfg, rows, two_class_probs(p_clean), "test");

  PerturbationBlock zero = perturbation_gaps(clean, clean, 0);
  CHECK(zero.overall_gap == 0.0);
  CHECK(zero.class_gap == 0.0);
  CHECK(zero.delta_prob == 0.0);
  CHECK(zero.delta_prob_conditional == 0.0);

  // Flip one class-0 row to a confident class-1 prediction.
  std::vector<double> p_pert = p_clean;
  p_pert[2] = 0.2;
  PredictionTable pert = make_table(cfg, rows, two_class_probs(p_pert), "test");
  PerturbationBlock b = perturbation_gaps(clean, pert, 0);
  CHECK(std::abs(b.overall_gap - (-0.1)) <= 1e-12);
  CHECK(std::abs(b.class_gap - (-0.2)) <= 1e-12);
  CHECK(std::abs(b.delta_prob - (-0.07)) <= 1e-12);
  CHECK(std::abs(b.delta_prob_conditional - (-0.14)) <= 1e-12);

  std::vector<Sample> other = rows;
  std::swap(other[0], other[9]);
  PredictionTable shuffled = make_table(cfg, other, two_class_probs(p_clean), "test");
  CHECK_THROWS_AS(perturbation_gaps(clean, shuffled, 0), DataError);
  CHECK_THROWS_AS(perturbation_gaps(clean, pert, 5), ConfigError);
}

TEST_CASE("cue alignment trivial identities") {
  DatasetConfig cfg = k_config(2);
  std::vector<Sample> rows;
  std::vector<double> p;
  // Balanced 8 rows; prediction always equals the background label.
  for (int y = 0; y < 2; ++y)
    for (int bg = 0; bg < 2; ++bg)
      for (int co = 0; co < 2; ++co) {
        rows.push_back(row(cfg, y, {bg, co}));
        p.push_back(bg == 0 ? 0.8 : 0.2);
      }
  PredictionTable t = make_table(cfg, rows, two_class_probs(p), "val");
  AlignmentRow a = cue_alignment(cfg, t);
  CHECK(a.cues[0] == 1.0);
  CHECK(a.target == 0.5);
  CHECK(a.cues[1] == 0.5);
}

TEST_CASE("random predictions on a large balanced table align near one half") {
  DatasetConfig cfg = k_config(2);
  RngStream rng(404, stream_id("test/align"));
  std::vector<Sample> rows;
  std::vector<double> p;
  for (int i = 0; i < 10000; ++i) {
    int y = int(rng.next_index(2));
    rows.push_back(row(cfg, y, {int(rng.next_index(2)), int(rng.next_index(2))}));
    p.push_back(rng.next_uniform());
  }
  PredictionTable t = make_table(cfg, rows, two_class_probs(p), "val");
  AlignmentRow a = cue_alignment(cfg, t);
  CHECK(std::abs(a.target - 0.5) <= 0.02);
  CHECK(std::abs(a.cues[0] - 0.5) <= 0.02);
  CHECK(std::abs(a.cues[1] - 0.5) <= 0.02);
}

TEST_CASE("every metric matches brute force on randomized 64-row tables") {
  RngStream rng(2024, stream_id("test/bruteforce"));
  for (int trial = 0; trial < 120; ++trial) {
    std::size_t k = trial % 3 == 2 ? 3 : 2;
    DatasetConfig cfg = k_config(k);
    std::size_t groups = num_groups(cfg);

    std::vector<Sample> rows;
    std::vector<double> p0, p0_pert;
    std::vector<int> pred_override, pred_override_pert;
    for (std::size_t i = 0; i < 64; ++i) {
      int y;
      std::vector<int> cues(k);
      if (i < groups) {
        // Force full group coverage so no weighted group is empty.
        y = int(i >> k);
        for (std::size_t c = 0; c < k; ++c) cues[c] = (i >> c) & 1 ? y : 1 - y;
      } else {
        y = int(rng.next_index(2));
        for (std::size_t c = 0; c < k; ++c) cues[c] = int(rng.next_index(2));
      }
      rows.push_back(row(cfg, y, cues));
      p0.push_back(rng.next_uniform(0.01, 0.99));
      p0_pert.push_back(rng.next_uniform(0.01, 0.99));
    }
    PredictionTable t = make_table(cfg, rows, two_class_probs(p0), "test");
    PredictionTable tp = make_table(cfg, rows, two_class_probs(p0_pert), "test");

    GroupStats gs = per_group_accuracy(cfg, t);
    for (std::size_t g = 0; g < groups; ++g)
      CHECK(same_value(gs.acc[g], bf_group_acc(t, int(g))));

    MetricsReport r = evaluate(cfg, t);
    CHECK(r.id_acc == bf_id(cfg, t));

    int all_bits = int((1u << k) - 1);
    for (std::size_t c = 0; c < k; ++c) {
      double bf = bf_bits_acc(cfg, t, all_bits & ~(1 << c)) - bf_id(cfg, t);
      CHECK(r.gaps.cue_gaps[c] == bf);
    }
    CHECK(r.gaps.combined_gap == bf_bits_acc(cfg, t, 0) - bf_id(cfg, t));
    CHECK(r.worst.acc == bf_worst(cfg, t));

    CHECK(r.alignment.target == bf_match_fraction(t, t.y));
    for (std::size_t c = 0; c < k; ++c) {
      std::vector<int> labels;
      for (std::size_t i = 0; i < t.size(); ++i) labels.push_back(t.cue_labels[i][c]);
      CHECK(r.alignment.cues[c] == bf_match_fraction(t, labels));
    }

    PerturbationBlock b = perturbation_gaps(t, tp, 0);
    double acc_c = bf_match_fraction(t, t.y), acc_p = bf_match_fraction(tp, tp.y);
    CHECK(b.overall_gap == acc_p - acc_c);
    double s_c = 0, s_p = 0, sc_c = 0, sc_p = 0, hit_c = 0, hit_p = 0;
    std::size_t n0 = 0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      s_c += t.probs(i, 0);
      s_p += tp.probs(i, 0);
      if (t.y[i] == 0) {
        ++n0;
        sc_c += t.probs(i, 0);
        sc_p += tp.probs(i, 0);
        hit_c += t.pred[i] == 0;
        hit_p += tp.pred[i] == 0;
      }
    }
    CHECK(b.class_gap == hit_p / double(n0) - hit_c / double(n0));
    CHECK(b.delta_prob == s_p / 64.0 - s_c / 64.0);
    CHECK(b.delta_prob_conditional == sc_p / double(n0) - sc_c / double(n0));

    // Row order invariance for the count-based metrics.
    if (trial < 10) {
      std::vector<std::size_t> perm(64);
      for (std::size_t i = 0; i < 64; ++i) perm[i] = i;
      rng.shuffle(perm);
      std::vector<Sample> shuffled;
      std::vector<double> ps;
      for (std::size_t i : perm) {
        shuffled.push_back(rows[i]);
        ps.push_back(p0[i]);
      }
      MetricsReport r2 = evaluate(cfg, make_table(cfg, shuffled, two_class_probs(ps), "test"));
      CHECK(r2.id_acc == r.id_acc);
      CHECK(r2.gaps.combined_gap == r.gaps.combined_gap);
      CHECK(r2.worst.acc == r.worst.acc);
      CHECK(r2.alignment.target == r.alignment.target);
    }
  }
}

TEST_CASE("report serialization round-trips the headline numbers") {
  DatasetConfig cfg = k_config(2);
  std::vector<Sample> rows;
  std::vector<double> p;
  for (std::size_t i = 0; i < 16; ++i) {
    int y = int(i % 2);
    rows.push_back(row(cfg, y, {int(i / 8), int(i / 4) % 2}));
    p.push_back(y == 0 ? 0.7 : 0.3);
  }
  PredictionTable t = make_table(cfg, rows, two_class_probs(p), "test");
  MetricsReport r = evaluate(cfg, t);
  r.has_perturbation = true;
  r.perturbation.overall_gap = -0.25;

  nlohmann::json j = nlohmann::json::parse(report_json(cfg, r));
  CHECK(j["id_acc"].get<double>() == r.id_acc);
  CHECK(j["gaps"]["background"].get<double>() == r.gaps.cue_gaps[0]);
  CHECK(j["perturbation"]["overall_gap"].get<double>() == -0.25);
  CHECK(j["alignment"]["target"].get<double>() == r.alignment.target);

  std::string header = report_csv_header(cfg);
  std::string line = report_csv_row(cfg, r);
  CHECK(std::count(header.begin(), header.end(), ',') ==
        std::count(line.begin(), line.end(), ','));
  CHECK(header.substr(0, 10) == "split,id_a");
}
