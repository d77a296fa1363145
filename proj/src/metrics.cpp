#include "shortcutlab/metrics.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include <json.hpp>

namespace shortcutlab {

namespace {

const double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<int> gap_groups(const DatasetConfig& cfg, int bits) {
  std::size_t k = cfg.cues.size();
  std::vector<int> out;
  for (std::size_t y = 0; y < cfg.classes; ++y)
    out.push_back(static_cast<int>((y << k) | static_cast<std::size_t>(bits)));
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Tables
// ---------------------------------------------------------------------------

PredictionTable make_table(const DatasetConfig& cfg, const std::vector<Sample>& rows,
                           const Matrix& probs, const std::string& split_tag) {
  if (probs.rows != rows.size() || probs.cols != cfg.classes)
    throw DataError("make_table: probability matrix shape mismatch");
  PredictionTable t;
  t.split_tag = split_tag;
  t.probs = probs;
  t.y.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Sample& s = rows[i];
    if (group_of(cfg, s.y, s.cue_labels) != s.group)
      throw DataError("make_table: group key inconsistent with labels");
    double sum = 0.0;
    std::size_t best = 0;
    for (std::size_t c = 0; c < probs.cols; ++c) {
      sum += probs(i, c);
      if (probs(i, c) > probs(i, best)) best = c;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw DataError("make_table: probabilities do not sum to 1");
    t.y.push_back(s.y);
    t.cue_labels.push_back(s.cue_labels);
    t.group.push_back(s.group);
    t.pred.push_back(static_cast<int>(best));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Group accuracies
// ---------------------------------------------------------------------------

GroupStats per_group_accuracy(const DatasetConfig& cfg, const PredictionTable& t) {
  std::size_t n_groups = num_groups(cfg);
  GroupStats gs;
  gs.correct.assign(n_groups, 0);
  gs.total.assign(n_groups, 0);
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::size_t g = static_cast<std::size_t>(t.group[i]);
    if (g >= n_groups) throw DataError("per_group_accuracy: group key out of range");
    gs.total[g] += 1;
    gs.correct[g] += t.pred[i] == t.y[i];
  }
  gs.acc.assign(n_groups, kNaN);
  for (std::size_t g = 0; g < n_groups; ++g)
    if (gs.total[g] > 0)
      gs.acc[g] = static_cast<double>(gs.correct[g]) / static_cast<double>(gs.total[g]);
  return gs;
}

double id_accuracy(const std::vector<double>& group_acc, const std::vector<double>& weights) {
  if (group_acc.size() != weights.size())
    throw ConfigError("id_accuracy: accuracy/weight length mismatch");
  double wsum = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw ConfigError("id_accuracy: negative weight");
    wsum += w;
  }
  if (std::abs(wsum - 1.0) > 1e-9) throw ConfigError("id_accuracy: weights must sum to 1");
  double s = 0.0;
  for (std::size_t g = 0; g < weights.size(); ++g) {
    if (weights[g] == 0.0) continue;
    if (std::isnan(group_acc[g]))
      throw DataError("id_accuracy: empty group carries positive weight");
    s += weights[g] * group_acc[g];
  }
  return s;
}

double pooled_accuracy(const GroupStats& gs, const std::vector<int>& groups) {
  std::size_t correct = 0, total = 0;
  for (int g : groups) {
    correct += gs.correct.at(static_cast<std::size_t>(g));
    total += gs.total.at(static_cast<std::size_t>(g));
  }
  if (total == 0) throw DataError("pooled_accuracy: no samples in the requested groups");
  return static_cast<double>(correct) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// Gaps
// ---------------------------------------------------------------------------

GapBlock shortcut_gaps(const DatasetConfig& cfg, const GroupStats& gs, double id_acc) {
  std::size_t k = cfg.cues.size();
  int all_bits = static_cast<int>((1u << k) - 1);
  GapBlock out;
  for (std::size_t c = 0; c < k; ++c) {
    int bits = all_bits & ~(1 << c);
    out.cue_gaps.push_back(pooled_accuracy(gs, gap_groups(cfg, bits)) - id_acc);
  }
  out.combined_gap = pooled_accuracy(gs, gap_groups(cfg, 0)) - id_acc;
  return out;
}

WorstGroup worst_group(const GroupStats& gs) {
  WorstGroup out;
  for (std::size_t g = 0; g < gs.acc.size(); ++g) {
    if (!gs.defined(g)) {
      out.skipped_empty = true;
      continue;
    }
    if (out.group < 0 || gs.acc[g] < out.acc) {
      out.acc = gs.acc[g];
      out.group = static_cast<int>(g);
    }
  }
  if (out.group < 0) throw DataError("worst_group: no populated groups");
  return out;
}

// ---------------------------------------------------------------------------
// Perturbation block
// ---------------------------------------------------------------------------

namespace {

double accuracy_where(const PredictionTable& t, int only_y) {
  std::size_t correct = 0, total = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (only_y >= 0 && t.y[i] != only_y) continue;
    total += 1;
    correct += t.pred[i] == t.y[i];
  }
  if (total == 0) throw DataError("perturbation_gaps: no rows for the focus class");
  return static_cast<double>(correct) / static_cast<double>(total);
}

double mean_prob(const PredictionTable& t, int cls, int only_y) {
  double s = 0.0;
  std::size_t total = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (only_y >= 0 && t.y[i] != only_y) continue;
    s += t.probs(i, static_cast<std::size_t>(cls));
    total += 1;
  }
  return s / static_cast<double>(total);
}

}  // namespace

PerturbationBlock perturbation_gaps(const PredictionTable& clean,
                                    const PredictionTable& perturbed, int focus_class) {
  if (clean.size() != perturbed.size() || clean.y != perturbed.y ||
      clean.group != perturbed.group)
    throw DataError("perturbation_gaps: tables cover different rows");
  if (focus_class < 0 || static_cast<std::size_t>(focus_class) >= clean.probs.cols)
    throw ConfigError("perturbation_gaps: focus class out of range");
  PerturbationBlock out;
  out.overall_gap = accuracy_where(perturbed, -1) - accuracy_where(clean, -1);
  out.class_gap = accuracy_where(perturbed, focus_class) - accuracy_where(clean, focus_class);
  out.delta_prob = mean_prob(perturbed, focus_class, -1) - mean_prob(clean, focus_class, -1);
  out.delta_prob_conditional =
      mean_prob(perturbed, focus_class, focus_class) - mean_prob(clean, focus_class, focus_class);
  return out;
}

// ---------------------------------------------------------------------------
// Alignment
// ---------------------------------------------------------------------------

AlignmentRow cue_alignment(const DatasetConfig& cfg, const PredictionTable& t) {
  if (t.size() == 0) throw DataError("cue_alignment: empty table");
  AlignmentRow out;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < t.size(); ++i) hit += t.pred[i] == t.y[i];
  out.target = static_cast<double>(hit) / static_cast<double>(t.size());
  for (std::size_t c = 0; c < cfg.cues.size(); ++c) {
    hit = 0;
    for (std::size_t i = 0; i < t.size(); ++i) hit += t.pred[i] == t.cue_labels[i][c];
    out.cues.push_back(static_cast<double>(hit) / static_cast<double>(t.size()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report assembly and serialization
// ---------------------------------------------------------------------------

MetricsReport evaluate(const DatasetConfig& cfg, const PredictionTable& t) {
  MetricsReport r;
  r.split_tag = t.split_tag;
  r.groups = per_group_accuracy(cfg, t);
  r.id_acc = id_accuracy(r.groups.acc, train_group_frequencies(cfg));
  r.gaps = shortcut_gaps(cfg, r.groups, r.id_acc);
  r.worst = worst_group(r.groups);
  r.alignment = cue_alignment(cfg, t);
  return r;
}

namespace {

using nlohmann::json;

json nan_safe(double v) {
  if (std::isnan(v)) return nullptr;
  return v;
}

}  // namespace

std::string report_json(const DatasetConfig& cfg, const MetricsReport& r) {
  json j;
  j["split"] = r.split_tag;
  j["id_acc"] = r.id_acc;
  json gaps;
  for (std::size_t c = 0; c < cfg.cues.size(); ++c)
    gaps[cfg.cues[c].name] = r.gaps.cue_gaps[c];
  gaps["combined"] = r.gaps.combined_gap;
  j["gaps"] = gaps;
  j["worst_group"] = {{"acc", r.worst.acc},
                      {"group", r.worst.group},
                      {"skipped_empty", r.worst.skipped_empty}};
  json groups = json::array();
  for (std::size_t g = 0; g < r.groups.acc.size(); ++g)
    groups.push_back({{"group", g},
                      {"correct", r.groups.correct[g]},
                      {"total", r.groups.total[g]},
                      {"acc", nan_safe(r.groups.acc[g])}});
  j["groups"] = groups;
  json align;
  align["target"] = r.alignment.target;
  for (std::size_t c = 0; c < cfg.cues.size(); ++c)
    align[cfg.cues[c].name] = r.alignment.cues[c];
  j["alignment"] = align;
  if (r.has_perturbation)
    j["perturbation"] = {{"overall_gap", r.perturbation.overall_gap},
                         {"class_gap", r.perturbation.class_gap},
                         {"delta_prob", r.perturbation.delta_prob},
                         {"delta_prob_conditional", r.perturbation.delta_prob_conditional}};
  return j.dump(2);
}

std::string report_csv_header(const DatasetConfig& cfg) {
  std::ostringstream out;
  out << "split,id_acc";
  for (const CueSpec& cue : cfg.cues) out << ",gap_" << cue.name;
  out << ",gap_combined,worst_group_acc,worst_group,worst_skipped_empty";
  out << ",align_target";
  for (const CueSpec& cue : cfg.cues) out << ",align_" << cue.name;
  for (std::size_t g = 0; g < num_groups(cfg); ++g) out << ",acc_g" << g;
  out << ",pert_overall_gap,pert_class_gap,pert_delta_prob,pert_delta_prob_cond";
  return out.str();
}

std::string report_csv_row(const DatasetConfig& cfg, const MetricsReport& r) {
  std::ostringstream out;
  out.precision(17);
  out << r.split_tag << "," << r.id_acc;
  for (double g : r.gaps.cue_gaps) out << "," << g;
  out << "," << r.gaps.combined_gap << "," << r.worst.acc << "," << r.worst.group << ","
      << (r.worst.skipped_empty ? 1 : 0);
  out << "," << r.alignment.target;
  for (double a : r.alignment.cues) out << "," << a;
  for (std::size_t g = 0; g < r.groups.acc.size(); ++g) {
    out << ",";
    if (r.groups.defined(g)) out << r.groups.acc[g];
  }
  if (r.has_perturbation)
    out << "," << r.perturbation.overall_gap << "," << r.perturbation.class_gap << ","
        << r.perturbation.delta_prob << "," << r.perturbation.delta_prob_conditional;
  else
    out << ",,,,";
  return out.str();
}

}  // namespace shortcutlab
