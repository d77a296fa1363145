#pragma once

#include <string>
#include <vector>

#include "shortcutlab/numerics.hpp"
#include "shortcutlab/synth.hpp"

namespace shortcutlab {

// ---------------------------------------------------------------------------
// Prediction tables
// ---------------------------------------------------------------------------

// One evaluated split: predictions, class-probability rows and the labels
// needed for group metrics. Columns are parallel vectors over samples.
struct PredictionTable {
  std::string split_tag;
  std::vector<int> y;
  std::vector<std::vector<int>> cue_labels;  // config cue order
  std::vector<int> group;
  std::vector<int> pred;
  Matrix probs;  // [n x classes], rows sum to 1

  std::size_t size() const { return y.size(); }
};

// Builds a table from softmax probabilities; predictions are the row argmax
// with ties to the lower class. Validates probability sums (1e-9) and group
// key consistency.
PredictionTable make_table(const DatasetConfig& cfg, const std::vector<Sample>& rows,
                           const Matrix& probs, const std::string& split_tag);

// ---------------------------------------------------------------------------
// Group accuracies
// ---------------------------------------------------------------------------

struct GroupStats {
  std::vector<std::size_t> correct;  // indexed by group key
  std::vector<std::size_t> total;
  std::vector<double> acc;  // NaN marks an empty group

  bool defined(std::size_t g) const { return total[g] > 0; }
};

GroupStats per_group_accuracy(const DatasetConfig& cfg, const PredictionTable& t);

// Weighted average of group accuracies; weights must sum to 1 within 1e-9.
// An empty group with positive weight is an error.
double id_accuracy(const std::vector<double>& group_acc, const std::vector<double>& weights);

// Sample-weighted pooled accuracy over a set of groups.
double pooled_accuracy(const GroupStats& gs, const std::vector<int>& groups);

// ---------------------------------------------------------------------------
// Gap metrics
// ---------------------------------------------------------------------------

// Signed gaps against the I.D. accuracy. cue_gaps[k] pools the groups where
// cue k disagrees with the target and every other cue agrees; combined pools
// the groups where all cues disagree. Negative means a drop.
struct GapBlock {
  std::vector<double> cue_gaps;  // config cue order
  double combined_gap = 0.0;
};

GapBlock shortcut_gaps(const DatasetConfig& cfg, const GroupStats& gs, double id_acc);

struct WorstGroup {
  double acc = 0.0;
  int group = -1;          // lowest index on ties
  bool skipped_empty = false;
};

WorstGroup worst_group(const GroupStats& gs);

// ---------------------------------------------------------------------------
// Watermark perturbation block
// ---------------------------------------------------------------------------

struct PerturbationBlock {
  double overall_gap = 0.0;        // acc(perturbed) - acc(clean)
  double class_gap = 0.0;          // accuracy on y = focus, perturbed - clean
  double delta_prob = 0.0;         // mean P(focus) over all rows, perturbed - clean
  double delta_prob_conditional = 0.0;  // same over y = focus rows
};

// Tables must cover the same rows in the same order.
PerturbationBlock perturbation_gaps(const PredictionTable& clean,
                                    const PredictionTable& perturbed, int focus_class);

// ---------------------------------------------------------------------------
// Cue alignment
// ---------------------------------------------------------------------------

// Fraction of rows whose prediction equals each cue's label; target alignment
// is plain accuracy. Meant for balanced splits.
struct AlignmentRow {
  double target = 0.0;
  std::vector<double> cues;  // config cue order
};

AlignmentRow cue_alignment(const DatasetConfig& cfg, const PredictionTable& t);

// ---------------------------------------------------------------------------
// Full report
// ---------------------------------------------------------------------------

struct MetricsReport {
  std::string split_tag;
  GroupStats groups;
  double id_acc = 0.0;
  GapBlock gaps;
  WorstGroup worst;
  AlignmentRow alignment;
  bool has_perturbation = false;
  PerturbationBlock perturbation;
};

// Everything except the perturbation block, which needs a second table.
MetricsReport evaluate(const DatasetConfig& cfg, const PredictionTable& t);

std::string report_json(const DatasetConfig& cfg, const MetricsReport& r);
std::string report_csv_header(const DatasetConfig& cfg);
std::string report_csv_row(const DatasetConfig& cfg, const MetricsReport& r);

}  // namespace shortcutlab
