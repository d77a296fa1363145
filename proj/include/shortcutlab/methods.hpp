#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "shortcutlab/augment.hpp"
#include "shortcutlab/metrics.hpp"
#include "shortcutlab/model.hpp"

namespace shortcutlab {

// ---------------------------------------------------------------------------
// Method zoo configuration
// ---------------------------------------------------------------------------

enum class MethodKind {
  erm,
  mixup,
  cutout,
  cutmix,
  wmk_aug,
  bg_aug,
  coobj_aug,
  txt_aug,
  gdro,
  di,
  subg,
  dfr,
  jtt,
  lff,
  lle,
};

const char* method_name(MethodKind k);
MethodKind method_from_name(std::string_view name);

// Category-3 methods: the ones that consume shortcut labels.
bool uses_shortcut_labels(MethodKind k);

struct MethodSpec {
  MethodKind kind = MethodKind::erm;
  std::map<std::string, double> params;      // per-kind knobs (alpha, eta, E, ...)
  std::vector<std::string> shortcut_labels;  // cue names; category 3 only
  std::vector<std::string> aug_kinds;        // lle override; empty = default set
  std::string lle_aggregation = "dynamic";

  double param(const std::string& name, double fallback) const;
  void validate(const DatasetConfig& cfg) const;
};

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 1e-4;
  std::size_t batch_size = 128;
  std::size_t epochs = 60;
  std::size_t eval_every = 1;  // validation cadence; the last epoch always evaluates
  std::vector<std::size_t> hidden = {128, 64};
  std::uint64_t seed = 0;

  void validate() const;
};

// ---------------------------------------------------------------------------
// Run results
// ---------------------------------------------------------------------------

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  MetricsReport val;
};

struct RunResult {
  ModelShape shape;
  std::vector<std::string> head_names;
  AggregationMode eval_mode = AggregationMode::single;
  std::size_t eval_head = 0;
  ModelParams final_params;
  ModelParams best_params;      // parameters at selected_epoch
  std::size_t selected_epoch = 0;  // 1-based; 0 means never evaluated
  std::vector<EpochRecord> records;
};

// Class probabilities for a whole split, chunked internally.
Matrix predict_probs(const ModelParams& p, const std::vector<Sample>& rows, AggregationMode mode,
                     std::size_t single_head = 0);
PredictionTable predict_table(const DatasetConfig& cfg, const ModelParams& p,
                              const std::vector<Sample>& rows, AggregationMode mode,
                              std::size_t single_head, const std::string& tag);

// ---------------------------------------------------------------------------
// Early stopping
// ---------------------------------------------------------------------------

// Cue names to config indices; empty list means every cue.
std::vector<std::size_t> resolve_cues(const DatasetConfig& cfg,
                                      const std::vector<std::string>& names);

// Worst-group accuracy over the partition induced by (y, selected cue labels):
// 2^(S+1) pooled groups; empty pooled groups are skipped.
double subset_worst_group(const DatasetConfig& cfg, const GroupStats& gs,
                          const std::vector<std::size_t>& cue_subset);

// Earliest recorded epoch maximizing the subset worst-group val accuracy.
std::size_t select_early_stop(const DatasetConfig& cfg, const std::vector<EpochRecord>& records,
                              const std::vector<std::size_t>& cue_subset);

// ---------------------------------------------------------------------------
// Trainers. Each spans the shared protocol: per-epoch shuffle streams, SGD,
// per-epoch validation records, early stopping on worst-group val accuracy.
// ---------------------------------------------------------------------------

RunResult train_erm(const Dataset& ds, const TrainConfig& tc);

RunResult train_mixup(const Dataset& ds, const TrainConfig& tc, double alpha);
RunResult train_cutout(const Dataset& ds, const TrainConfig& tc, double p);
RunResult train_cutmix(const Dataset& ds, const TrainConfig& tc, double alpha);

// ERM on batches whose second half is replaced by targeted augmentations;
// kinds drawn uniformly per sample, donors uniformly from the other class.
// Empty kinds reduce to plain ERM.
RunResult targeted_aug_training(const Dataset& ds, const TrainConfig& tc,
                                const std::vector<AugmentationKind>& kinds);

// Group DRO over the groups induced by (y, selected cue labels). q_trace, when
// given, receives the q distribution after every step.
RunResult train_gdro(const Dataset& ds, const TrainConfig& tc,
                     const std::vector<std::string>& labels, double eta, double gamma,
                     std::vector<std::vector<double>>* q_trace = nullptr);

// Deterministic min-group subsample; returns sorted train indices.
std::vector<std::size_t> subsample_groups(const DatasetConfig& cfg,
                                          const std::vector<Sample>& pool,
                                          const std::vector<std::size_t>& cue_subset,
                                          RngStream& rng);

RunResult train_subg(const Dataset& ds, const TrainConfig& tc,
                     const std::vector<std::string>& labels);

// Freezes the given extractor, subsamples groups, retrains a fresh head.
RunResult retrain_dfr(const Dataset& ds, const TrainConfig& tc, const ModelShape& erm_shape,
                      const ModelParams& erm_params, const std::vector<std::string>& labels);

// One target head per shortcut-label domain; sum-logit inference. An empty
// label list degenerates to a single domain (exactly ERM).
RunResult train_di(const Dataset& ds, const TrainConfig& tc,
                   const std::vector<std::string>& labels);

// Two-phase upweighting: reference ERM for ref_epochs on separate streams,
// then training from scratch with misclassified samples weighted lambda_up.
RunResult train_jtt(const Dataset& ds, const TrainConfig& tc, std::size_t ref_epochs,
                    double lambda_up);

// Bias-amplified GCE(q) network plus a debiased network trained with
// per-sample weights L_B / (L_B + L_D); returns the debiased network.
// weight_override in [0,1] replaces the computed weights (mechanism off at
// 0.5); negative means use the formula.
RunResult train_lff(const Dataset& ds, const TrainConfig& tc, double q,
                    double weight_override = -1.0, ModelParams* bias_out = nullptr);

RunResult train_lle(const Dataset& ds, const TrainConfig& tc,
                    const std::vector<AugmentationKind>& kinds, double lambda_shift,
                    AggregationMode eval_mode);

// Dispatch on a MethodSpec with the per-kind default parameters.
RunResult train_method(const Dataset& ds, const TrainConfig& tc, const MethodSpec& spec);

}  // namespace shortcutlab
