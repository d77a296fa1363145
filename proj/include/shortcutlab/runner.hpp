#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "shortcutlab/methods.hpp"

namespace shortcutlab {

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

struct EvalSection {
  bool watermark = false;
  std::size_t focus_class = 0;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  std::string dataset_dir;  // empty: datasets/<config hash> under the output root
  std::vector<MethodSpec> methods = {MethodSpec{}};
  TrainConfig train;
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  EvalSection eval;
  std::string output_dir = "runs";

  void validate() const;
};

// Named presets: "desk" (1000/class, 60 epochs, 3 seeds) and "paper"
// (4000/class, 300 epochs, 6 seeds).
ExperimentConfig experiment_preset(std::string_view name);

// JSON text with an optional "profile" preset; explicit fields override it.
ExperimentConfig parse_experiment_config(const std::string& text);
ExperimentConfig load_experiment_config(const std::string& path);

// SHORTCUTLAB_OUT when set, "." otherwise. Relative artifact paths land here.
std::string output_root();
std::string resolve_path(const std::string& path);

// Dataset directory for the config (explicit dataset_dir or the hashed default).
std::string dataset_location(const ExperimentConfig& cfg);

// ---------------------------------------------------------------------------
// Run records
// ---------------------------------------------------------------------------

struct RunRecord {
  std::string method;
  std::uint64_t seed = 0;
  std::size_t selected_epoch = 0;
  MetricsReport test;
  double wall_clock_sec = 0.0;
  std::string config_hash;  // hex64 of the dataset config
};

std::string run_record_json(const DatasetConfig& cfg, const RunRecord& rec);

// The slice of a record that reporting needs.
struct RecordRow {
  std::string method;
  std::uint64_t seed = 0;
  std::vector<std::string> cue_names;
  double id_acc = 0.0;
  std::vector<double> cue_gaps;
  double combined_gap = 0.0;
  double worst_acc = 0.0;
};

RecordRow parse_run_record(const std::string& text);

struct RunPaths {
  std::string dir;
  std::string record;
  std::string metrics_csv;
  std::string trajectory;
  std::string dynamics_csv;
  std::string checkpoint;
};

RunPaths run_paths(const ExperimentConfig& cfg, const std::string& method_label,
                   std::uint64_t seed);

// Trains one (method, seed) pair, evaluates the test split at the selected
// epoch, and writes record/metrics/trajectory/dynamics/checkpoint artifacts.
RunRecord run_single(const ExperimentConfig& cfg, const Dataset& ds, const MethodSpec& spec,
                     const std::string& method_label, std::uint64_t seed);

// Watermark-perturbed copies of the rows using the frozen eval parameters.
std::vector<Sample> watermark_perturbed(const DatasetConfig& cfg,
                                        const std::vector<Sample>& rows);

// ---------------------------------------------------------------------------
// Aggregation and reporting
// ---------------------------------------------------------------------------

struct Stat {
  double mean = 0.0;
  double stdev = 0.0;  // sample stdev; 0 for a single value
};

Stat mean_stdev(const std::vector<double>& values);

struct MethodSummary {
  std::string method;
  std::size_t n_seeds = 0;
  std::vector<std::string> cue_names;
  Stat id_acc;
  std::vector<Stat> cue_gaps;
  Stat combined_gap;
  Stat worst_acc;
};

std::vector<MethodSummary> summarize_records(const std::vector<RecordRow>& rows);

// Comparison table against the ERM baseline. A gap is flagged with the
// multiplier marker when both means are negative and the method's magnitude
// exceeds ERM's.
struct ReportTable {
  std::string csv;
  std::string text;
};

ReportTable build_report(const std::vector<MethodSummary>& summaries);

// ---------------------------------------------------------------------------
// CLI entry points. All throw; the binary maps exceptions to exit codes.
// ---------------------------------------------------------------------------

void cmd_generate(const std::string& config_path);
void cmd_train(const std::string& config_path, const std::vector<std::string>& method_filter,
               const std::vector<std::uint64_t>& seed_override);
void cmd_eval(const std::string& checkpoint_path, const std::string& dataset_dir, bool watermark,
              std::size_t focus_class);
void cmd_dynamics(const std::string& trajectory_path, const std::string& out_csv);
void cmd_report(const std::vector<std::string>& paths, const std::string& out_dir);

}  // namespace shortcutlab
