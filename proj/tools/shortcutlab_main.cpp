#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "shortcutlab/runner.hpp"

int main(int argc, char** argv) {
  CLI::App app{"shortcut-learning laboratory: synthetic datasets, mitigation methods, reports"};
  app.require_subcommand(1);

  std::string config_path;
  CLI::App* generate = app.add_subcommand("generate", "generate the configured dataset");
  generate->add_option("--config", config_path, "experiment config file")->required();

  std::vector<std::string> methods;
  std::vector<std::uint64_t> seeds;
  CLI::App* train = app.add_subcommand("train", "train methods across seeds");
  train->add_option("--config", config_path, "experiment config file")->required();
  train->add_option("--method", methods, "restrict to these methods");
  train->add_option("--seed", seeds, "override the config seed list");

  std::string checkpoint, dataset_dir;
  bool watermark = false;
  std::size_t focus_class = 0;
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--dataset", dataset_dir, "dataset directory")->required();
  eval->add_flag("--watermark", watermark, "add the watermark perturbation block");
  eval->add_option("--focus-class", focus_class, "perturbation focus class");

  std::string trajectory, out_csv;
  CLI::App* dynamics = app.add_subcommand("dynamics", "per-epoch cue alignment CSV");
  dynamics->add_option("--trajectory", trajectory, "trajectory.json from a run")->required();
  dynamics->add_option("--out", out_csv, "output CSV path (default stdout)");

  std::vector<std::string> record_paths;
  std::string report_dir;
  CLI::App* report = app.add_subcommand("report", "comparison table against the erm baseline");
  report->add_option("paths", record_paths, "record.json files or run directories")->required();
  report->add_option("--out", report_dir, "directory for report.csv/report.txt");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*generate) shortcutlab::cmd_generate(config_path);
    if (*train) shortcutlab::cmd_train(config_path, methods, seeds);
    if (*eval) shortcutlab::cmd_eval(checkpoint, dataset_dir, watermark, focus_class);
    if (*dynamics) shortcutlab::cmd_dynamics(trajectory, out_csv);
    if (*report) shortcutlab::cmd_report(record_paths, report_dir);
  } catch (const shortcutlab::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const shortcutlab::DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
