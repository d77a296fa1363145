#include "shortcutlab/runner.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace shortcutlab {

// ---------------------------------------------------------------------------
// Config parsing
// ---------------------------------------------------------------------------

namespace {

void require_keys(const json& j, const std::vector<std::string>& known,
                  const std::string& where) {
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const std::string& k : known) ok = ok || item.key() == k;
    if (!ok) throw ConfigError("config: unknown key '" + item.key() + "' in " + where);
  }
}

void overlay_dataset(DatasetConfig& cfg, const json& j) {
  require_keys(j,
               {"master_seed", "height", "width", "channels", "classes", "train_per_class",
                "val_total", "test_total", "noise_sigma", "cues"},
               "dataset");
  cfg.master_seed = j.value("master_seed", cfg.master_seed);
  cfg.height = j.value("height", cfg.height);
  cfg.width = j.value("width", cfg.width);
  cfg.channels = j.value("channels", cfg.channels);
  cfg.classes = j.value("classes", cfg.classes);
  cfg.train_per_class = j.value("train_per_class", cfg.train_per_class);
  cfg.val_total = j.value("val_total", cfg.val_total);
  cfg.test_total = j.value("test_total", cfg.test_total);
  cfg.noise_sigma = j.value("noise_sigma", cfg.noise_sigma);
  if (j.contains("cues")) {
    cfg.cues.clear();
    for (const json& c : j.at("cues")) {
      require_keys(c, {"name", "rho"}, "dataset.cues");
      cfg.cues.push_back({c.at("name").get<std::string>(), c.value("rho", 0.95)});
    }
  }
}

void overlay_train(TrainConfig& tc, const json& j) {
  require_keys(j, {"lr", "weight_decay", "batch_size", "epochs", "eval_every", "hidden"},
               "train");
  tc.lr = j.value("lr", tc.lr);
  tc.weight_decay = j.value("weight_decay", tc.weight_decay);
  tc.batch_size = j.value("batch_size", tc.batch_size);
  tc.epochs = j.value("epochs", tc.epochs);
  tc.eval_every = j.value("eval_every", tc.eval_every);
  if (j.contains("hidden")) tc.hidden = j.at("hidden").get<std::vector<std::size_t>>();
}

MethodSpec parse_method(const json& j) {
  require_keys(j, {"kind", "params", "shortcut_labels", "aug_kinds", "lle_aggregation"},
               "methods[]");
  MethodSpec spec;
  spec.kind = method_from_name(j.at("kind").get<std::string>());
  if (j.contains("params"))
    for (const auto& item : j.at("params").items())
      spec.params[item.key()] = item.value().get<double>();
  if (j.contains("shortcut_labels"))
    spec.shortcut_labels = j.at("shortcut_labels").get<std::vector<std::string>>();
  if (j.contains("aug_kinds")) spec.aug_kinds = j.at("aug_kinds").get<std::vector<std::string>>();
  spec.lle_aggregation = j.value("lle_aggregation", spec.lle_aggregation);
  return spec;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(what + ": bad JSON: " + std::string(e.what()));
  }
}

std::string fmt(double v) {
  std::ostringstream out;
  out << std::setprecision(17) << v;
  return out.str();
}

std::string fmt3(double v) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(3) << v;
  return out.str();
}

}  // namespace

void ExperimentConfig::validate() const {
  dataset.validate();
  train.validate();
  if (methods.empty()) throw ConfigError("config: no methods listed");
  for (const MethodSpec& spec : methods) spec.validate(dataset);
  if (seeds.empty()) throw ConfigError("config: empty seed list");
  if (eval.focus_class >= dataset.classes)
    throw ConfigError("config: eval focus class out of range");
  if (output_dir.empty()) throw ConfigError("config: empty output dir");
}

ExperimentConfig experiment_preset(std::string_view name) {
  ExperimentConfig cfg;
  if (name == "desk") {
    cfg.dataset.train_per_class = 1000;
    cfg.train.epochs = 60;
    cfg.train.lr = 0.003;
    cfg.seeds = {0, 1, 2};
  } else if (name == "paper") {
    cfg.dataset.train_per_class = 4000;
    cfg.train.epochs = 300;
    cfg.train.lr = 0.003;
    cfg.seeds = {0, 1, 2, 3, 4, 5};
  } else {
    throw ConfigError("experiment_preset: unknown profile '" + std::string(name) + "'");
  }
  return cfg;
}

ExperimentConfig parse_experiment_config(const std::string& text) {
  json j = parse_json(text, "experiment config");
  if (!j.is_object()) throw DataError("experiment config: expected a JSON object");
  require_keys(j,
               {"profile", "dataset", "dataset_dir", "train", "seeds", "methods", "eval",
                "output_dir"},
               "config");

  ExperimentConfig cfg =
      j.contains("profile") ? experiment_preset(j.at("profile").get<std::string>())
                            : ExperimentConfig{};
  if (j.contains("dataset")) overlay_dataset(cfg.dataset, j.at("dataset"));
  cfg.dataset_dir = j.value("dataset_dir", cfg.dataset_dir);
  if (j.contains("train")) overlay_train(cfg.train, j.at("train"));
  if (j.contains("seeds")) cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  if (j.contains("methods")) {
    cfg.methods.clear();
    for (const json& m : j.at("methods")) cfg.methods.push_back(parse_method(m));
  }
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    require_keys(e, {"watermark", "focus_class"}, "eval");
    cfg.eval.watermark = e.value("watermark", cfg.eval.watermark);
    cfg.eval.focus_class = e.value("focus_class", cfg.eval.focus_class);
  }
  cfg.output_dir = j.value("output_dir", cfg.output_dir);
  cfg.validate();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  return parse_experiment_config(read_file(path));
}

std::string output_root() {
  const char* env = std::getenv("SHORTCUTLAB_OUT");
  return env && *env ? env : ".";
}

std::string resolve_path(const std::string& path) {
  if (!path.empty() && path.front() == '/') return path;
  return output_root() + "/" + path;
}

std::string dataset_location(const ExperimentConfig& cfg) {
  if (!cfg.dataset_dir.empty()) return resolve_path(cfg.dataset_dir);
  return resolve_path("datasets/" + hex64(config_hash(cfg.dataset)));
}

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

std::string run_record_json(const DatasetConfig& cfg, const RunRecord& rec) {
  json j;
  j["method"] = rec.method;
  j["seed"] = rec.seed;
  j["selected_epoch"] = rec.selected_epoch;
  j["wall_clock_sec"] = rec.wall_clock_sec;
  j["config_hash"] = rec.config_hash;
  json cues = json::array();
  for (const CueSpec& cue : cfg.cues) cues.push_back(cue.name);
  j["cues"] = cues;
  j["report"] = json::parse(report_json(cfg, rec.test));
  return j.dump(2);
}

RecordRow parse_run_record(const std::string& text) {
  json j = parse_json(text, "run record");
  RecordRow row;
  try {
    row.method = j.at("method").get<std::string>();
    row.seed = j.at("seed").get<std::uint64_t>();
    row.cue_names = j.at("cues").get<std::vector<std::string>>();
    const json& rep = j.at("report");
    row.id_acc = rep.at("id_acc").get<double>();
    for (const std::string& name : row.cue_names)
      row.cue_gaps.push_back(rep.at("gaps").at(name).get<double>());
    row.combined_gap = rep.at("gaps").at("combined").get<double>();
    row.worst_acc = rep.at("worst_group").at("acc").get<double>();
  } catch (const json::exception& e) {
    throw DataError("run record: missing field: " + std::string(e.what()));
  }
  return row;
}

RunPaths run_paths(const ExperimentConfig& cfg, const std::string& method_label,
                   std::uint64_t seed) {
  RunPaths p;
  p.dir = resolve_path(cfg.output_dir) + "/" + method_label + "/seed" + std::to_string(seed);
  p.record = p.dir + "/record.json";
  p.metrics_csv = p.dir + "/metrics.csv";
  p.trajectory = p.dir + "/trajectory.json";
  p.dynamics_csv = p.dir + "/dynamics.csv";
  p.checkpoint = p.dir + "/checkpoint.bin";
  return p;
}

std::vector<Sample> watermark_perturbed(const DatasetConfig& cfg,
                                        const std::vector<Sample>& rows) {
  std::vector<Sample> out = rows;
  WatermarkParams params = eval_watermark_params();
  for (Sample& s : out)
    composite_watermark(s.image, cfg.height, cfg.width, cfg.channels, params);
  return out;
}

namespace {

json trajectory_json(const DatasetConfig& cfg, const RunRecord& rec,
                     const std::vector<EpochRecord>& records) {
  json j;
  j["method"] = rec.method;
  j["seed"] = rec.seed;
  json cues = json::array();
  for (const CueSpec& cue : cfg.cues) cues.push_back(cue.name);
  j["cues"] = cues;
  json epochs = json::array();
  for (const EpochRecord& er : records) {
    json e;
    e["epoch"] = er.epoch;
    e["train_loss"] = er.train_loss;
    e["id_acc"] = er.val.id_acc;
    e["worst_acc"] = er.val.worst.acc;
    e["target_alignment"] = er.val.alignment.target;
    e["cue_alignments"] = er.val.alignment.cues;
    epochs.push_back(std::move(e));
  }
  j["epochs"] = epochs;
  return j;
}

std::string dynamics_csv_text(const json& trajectory) {
  std::ostringstream out;
  out << "epoch,target";
  for (const json& cue : trajectory.at("cues")) out << "," << cue.get<std::string>();
  out << "\n";
  for (const json& e : trajectory.at("epochs")) {
    out << e.at("epoch").get<std::size_t>() << "," << fmt(e.at("target_alignment").get<double>());
    for (const json& v : e.at("cue_alignments")) out << "," << fmt(v.get<double>());
    out << "\n";
  }
  return out.str();
}

}  // namespace

RunRecord run_single(const ExperimentConfig& cfg, const Dataset& ds, const MethodSpec& spec,
                     const std::string& method_label, std::uint64_t seed) {
  TrainConfig tc = cfg.train;
  tc.seed = seed;
  auto t0 = std::chrono::steady_clock::now();
  RunResult rr = train_method(ds, tc, spec);

  PredictionTable clean =
      predict_table(ds.config, rr.best_params, ds.test, rr.eval_mode, rr.eval_head, "test");
  MetricsReport report = evaluate(ds.config, clean);
  if (cfg.eval.watermark) {
    PredictionTable perturbed =
        predict_table(ds.config, rr.best_params, watermark_perturbed(ds.config, ds.test),
                      rr.eval_mode, rr.eval_head, "test-wm");
    report.has_perturbation = true;
    report.perturbation = perturbation_gaps(clean, perturbed, cfg.eval.focus_class);
  }

  RunRecord rec;
  rec.method = method_label;
  rec.seed = seed;
  rec.selected_epoch = rr.selected_epoch;
  rec.test = report;
  rec.wall_clock_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  rec.config_hash = hex64(config_hash(ds.config));

  RunPaths paths = run_paths(cfg, method_label, seed);
  fs::create_directories(paths.dir);
  open_out(paths.record) << run_record_json(ds.config, rec) << "\n";
  open_out(paths.metrics_csv) << report_csv_header(ds.config) << "\n"
                              << report_csv_row(ds.config, rec.test) << "\n";
  json traj = trajectory_json(ds.config, rec, rr.records);
  open_out(paths.trajectory) << traj.dump(2) << "\n";
  open_out(paths.dynamics_csv) << dynamics_csv_text(traj);

  CheckpointMeta meta;
  meta.head_names = rr.head_names;
  meta.method = method_label;
  meta.seed = seed;
  meta.selected_epoch = rr.selected_epoch;
  meta.dataset_hash = rec.config_hash;
  meta.aggregation = aggregation_name(rr.eval_mode);
  meta.eval_head = rr.eval_head;
  save_checkpoint(rr.best_params, rr.shape, meta, paths.checkpoint);
  return rec;
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

Stat mean_stdev(const std::vector<double>& values) {
  if (values.empty()) throw ConfigError("mean_stdev: no values");
  Stat s;
  for (double v : values) s.mean += v;
  s.mean /= double(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.stdev = std::sqrt(ss / double(values.size() - 1));
  }
  return s;
}

std::vector<MethodSummary> summarize_records(const std::vector<RecordRow>& rows) {
  if (rows.empty()) throw DataError("summarize_records: no records");
  std::vector<std::string> order;
  for (const RecordRow& row : rows) {
    bool seen = false;
    for (const std::string& m : order) seen = seen || m == row.method;
    if (!seen) order.push_back(row.method);
  }

  std::vector<MethodSummary> out;
  for (const std::string& method : order) {
    MethodSummary ms;
    ms.method = method;
    std::vector<double> id, combined, worst;
    std::vector<std::vector<double>> cue;
    for (const RecordRow& row : rows) {
      if (row.method != method) continue;
      if (ms.cue_names.empty()) {
        ms.cue_names = row.cue_names;
        cue.resize(row.cue_names.size());
      } else if (ms.cue_names != row.cue_names) {
        throw DataError("summarize_records: cue mismatch across records of '" + method + "'");
      }
      id.push_back(row.id_acc);
      combined.push_back(row.combined_gap);
      worst.push_back(row.worst_acc);
      for (std::size_t c = 0; c < row.cue_gaps.size(); ++c) cue[c].push_back(row.cue_gaps[c]);
      ms.n_seeds += 1;
    }
    ms.id_acc = mean_stdev(id);
    ms.combined_gap = mean_stdev(combined);
    ms.worst_acc = mean_stdev(worst);
    for (const std::vector<double>& vals : cue) ms.cue_gaps.push_back(mean_stdev(vals));
    out.push_back(std::move(ms));
  }
  return out;
}

namespace {

// The amplification marker: both gaps negative and the method's magnitude
// larger than the baseline's.
std::string gap_flag(double method_gap, double erm_gap) {
  if (method_gap < 0.0 && erm_gap < 0.0 && std::abs(method_gap) > std::abs(erm_gap)) {
    std::ostringstream out;
    out << "×" << std::fixed << std::setprecision(2)
        << std::abs(method_gap) / std::abs(erm_gap);
    return out.str();
  }
  return "";
}

}  // namespace

ReportTable build_report(const std::vector<MethodSummary>& summaries) {
  const MethodSummary* erm = nullptr;
  for (const MethodSummary& ms : summaries)
    if (ms.method == "erm") erm = &ms;
  if (!erm) throw DataError("build_report: needs an erm baseline record");
  for (const MethodSummary& ms : summaries)
    if (ms.cue_names != erm->cue_names)
      throw DataError("build_report: cue mismatch between '" + ms.method + "' and erm");

  std::ostringstream csv;
  csv << "method,n_seeds,id_acc_mean,id_acc_stdev";
  for (const std::string& cue : erm->cue_names)
    csv << ",gap_" << cue << "_mean,gap_" << cue << "_stdev,gap_" << cue << "_vs_erm";
  csv << ",gap_combined_mean,gap_combined_stdev,gap_combined_vs_erm";
  csv << ",worst_group_mean,worst_group_stdev\n";
  for (const MethodSummary& ms : summaries) {
    csv << ms.method << "," << ms.n_seeds << "," << fmt(ms.id_acc.mean) << ","
        << fmt(ms.id_acc.stdev);
    for (std::size_t c = 0; c < ms.cue_gaps.size(); ++c)
      csv << "," << fmt(ms.cue_gaps[c].mean) << "," << fmt(ms.cue_gaps[c].stdev) << ","
          << gap_flag(ms.cue_gaps[c].mean, erm->cue_gaps[c].mean);
    csv << "," << fmt(ms.combined_gap.mean) << "," << fmt(ms.combined_gap.stdev) << ","
        << gap_flag(ms.combined_gap.mean, erm->combined_gap.mean);
    csv << "," << fmt(ms.worst_acc.mean) << "," << fmt(ms.worst_acc.stdev) << "\n";
  }

  std::vector<std::string> headers = {"method", "seeds", "id_acc"};
  for (const std::string& cue : erm->cue_names) headers.push_back("gap_" + cue);
  headers.push_back("gap_combined");
  headers.push_back("worst_group");

  std::vector<std::vector<std::string>> grid = {headers};
  for (const MethodSummary& ms : summaries) {
    std::vector<std::string> row = {ms.method, std::to_string(ms.n_seeds),
                                    fmt3(ms.id_acc.mean) + " ± " + fmt3(ms.id_acc.stdev)};
    for (std::size_t c = 0; c < ms.cue_gaps.size(); ++c) {
      std::string cell = fmt3(ms.cue_gaps[c].mean) + " ± " + fmt3(ms.cue_gaps[c].stdev);
      std::string flag = gap_flag(ms.cue_gaps[c].mean, erm->cue_gaps[c].mean);
      if (!flag.empty()) cell += " " + flag;
      row.push_back(cell);
    }
    std::string cell =
        fmt3(ms.combined_gap.mean) + " ± " + fmt3(ms.combined_gap.stdev);
    std::string flag = gap_flag(ms.combined_gap.mean, erm->combined_gap.mean);
    if (!flag.empty()) cell += " " + flag;
    row.push_back(cell);
    row.push_back(fmt3(ms.worst_acc.mean) + " ± " + fmt3(ms.worst_acc.stdev));
    grid.push_back(std::move(row));
  }

  auto display_width = [](const std::string& s) {
    std::size_t w = 0;
    for (unsigned char ch : s) w += (ch & 0xc0) != 0x80;  // count code points
    return w;
  };
  std::vector<std::size_t> width(headers.size(), 0);
  for (const std::vector<std::string>& row : grid)
    for (std::size_t c = 0; c < row.size(); ++c)
      width[c] = std::max(width[c], display_width(row[c]));
  std::ostringstream text;
  for (const std::vector<std::string>& row : grid) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      text << row[c] << std::string(width[c] - display_width(row[c]) + 2, ' ');
    }
    text << "\n";
  }

  ReportTable table;
  table.csv = csv.str();
  table.text = text.str();
  return table;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> method_labels(const ExperimentConfig& cfg) {
  std::vector<std::string> labels;
  for (const MethodSpec& spec : cfg.methods) {
    std::string base = method_name(spec.kind);
    std::string label = base;
    std::size_t n = 1;
    for (const std::string& prev : labels)
      if (prev == base || prev.rfind(base + "-", 0) == 0) ++n;
    if (n > 1) label = base + "-" + std::to_string(n);
    labels.push_back(label);
  }
  return labels;
}

void print_group_counts(const DatasetConfig& cfg, const Dataset& ds) {
  std::size_t k = cfg.cues.size();
  for (Split sp : {Split::train, Split::val, Split::test}) {
    std::vector<std::size_t> counts = count_groups(cfg, ds.split(sp));
    for (std::size_t y = 0; y < cfg.classes; ++y) {
      std::cout << "  " << split_name(sp) << " class " << y << ": ";
      for (std::size_t down = (std::size_t(1) << k); down-- > 0;) {
        std::cout << counts[(y << k) | down];
        if (down > 0) std::cout << "/";
      }
      std::cout << "\n";
    }
  }
}

Dataset load_or_generate(const ExperimentConfig& cfg, bool announce) {
  std::string dir = dataset_location(cfg);
  if (!fs::exists(dir + "/manifest.json")) {
    if (announce) std::cout << "generating dataset at " << dir << "\n";
    Dataset ds = generate_dataset(cfg.dataset);
    fs::create_directories(dir);
    save_dataset(ds, dir);
    return ds;
  }
  Dataset ds = load_dataset(dir);
  if (config_hash(ds.config) != config_hash(cfg.dataset))
    throw DataError("dataset at '" + dir + "' was generated from a different config");
  return ds;
}

}  // namespace

void cmd_generate(const std::string& config_path) {
  ExperimentConfig cfg = load_experiment_config(config_path);
  std::string dir = dataset_location(cfg);
  if (fs::exists(dir + "/manifest.json")) {
    Dataset existing = load_dataset(dir);
    if (config_hash(existing.config) != config_hash(cfg.dataset))
      throw DataError("dataset at '" + dir + "' was generated from a different config");
    std::cout << "dataset " << dir << " already exists, hash matches\n";
    return;
  }
  Dataset ds = generate_dataset(cfg.dataset);
  fs::create_directories(dir);
  save_dataset(ds, dir);
  std::cout << "dataset " << dir << " written, config hash "
            << hex64(config_hash(cfg.dataset)) << "\n";
  std::cout << "group counts (descending agreement bits):\n";
  print_group_counts(cfg.dataset, ds);
}

void cmd_train(const std::string& config_path, const std::vector<std::string>& method_filter,
               const std::vector<std::uint64_t>& seed_override) {
  ExperimentConfig cfg = load_experiment_config(config_path);
  std::vector<std::uint64_t> seeds = seed_override.empty() ? cfg.seeds : seed_override;
  Dataset ds = load_or_generate(cfg, true);

  std::vector<std::string> labels = method_labels(cfg);
  std::vector<std::size_t> chosen;
  for (std::size_t m = 0; m < cfg.methods.size(); ++m) {
    if (method_filter.empty()) {
      chosen.push_back(m);
      continue;
    }
    std::string kind = method_name(cfg.methods[m].kind);
    for (const std::string& want : method_filter)
      if (want == kind || want == labels[m]) {
        chosen.push_back(m);
        break;
      }
  }
  if (chosen.empty()) throw ConfigError("cmd_train: no method matches the filter");

  for (std::size_t m : chosen) {
    std::vector<RecordRow> rows;
    for (std::uint64_t seed : seeds) {
      RunRecord rec = run_single(cfg, ds, cfg.methods[m], labels[m], seed);
      std::cout << labels[m] << " seed " << seed << ": epoch " << rec.selected_epoch
                << ", id_acc " << fmt3(rec.test.id_acc) << ", combined gap "
                << fmt3(rec.test.gaps.combined_gap) << ", wall "
                << fmt3(rec.wall_clock_sec) << "s\n";
      rows.push_back(parse_run_record(run_record_json(ds.config, rec)));
    }
    MethodSummary ms = summarize_records(rows)[0];
    std::cout << labels[m] << " over " << ms.n_seeds << " seeds: id_acc "
              << fmt3(ms.id_acc.mean) << " ± " << fmt3(ms.id_acc.stdev);
    for (std::size_t c = 0; c < ms.cue_names.size(); ++c)
      std::cout << ", " << ms.cue_names[c] << " gap " << fmt3(ms.cue_gaps[c].mean) << " ± "
                << fmt3(ms.cue_gaps[c].stdev);
    std::cout << ", combined " << fmt3(ms.combined_gap.mean) << " ± "
              << fmt3(ms.combined_gap.stdev) << "\n";
  }
}

void cmd_eval(const std::string& checkpoint_path, const std::string& dataset_dir, bool watermark,
              std::size_t focus_class) {
  LoadedCheckpoint ck = load_checkpoint(resolve_path(checkpoint_path));
  Dataset ds = load_dataset(resolve_path(dataset_dir));
  if (ck.meta.dataset_hash != hex64(config_hash(ds.config)))
    throw DataError("cmd_eval: checkpoint dataset hash " + ck.meta.dataset_hash +
                    " does not match dataset " + hex64(config_hash(ds.config)));

  AggregationMode mode = aggregation_from_name(ck.meta.aggregation);
  PredictionTable clean =
      predict_table(ds.config, ck.params, ds.test, mode, ck.meta.eval_head, "test");
  MetricsReport report = evaluate(ds.config, clean);
  if (watermark) {
    PredictionTable perturbed =
        predict_table(ds.config, ck.params, watermark_perturbed(ds.config, ds.test), mode,
                      ck.meta.eval_head, "test-wm");
    report.has_perturbation = true;
    report.perturbation = perturbation_gaps(clean, perturbed, focus_class);
  }
  std::cout << report_json(ds.config, report) << "\n";
}

void cmd_dynamics(const std::string& trajectory_path, const std::string& out_csv) {
  json traj = parse_json(read_file(resolve_path(trajectory_path)), "trajectory");
  if (!traj.contains("epochs") || !traj.contains("cues"))
    throw DataError("trajectory: missing epochs or cues");
  std::string csv = dynamics_csv_text(traj);
  if (out_csv.empty()) {
    std::cout << csv;
    return;
  }
  std::string path = resolve_path(out_csv);
  open_out(path) << csv;
  std::cout << "dynamics written to " << path << "\n";
}

void cmd_report(const std::vector<std::string>& paths, const std::string& out_dir) {
  std::vector<std::string> files;
  for (const std::string& arg : paths) {
    std::string path = resolve_path(arg);
    if (fs::is_directory(path)) {
      for (const auto& entry : fs::recursive_directory_iterator(path))
        if (entry.is_regular_file() && entry.path().filename() == "record.json")
          files.push_back(entry.path().string());
    } else {
      files.push_back(path);
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("cmd_report: no run records found");

  std::vector<RecordRow> rows;
  for (const std::string& file : files) rows.push_back(parse_run_record(read_file(file)));
  ReportTable table = build_report(summarize_records(rows));
  std::cout << table.text;
  if (!out_dir.empty()) {
    std::string dir = resolve_path(out_dir);
    fs::create_directories(dir);
    open_out(dir + "/report.csv") << table.csv;
    open_out(dir + "/report.txt") << table.text;
    std::cout << "report written to " << dir << "\n";
  }
}

}  // namespace shortcutlab
