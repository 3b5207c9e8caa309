#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "annotmix/annosim.hpp"
#include "annotmix/config.hpp"
#include "annotmix/data.hpp"
#include "annotmix/eval.hpp"
#include "annotmix/models.hpp"
#include "annotmix/runio.hpp"
#include "annotmix/training.hpp"

namespace annotmix {

// Stable scripting contract.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;

struct CliOptions {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;  // overrides the config's seed
  int jobs = 1;
};

namespace cli_detail {

struct LoadedSplits {
  Dataset train;
  AnnotationSet ann;
  std::optional<Dataset> val;
  std::optional<Dataset> test;
  std::optional<AnnotationSet> test_table;        // full simulated table
  std::optional<AnnotationSet> test_annotations;  // participation-masked table
};

inline Dataset load_split(const std::string& features, const std::string& labels,
                          int num_classes, const std::string& tag) {
  Dataset ds = load_dataset(features, labels, num_classes);
  ds.split_tag = tag;
  return ds;
}

// Loads whichever splits the config names; annotation bounds are checked
// against the split they belong to.
inline LoadedSplits load_splits(const DataPaths& paths, bool need_annotations) {
  LoadedSplits ls;
  ls.train = load_split(paths.train_features, paths.train_labels, paths.num_classes, "train");
  if (!paths.annotations.empty()) {
    if (paths.num_annotators <= 0)
      throw ConfigError("data.num_annotators", "required when data.annotations is set");
    ls.ann = load_annotations(paths.annotations, paths.num_annotators,
                              static_cast<int>(ls.train.size()), ls.train.num_classes);
  } else if (need_annotations) {
    throw ConfigError("data.annotations", "missing required key");
  }
  if (ls.train.num_classes == 0 && ls.ann.num_annotators > 0) {
    int max_label = 0;
    for (const Triple& t : ls.ann.records) max_label = std::max(max_label, t.label);
    ls.train.num_classes = max_label + 1;
  }
  if (!paths.val_features.empty())
    ls.val = load_split(paths.val_features, paths.val_labels, ls.train.num_classes, "val");
  if (!paths.test_features.empty())
    ls.test = load_split(paths.test_features, paths.test_labels, ls.train.num_classes, "test");
  if (!paths.test_table.empty()) {
    if (!ls.test) throw ConfigError("data.test_table", "requires data.test_features");
    ls.test_table = load_annotations(paths.test_table, paths.num_annotators,
                                     static_cast<int>(ls.test->size()), ls.train.num_classes);
  }
  if (!paths.test_annotations.empty()) {
    if (!ls.test) throw ConfigError("data.test_annotations", "requires data.test_features");
    ls.test_annotations = load_annotations(paths.test_annotations, paths.num_annotators,
                                           static_cast<int>(ls.test->size()), ls.train.num_classes);
  }
  return ls;
}

inline std::string describe_dataset(const Dataset& ds) {
  return ds.split_tag + ": " + std::to_string(ds.size()) + " x " + std::to_string(ds.dim()) +
         (ds.has_labels() ? ", labeled" : ", unlabeled") +
         ", C=" + std::to_string(ds.num_classes);
}

inline void add_datapath_inputs(RunManifest& manifest, const DataPaths& p) {
  for (const std::string& path :
       {p.train_features, p.train_labels, p.annotations, p.val_features, p.val_labels,
        p.test_features, p.test_labels, p.test_table, p.test_annotations})
    if (!path.empty()) manifest.add_input(path);
}

}  // namespace cli_detail

// --- simulate --------------------------------------------------------------

inline int cmd_simulate(const CliOptions& opts) {
  const Logger log;
  const nlohmann::json root = load_config_file(opts.config);
  const DataPaths paths = parse_data_paths(root);
  SimConfig sc = parse_sim_config(root);
  if (opts.seed) sc.seed = *opts.seed;
  if (paths.train_labels.empty())
    throw ConfigError("data.train_labels", "simulate requires true training labels");

  const Dataset train =
      cli_detail::load_split(paths.train_features, paths.train_labels, paths.num_classes, "train");
  log.info("simulate: " + cli_detail::describe_dataset(train) + ", M=" +
           std::to_string(sc.num_annotators) + ", seed=" + std::to_string(sc.seed));

  const auto run_dir = create_run_dir(opts.out);
  RunManifest manifest("simulate", root, sc.seed);
  manifest.add_input(paths.train_features);
  manifest.add_input(paths.train_labels);

  const SimResult res = simulate_annotators(train, sc);
  save_annotations(res.annotations, (run_dir / "annotations.csv").string());
  manifest.add_artifact(run_dir / "annotations.csv");
  write_text_file(run_dir / "sim_report.json", to_json(res.report).dump(2) + "\n");
  manifest.add_artifact(run_dir / "sim_report.json");
  log.info("simulate: " + std::to_string(res.annotations.size()) + " annotations, false fraction " +
           std::to_string(res.report.false_fraction) + ", accuracy spread " +
           std::to_string(res.report.accuracy_spread()));

  // With a labeled test split the simulated annotators also predict every
  // test instance: the full table feeds perf-auroc (support=all) and its
  // participation-masked sibling feeds support=annotated.
  if (!paths.test_features.empty() && !paths.test_labels.empty()) {
    const Dataset test =
        cli_detail::load_split(paths.test_features, paths.test_labels, paths.num_classes, "test");
    manifest.add_input(paths.test_features);
    manifest.add_input(paths.test_labels);
    const AnnotationSet table = full_prediction_table(res.annotator_nets, test);
    save_annotations(table, (run_dir / "test_table.csv").string());
    manifest.add_artifact(run_dir / "test_table.csv");
    Rng test_mask = Rng(sc.seed).derive(13);
    const std::size_t budget = static_cast<std::size_t>(
        std::llround(sc.target_avg_labels * static_cast<double>(test.size())));
    const auto counts = detail::allocate_label_counts(res.participation, budget, test.size());
    const AnnotationSet masked = mask_table(table, test.size(), counts, test_mask);
    save_annotations(masked, (run_dir / "test_annotations.csv").string());
    manifest.add_artifact(run_dir / "test_annotations.csv");
  }

  manifest.finish(run_dir);
  verify_manifest(run_dir);
  log.info("simulate: wrote " + run_dir.string());
  return kExitOk;
}

// --- train -----------------------------------------------------------------

inline int cmd_train(const CliOptions& opts) {
  const Logger log;
  const nlohmann::json root = load_config_file(opts.config);
  const DataPaths paths = parse_data_paths(root);
  TrainConfig tc = parse_train_config(root);
  if (opts.seed) tc.seed = *opts.seed;
  if (tc.method == TrainMethod::true_base && paths.train_labels.empty())
    throw ConfigError("data.train_labels", "method true_base requires true training labels");

  const bool need_ann = tc.method != TrainMethod::true_base;
  const auto ls = cli_detail::load_splits(paths, need_ann);
  log.info("train: method=" + to_string(tc.method) + ", " + cli_detail::describe_dataset(ls.train) +
           ", " + std::to_string(ls.ann.size()) + " annotations, seed=" + std::to_string(tc.seed));

  const auto run_dir = create_run_dir(opts.out);
  RunManifest manifest("train", root, tc.seed);
  cli_detail::add_datapath_inputs(manifest, paths);

  const TrainState st = train(ls.train, ls.ann, tc, ls.val ? &*ls.val : nullptr,
                              ls.test ? &*ls.test : nullptr);

  write_metrics_csv(run_dir / "metrics.csv", st.log);
  manifest.add_artifact(run_dir / "metrics.csv");
  save_checkpoint(st.model, (run_dir / "last.ckpt").string());
  manifest.add_artifact(run_dir / "last.ckpt");
  if (st.best_model) {
    save_checkpoint(*st.best_model, (run_dir / "best.ckpt").string());
    manifest.add_artifact(run_dir / "best.ckpt");
    log.info("train: best epoch " + std::to_string(st.best_epoch) + " (val acc " +
             std::to_string(st.best_val_acc) + ")");
  }
  if (st.unlabeled_excluded > 0)
    log.info("train: " + std::to_string(st.unlabeled_excluded) +
             " unannotated instances excluded from voting");
  manifest.finish(run_dir);
  verify_manifest(run_dir);
  log.info("train: final loss " + std::to_string(st.log.back().train_loss) + ", wrote " +
           run_dir.string());
  return kExitOk;
}

// --- evaluate --------------------------------------------------------------

namespace cli_detail {

// Selected columns of a training metrics.csv, re-emitted for plotting.
inline std::string curves_csv_text(const std::string& metrics_text) {
  std::istringstream in(metrics_text);
  std::string header;
  if (!std::getline(in, header)) throw std::runtime_error("curves: metrics.csv is empty");
  const auto cols = detail::split_csv_line(header);
  std::vector<std::size_t> keep;
  std::string out_header;
  for (std::size_t c = 0; c < cols.size(); ++c)
    if (cols[c] == "epoch" || cols[c] == "annot_acc_train" || cols[c] == "clf_acc_test" ||
        cols[c] == "clf_acc_val") {
      keep.push_back(c);
      out_header += (out_header.empty() ? "" : ",") + cols[c];
    }
  std::string out = out_header + "\n";
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = detail::split_csv_line(line);
    std::string row;
    for (std::size_t k : keep) {
      if (k >= cells.size()) throw std::runtime_error("curves: ragged metrics.csv row");
      row += (row.empty() ? "" : ",") + cells[k];
    }
    out += row + "\n";
  }
  return out;
}

}  // namespace cli_detail

inline int cmd_evaluate(const CliOptions& opts) {
  const Logger log;
  const nlohmann::json root = load_config_file(opts.config);
  const DataPaths paths = parse_data_paths(root);
  const EvalConfig ec = parse_eval_config(root);

  const auto ls = cli_detail::load_splits(paths, false);
  if (!ls.test || !ls.test->has_labels())
    throw ConfigError("data.test_labels", "evaluate requires a labeled test split");
  const ModelPair model = load_checkpoint(ec.checkpoint);
  log.info("evaluate: checkpoint " + ec.checkpoint + ", " + cli_detail::describe_dataset(*ls.test));

  const auto run_dir = create_run_dir(opts.out);
  RunManifest manifest("evaluate", root, 0);
  cli_detail::add_datapath_inputs(manifest, paths);
  manifest.add_input(ec.checkpoint);

  MetricsReport report;
  report.method = model.has_annotator ? "annot_mix" : "two_stage";
  report.config_hash = hex64(fnv1a64(root.dump()));
  report.clf_acc = eval_clf_acc(model.classifier, *ls.test);
  if (!ls.ann.records.empty()) {
    const TripleSet ts = build_triples(ls.train, ls.ann);
    report.annot_acc = eval_annot_acc(model, ts.triples, ls.train);
  }
  // Support "all" scores every (instance, annotator) cell of the full table;
  // "annotated" restricts to the pairs the annotator actually labeled.
  const std::optional<AnnotationSet>& support =
      ec.perf_auroc_support == PerfAurocSupport::all ? ls.test_table : ls.test_annotations;
  if (support && model.has_annotator)
    report.perf_auroc_score = perf_auroc(model, *ls.test, *support);

  write_text_file(run_dir / "report.json", to_json(report).dump(2) + "\n");
  manifest.add_artifact(run_dir / "report.json");

  if (ec.curves && !ec.metrics_csv.empty()) {
    manifest.add_input(ec.metrics_csv);
    write_text_file(run_dir / "curves.csv",
                    cli_detail::curves_csv_text(read_text_file(ec.metrics_csv)));
    manifest.add_artifact(run_dir / "curves.csv");
  }

  manifest.finish(run_dir);
  verify_manifest(run_dir);
  log.info("evaluate: clf_acc " + std::to_string(report.clf_acc) + ", wrote " + run_dir.string());
  return kExitOk;
}

// --- benchmark ---------------------------------------------------------------

namespace cli_detail {

struct CellResult {
  std::string name;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double clf_acc_last = 0.0;
  std::optional<double> clf_acc_best;
  std::optional<double> annot_acc;
  std::optional<double> perf_auroc_score;
};

inline TrainConfig cell_train_config(TrainConfig base, const BenchmarkCellSpec& spec,
                                     std::uint64_t seed) {
  base.method = spec.method;
  base.seed = seed;
  switch (spec.method) {
    case TrainMethod::annot_mix:
      base.mixup.mode = MixupMode::triple;
      break;
    case TrainMethod::mv_mixup:
      base.mixup.mode = MixupMode::vanilla;
      break;
    default:
      base.mixup.mode = MixupMode::off;
      break;
  }
  if (spec.mixup_mode) base.mixup.mode = *spec.mixup_mode;
  if (spec.alpha) base.mixup.alpha = *spec.alpha;
  return base;
}

struct Aggregate {
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t n = 0;
};

inline Aggregate aggregate(const std::vector<double>& xs) {
  Aggregate a;
  a.n = xs.size();
  if (xs.empty()) return a;
  for (double x : xs) a.mean += x;
  a.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - a.mean) * (x - a.mean);
    a.stddev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return a;
}

inline std::string format_mean_std(const Aggregate& a) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f +- %.2f", 100.0 * a.mean, 100.0 * a.stddev);
  return buf;
}

}  // namespace cli_detail

inline int cmd_benchmark(const CliOptions& opts) {
  const Logger log;
  const nlohmann::json root = load_config_file(opts.config);
  const DataPaths paths = parse_data_paths(root);
  const TrainConfig base = parse_train_config(root);
  const BenchmarkConfig bc = parse_benchmark_config(root);
  const int jobs = std::max(1, opts.jobs);

  const auto ls = cli_detail::load_splits(paths, true);
  if (!ls.test || !ls.test->has_labels())
    throw ConfigError("data.test_labels", "benchmark requires a labeled test split");

  const auto run_dir = create_run_dir(opts.out);
  RunManifest manifest("benchmark", root, base.seed);
  cli_detail::add_datapath_inputs(manifest, paths);
  std::filesystem::create_directories(run_dir / "cells");

  struct Cell {
    BenchmarkCellSpec spec;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (const auto& spec : bc.methods)
    for (std::uint64_t seed : bc.seeds) cells.push_back({spec, seed});
  std::vector<cli_detail::CellResult> results(cells.size());
  log.info("benchmark: " + std::to_string(bc.methods.size()) + " methods x " +
           std::to_string(bc.seeds.size()) + " seeds, jobs=" + std::to_string(jobs));

  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t i = next.fetch_add(1); i < cells.size(); i = next.fetch_add(1)) {
      const Cell& cell = cells[i];
      cli_detail::CellResult& r = results[i];
      r.name = cell.spec.name;
      r.seed = cell.seed;
      const auto cell_dir = run_dir / "cells" / (cell.spec.name + "_seed" + std::to_string(cell.seed));
      try {
        const TrainConfig tc = cli_detail::cell_train_config(base, cell.spec, cell.seed);
        const TrainState st = train(ls.train, ls.ann, tc, ls.val ? &*ls.val : nullptr,
                                    ls.test ? &*ls.test : nullptr);
        std::filesystem::create_directories(cell_dir);
        write_metrics_csv(cell_dir / "metrics.csv", st.log);
        save_checkpoint(st.model, (cell_dir / "last.ckpt").string());
        if (st.best_model) save_checkpoint(*st.best_model, (cell_dir / "best.ckpt").string());

        MetricsReport report;
        report.method = cell.spec.name;
        report.seed = cell.seed;
        report.config_hash = hex64(fnv1a64(root.dump()));
        report.clf_acc = eval_clf_acc(st.model.classifier, *ls.test);
        if (st.best_model)
          report.clf_acc_best = eval_clf_acc(st.best_model->classifier, *ls.test);
        if (!st.log.empty() && st.log.back().annot_acc_train)
          report.annot_acc = st.log.back().annot_acc_train;
        if (ls.test_table && st.model.has_annotator)
          report.perf_auroc_score = perf_auroc(st.model, *ls.test, *ls.test_table);
        write_text_file(cell_dir / "report.json", to_json(report).dump(2) + "\n");

        r.ok = true;
        r.clf_acc_last = report.clf_acc;
        r.clf_acc_best = report.clf_acc_best;
        r.annot_acc = report.annot_acc;
        r.perf_auroc_score = report.perf_auroc_score;
        log.info("benchmark: " + r.name + " seed " + std::to_string(r.seed) + " clf_acc " +
                 std::to_string(r.clf_acc_last));
      } catch (const std::exception& e) {
        r.ok = false;
        r.error = e.what();
        log.error("benchmark: cell " + r.name + " seed " + std::to_string(r.seed) +
                  " failed: " + r.error);
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < std::min<int>(jobs, static_cast<int>(cells.size())); ++t)
    pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  // Per-method aggregation over the seeds that succeeded.
  std::string summary_csv =
      "method,policy,clf_acc_mean,clf_acc_std,annot_acc_mean,annot_acc_std,"
      "perf_auroc_mean,perf_auroc_std,n_seeds,failed_seeds,flags\n";
  std::ostringstream table;
  table << "method            | clf-acc last [%] | clf-acc best [%] | perf-auroc [%] | seeds\n";
  table << "------------------+------------------+------------------+----------------+------\n";
  for (const auto& spec : bc.methods) {
    std::vector<double> last, best, annot, perf;
    std::size_t failed = 0;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (cells[i].spec.name != spec.name) continue;
      if (!results[i].ok) {
        ++failed;
        continue;
      }
      last.push_back(results[i].clf_acc_last);
      if (results[i].clf_acc_best) best.push_back(*results[i].clf_acc_best);
      if (results[i].annot_acc) annot.push_back(*results[i].annot_acc);
      if (results[i].perf_auroc_score) perf.push_back(*results[i].perf_auroc_score);
    }
    const auto agg_last = cli_detail::aggregate(last);
    const auto agg_best = cli_detail::aggregate(best.empty() ? last : best);
    const auto agg_annot = cli_detail::aggregate(annot);
    const auto agg_perf = cli_detail::aggregate(perf);
    std::string flags;
    if (agg_last.n == 1) flags += "single_seed;";
    if (best.empty()) flags += "no_validation_best_is_last;";
    if (failed > 0) flags += "has_failed_cells;";
    for (const char* policy : {"last", "best"}) {
      const auto& clf = std::string(policy) == "last" ? agg_last : agg_best;
      summary_csv += spec.name;
      summary_csv += ",";
      summary_csv += policy;
      summary_csv += "," + detail::format_double(clf.mean) + "," + detail::format_double(clf.stddev);
      summary_csv += "," + detail::format_double(agg_annot.mean) + "," +
                     detail::format_double(agg_annot.stddev);
      summary_csv += "," + detail::format_double(agg_perf.mean) + "," +
                     detail::format_double(agg_perf.stddev);
      summary_csv += "," + std::to_string(clf.n) + "," + std::to_string(failed) + "," + flags + "\n";
    }
    if (agg_last.n == 1)
      log.info("benchmark: " + spec.name + " ran with a single seed; stddev reported as 0");
    char row[256];
    std::snprintf(row, sizeof(row), "%-18s| %-17s| %-17s| %-15s| %zu\n", spec.name.c_str(),
                  cli_detail::format_mean_std(agg_last).c_str(),
                  cli_detail::format_mean_std(agg_best).c_str(),
                  agg_perf.n ? cli_detail::format_mean_std(agg_perf).c_str() : "n/a",
                  agg_last.n);
    table << row;
  }
  for (std::size_t i = 0; i < cells.size(); ++i)
    if (!results[i].ok)
      table << "FAILED: " << results[i].name << " seed " << results[i].seed << ": "
            << results[i].error << "\n";

  write_text_file(run_dir / "summary.csv", summary_csv);
  manifest.add_artifact(run_dir / "summary.csv");
  write_text_file(run_dir / "summary.txt", table.str());
  manifest.add_artifact(run_dir / "summary.txt");
  manifest.finish(run_dir);
  verify_manifest(run_dir);
  log.info("benchmark: wrote " + run_dir.string());
  std::cout << table.str();
  return kExitOk;
}

// --- dispatch ---------------------------------------------------------------

inline int run_command(const std::string& command, const CliOptions& opts) {
  try {
    if (command == "simulate") return cmd_simulate(opts);
    if (command == "train") return cmd_train(opts);
    if (command == "evaluate") return cmd_evaluate(opts);
    if (command == "benchmark") return cmd_benchmark(opts);
    std::cerr << "unknown command: " << command << "\n";
    return kExitConfig;
  } catch (const TrainingDiverged& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    const std::string what = e.what();
    if (what.find("non-finite") != std::string::npos) {
      std::cerr << "numerical failure: " << what << "\n";
      return kExitNumerical;
    }
    std::cerr << "error: " << what << "\n";
    return kExitConfig;
  }
}

}  // namespace annotmix
