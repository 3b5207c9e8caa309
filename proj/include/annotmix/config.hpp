#pragma once

#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "annotmix/annosim.hpp"
#include "annotmix/training.hpp"

namespace annotmix {

// Configuration problems carry the dotted field path so the operator can fix
// the exact key; the CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& field, const std::string& what)
      : std::runtime_error(field + ": " + what) {}
};

namespace cfg {

inline std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

inline const nlohmann::json& require(const nlohmann::json& j, const std::string& key,
                                     const std::string& path) {
  if (!j.is_object() || !j.contains(key)) throw ConfigError(join(path, key), "missing required key");
  return j.at(key);
}

inline std::string get_string(const nlohmann::json& j, const std::string& key,
                              const std::string& path) {
  const auto& v = require(j, key, path);
  if (!v.is_string()) throw ConfigError(join(path, key), "expected a string");
  return v.get<std::string>();
}

inline std::string get_string_or(const nlohmann::json& j, const std::string& key,
                                 const std::string& path, const std::string& fallback) {
  if (!j.is_object() || !j.contains(key)) return fallback;
  return get_string(j, key, path);
}

inline double get_double(const nlohmann::json& j, const std::string& key, const std::string& path,
                         std::optional<double> fallback = std::nullopt) {
  if (!j.is_object() || !j.contains(key)) {
    if (fallback) return *fallback;
    throw ConfigError(join(path, key), "missing required key");
  }
  const auto& v = j.at(key);
  if (!v.is_number()) throw ConfigError(join(path, key), "expected a number");
  return v.get<double>();
}

inline long long get_int(const nlohmann::json& j, const std::string& key, const std::string& path,
                         std::optional<long long> fallback = std::nullopt) {
  if (!j.is_object() || !j.contains(key)) {
    if (fallback) return *fallback;
    throw ConfigError(join(path, key), "missing required key");
  }
  const auto& v = j.at(key);
  if (!v.is_number_integer()) throw ConfigError(join(path, key), "expected an integer");
  return v.get<long long>();
}

inline bool get_bool(const nlohmann::json& j, const std::string& key, const std::string& path,
                     bool fallback) {
  if (!j.is_object() || !j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (!v.is_boolean()) throw ConfigError(join(path, key), "expected a boolean");
  return v.get<bool>();
}

inline std::pair<double, double> get_range(const nlohmann::json& j, const std::string& key,
                                           const std::string& path, double lo, double hi) {
  if (!j.is_object() || !j.contains(key)) return {lo, hi};
  const auto& v = j.at(key);
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
    throw ConfigError(join(path, key), "expected a two-number array [lo, hi]");
  return {v[0].get<double>(), v[1].get<double>()};
}

}  // namespace cfg

// File locations shared by every subcommand.
struct DataPaths {
  std::string train_features;
  std::string train_labels;   // optional for train, required for simulate/true_base
  std::string annotations;    // optional for simulate (it writes them)
  std::string val_features, val_labels;
  std::string test_features, test_labels;
  std::string test_table;        // full simulated prediction table on the test split
  std::string test_annotations;  // participation-masked subset of that table
  int num_classes = 0;
  int num_annotators = 0;
};

inline DataPaths parse_data_paths(const nlohmann::json& root) {
  const auto& j = cfg::require(root, "data", "");
  if (!j.is_object()) throw ConfigError("data", "expected an object");
  DataPaths p;
  p.train_features = cfg::get_string(j, "train_features", "data");
  p.train_labels = cfg::get_string_or(j, "train_labels", "data", "");
  p.annotations = cfg::get_string_or(j, "annotations", "data", "");
  p.val_features = cfg::get_string_or(j, "val_features", "data", "");
  p.val_labels = cfg::get_string_or(j, "val_labels", "data", "");
  p.test_features = cfg::get_string_or(j, "test_features", "data", "");
  p.test_labels = cfg::get_string_or(j, "test_labels", "data", "");
  p.test_table = cfg::get_string_or(j, "test_table", "data", "");
  p.test_annotations = cfg::get_string_or(j, "test_annotations", "data", "");
  p.num_classes = static_cast<int>(cfg::get_int(j, "num_classes", "data", 0));
  p.num_annotators = static_cast<int>(cfg::get_int(j, "num_annotators", "data", 0));
  if ((p.val_features.empty()) != (p.val_labels.empty()))
    throw ConfigError("data.val_labels", "val_features and val_labels must be given together");
  return p;
}

inline MixupConfig parse_mixup_config(const nlohmann::json& j, const std::string& path) {
  MixupConfig mc;
  if (j.is_null()) return mc;
  if (!j.is_object()) throw ConfigError(path, "expected an object");
  const std::string mode = cfg::get_string_or(j, "mode", path, "triple");
  try {
    mc.mode = parse_mixup_mode(mode);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(cfg::join(path, "mode"), e.what());
  }
  mc.alpha = cfg::get_double(j, "alpha", path, 1.0);
  return mc;
}

inline TrainConfig parse_train_config(const nlohmann::json& root) {
  const auto& j = cfg::require(root, "train", "");
  if (!j.is_object()) throw ConfigError("train", "expected an object");
  TrainConfig tc;
  const std::string method = cfg::get_string(j, "method", "train");
  try {
    tc.method = parse_train_method(method);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("train.method", e.what());
  }
  tc.epochs = static_cast<int>(cfg::get_int(j, "epochs", "train", 50));
  tc.batch_size = static_cast<std::size_t>(cfg::get_int(j, "batch_size", "train", 64));
  tc.learning_rate = cfg::get_double(j, "learning_rate", "train", 1e-2);
  tc.weight_decay = cfg::get_double(j, "weight_decay", "train", 0.0);
  tc.seed = static_cast<std::uint64_t>(cfg::get_int(j, "seed", "train", 0));
  tc.eta = cfg::get_double(j, "eta", "train", 0.9);
  tc.annotator_hidden = static_cast<std::size_t>(cfg::get_int(j, "annotator_hidden", "train", 128));
  tc.detach_embedding = cfg::get_bool(j, "detach_embedding", "train", false);
  if (j.contains("hidden")) {
    const auto& h = j.at("hidden");
    if (!h.is_array() || h.empty()) throw ConfigError("train.hidden", "expected a non-empty array");
    tc.hidden.clear();
    for (const auto& v : h) {
      if (!v.is_number_integer() || v.get<long long>() <= 0)
        throw ConfigError("train.hidden", "expected positive integers");
      tc.hidden.push_back(static_cast<std::size_t>(v.get<long long>()));
    }
  }
  tc.mixup = parse_mixup_config(j.contains("mixup") ? j.at("mixup") : nlohmann::json(nullptr),
                                "train.mixup");
  if (j.contains("force_lambda")) tc.force_lambda = cfg::get_double(j, "force_lambda", "train");
  try {
    validate(tc);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("train", e.what());
  }
  return tc;
}

inline SimConfig parse_sim_config(const nlohmann::json& root) {
  const auto& j = cfg::require(root, "sim", "");
  if (!j.is_object()) throw ConfigError("sim", "expected an object");
  SimConfig sc;
  sc.num_annotators = static_cast<int>(cfg::get_int(j, "num_annotators", "sim", 10));
  const auto epochs = cfg::get_range(j, "epochs_range", "sim", sc.epochs_min, sc.epochs_max);
  sc.epochs_min = static_cast<int>(epochs.first);
  sc.epochs_max = static_cast<int>(epochs.second);
  const auto lr = cfg::get_range(j, "learning_rate_range", "sim", sc.lr_min, sc.lr_max);
  sc.lr_min = lr.first;
  sc.lr_max = lr.second;
  const auto sub = cfg::get_range(j, "subsample_range", "sim", sc.subsample_min, sc.subsample_max);
  sc.subsample_min = sub.first;
  sc.subsample_max = sub.second;
  sc.target_avg_labels = cfg::get_double(j, "target_avg_labels", "sim", 2.0);
  sc.weak_hidden = static_cast<std::size_t>(cfg::get_int(j, "weak_hidden", "sim", 32));
  sc.weak_batch = static_cast<std::size_t>(cfg::get_int(j, "weak_batch", "sim", 32));
  sc.seed = static_cast<std::uint64_t>(cfg::get_int(j, "seed", "sim", 0));
  if (j.contains("participation")) {
    const auto& part = j.at("participation");
    if (!part.is_array()) throw ConfigError("sim.participation", "expected an array of numbers");
    for (const auto& v : part) {
      if (!v.is_number()) throw ConfigError("sim.participation", "expected an array of numbers");
      sc.participation.push_back(v.get<double>());
    }
  }
  try {
    validate(sc);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("sim", e.what());
  }
  return sc;
}

enum class PerfAurocSupport { all, annotated };

struct EvalConfig {
  std::string checkpoint;
  std::string metrics_csv;  // optional: source for curves.csv
  PerfAurocSupport perf_auroc_support = PerfAurocSupport::all;
  bool curves = false;
};

inline EvalConfig parse_eval_config(const nlohmann::json& root) {
  const auto& j = cfg::require(root, "eval", "");
  if (!j.is_object()) throw ConfigError("eval", "expected an object");
  EvalConfig ec;
  ec.checkpoint = cfg::get_string(j, "checkpoint", "eval");
  ec.metrics_csv = cfg::get_string_or(j, "metrics_csv", "eval", "");
  ec.curves = cfg::get_bool(j, "curves", "eval", !ec.metrics_csv.empty());
  const std::string support = cfg::get_string_or(j, "perf_auroc_support", "eval", "all");
  if (support == "all")
    ec.perf_auroc_support = PerfAurocSupport::all;
  else if (support == "annotated")
    ec.perf_auroc_support = PerfAurocSupport::annotated;
  else
    throw ConfigError("eval.perf_auroc_support", "expected all|annotated, got '" + support + "'");
  return ec;
}

// One benchmark grid cell shape: a named method with optional overrides on
// top of the shared train block.
struct BenchmarkCellSpec {
  std::string name;
  TrainMethod method = TrainMethod::annot_mix;
  std::optional<MixupMode> mixup_mode;
  std::optional<double> alpha;
};

struct BenchmarkConfig {
  std::vector<BenchmarkCellSpec> methods;
  std::vector<std::uint64_t> seeds;
};

inline BenchmarkConfig parse_benchmark_config(const nlohmann::json& root) {
  const auto& j = cfg::require(root, "benchmark", "");
  if (!j.is_object()) throw ConfigError("benchmark", "expected an object");
  BenchmarkConfig bc;
  const auto& methods = cfg::require(j, "methods", "benchmark");
  if (!methods.is_array() || methods.empty())
    throw ConfigError("benchmark.methods", "expected a non-empty array");
  for (std::size_t i = 0; i < methods.size(); ++i) {
    const auto& m = methods[i];
    const std::string path = "benchmark.methods[" + std::to_string(i) + "]";
    BenchmarkCellSpec spec;
    if (m.is_string()) {
      spec.name = m.get<std::string>();
      try {
        spec.method = parse_train_method(spec.name);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(path, e.what());
      }
    } else if (m.is_object()) {
      spec.name = cfg::get_string(m, "name", path);
      const std::string method = cfg::get_string(m, "method", path);
      try {
        spec.method = parse_train_method(method);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(cfg::join(path, "method"), e.what());
      }
      if (m.contains("mixup_mode")) {
        try {
          spec.mixup_mode = parse_mixup_mode(cfg::get_string(m, "mixup_mode", path));
        } catch (const std::invalid_argument& e) {
          throw ConfigError(cfg::join(path, "mixup_mode"), e.what());
        }
      }
      if (m.contains("alpha")) spec.alpha = cfg::get_double(m, "alpha", path);
    } else {
      throw ConfigError(path, "expected a method name or an object");
    }
    bc.methods.push_back(spec);
  }
  const auto& seeds = cfg::require(j, "seeds", "benchmark");
  if (!seeds.is_array() || seeds.empty())
    throw ConfigError("benchmark.seeds", "expected a non-empty array of integers");
  for (const auto& s : seeds) {
    if (!s.is_number_integer() || s.get<long long>() < 0)
      throw ConfigError("benchmark.seeds", "expected non-negative integers");
    bc.seeds.push_back(static_cast<std::uint64_t>(s.get<long long>()));
  }
  return bc;
}

inline nlohmann::json load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config", std::string("invalid JSON in ") + path + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config", "top level must be an object");
  return j;
}

}  // namespace annotmix
