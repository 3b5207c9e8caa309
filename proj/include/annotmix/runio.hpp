#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "annotmix/data.hpp"
#include "annotmix/training.hpp"

namespace annotmix {

inline constexpr const char* kBuildId = "annotmix 0.1.0";

// --- logging -----------------------------------------------------------------

enum class LogLevel { error = 0, info = 1, debug = 2 };

inline LogLevel log_level_from_env() {
  const char* v = std::getenv("ANNOTMIX_LOG");
  if (!v) return LogLevel::info;
  const std::string s(v);
  if (s == "error") return LogLevel::error;
  if (s == "info") return LogLevel::info;
  if (s == "debug") return LogLevel::debug;
  throw std::runtime_error("ANNOTMIX_LOG: expected error|info|debug, got '" + s + "'");
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

class Logger {
 public:
  explicit Logger(LogLevel level = log_level_from_env()) : level_(level) {}

  void error(const std::string& msg) const { emit(LogLevel::error, "error", msg); }
  void info(const std::string& msg) const { emit(LogLevel::info, "info", msg); }
  void debug(const std::string& msg) const { emit(LogLevel::debug, "debug", msg); }

 private:
  void emit(LogLevel at, const char* tag, const std::string& msg) const {
    if (static_cast<int>(at) > static_cast<int>(level_)) return;
    static std::mutex mu;
    const std::lock_guard<std::mutex> lock(mu);
    std::cerr << utc_timestamp() << " [" << tag << "] " << msg << "\n";
  }

  LogLevel level_;
};

// --- checksums ---------------------------------------------------------------

inline std::uint64_t fnv1a64(const char* data, std::size_t n,
                             std::uint64_t hash = 0xcbf29ce484222325ULL) {
  for (std::size_t i = 0; i < n; ++i) {
    hash ^= static_cast<unsigned char>(data[i]);
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

inline std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string file_checksum(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for checksum: " + path);
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
    hash = fnv1a64(buf, static_cast<std::size_t>(in.gcount()), hash);
  return hex64(hash);
}

// --- run directories -----------------------------------------------------------

// Run directories are append-only: a rerun must target a fresh directory so
// earlier artifacts can never be silently replaced.
inline std::filesystem::path create_run_dir(const std::string& out) {
  namespace fs = std::filesystem;
  const fs::path dir(out);
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw std::runtime_error("--out exists and is not a directory: " + out);
    if (!fs::is_empty(dir))
      throw std::runtime_error("--out directory is not empty (runs are append-only): " + out);
  } else {
    fs::create_directories(dir);
  }
  return dir;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// --- manifest -----------------------------------------------------------------

// Everything needed to re-execute the run bit-identically on this platform
// plus checksums over inputs and outputs.
class RunManifest {
 public:
  RunManifest(std::string command, nlohmann::json config_snapshot, std::uint64_t seed) {
    j_["command"] = std::move(command);
    j_["config"] = std::move(config_snapshot);
    j_["seed"] = seed;
    j_["build"] = kBuildId;
    j_["started"] = utc_timestamp();
    j_["inputs"] = nlohmann::json::array();
    j_["artifacts"] = nlohmann::json::array();
  }

  void add_input(const std::string& path) {
    j_["inputs"].push_back({{"path", path}, {"fnv1a64", file_checksum(path)}});
  }

  void add_artifact(const std::filesystem::path& path) {
    j_["artifacts"].push_back({{"path", path.filename().string()},
                               {"bytes", std::filesystem::file_size(path)},
                               {"fnv1a64", file_checksum(path.string())}});
  }

  void finish(const std::filesystem::path& run_dir) {
    j_["finished"] = utc_timestamp();
    std::ofstream out(run_dir / "manifest.json");
    if (!out) throw std::runtime_error("cannot write manifest.json in " + run_dir.string());
    out << j_.dump(2) << "\n";
  }

  const nlohmann::json& json() const { return j_; }

 private:
  nlohmann::json j_;
};

// Re-check a written manifest: every artifact exists and checksums match.
inline void verify_manifest(const std::filesystem::path& run_dir) {
  const auto j = nlohmann::json::parse(read_text_file((run_dir / "manifest.json").string()));
  for (const auto& a : j.at("artifacts")) {
    const std::filesystem::path p = run_dir / a.at("path").get<std::string>();
    if (!std::filesystem::exists(p))
      throw std::runtime_error("manifest artifact missing: " + p.string());
    if (file_checksum(p.string()) != a.at("fnv1a64").get<std::string>())
      throw std::runtime_error("manifest checksum mismatch: " + p.string());
  }
}

// --- metrics.csv ----------------------------------------------------------------

// Columns: epoch, train_loss, annot_acc_train, then clf_acc_val / clf_acc_test
// when the run had those splits, then lr. Optional columns are uniformly
// present or absent across a run's rows.
inline std::string metrics_csv_text(const std::vector<EpochRow>& log) {
  const bool has_annot = !log.empty() && log.front().annot_acc_train.has_value();
  const bool has_val = !log.empty() && log.front().clf_acc_val.has_value();
  const bool has_test = !log.empty() && log.front().clf_acc_test.has_value();
  std::string out = "epoch,train_loss";
  if (has_annot) out += ",annot_acc_train";
  if (has_val) out += ",clf_acc_val";
  if (has_test) out += ",clf_acc_test";
  out += ",lr\n";
  for (const EpochRow& r : log) {
    out += std::to_string(r.epoch);
    out += ",";
    out += detail::format_double(r.train_loss);
    if (has_annot) {
      out += ",";
      out += detail::format_double(*r.annot_acc_train);
    }
    if (has_val) {
      out += ",";
      out += detail::format_double(*r.clf_acc_val);
    }
    if (has_test) {
      out += ",";
      out += detail::format_double(*r.clf_acc_test);
    }
    out += ",";
    out += detail::format_double(r.lr);
    out += "\n";
  }
  return out;
}

inline void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochRow>& log) {
  write_text_file(path, metrics_csv_text(log));
}

}  // namespace annotmix
