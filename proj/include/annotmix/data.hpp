#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "annotmix/matrix.hpp"
#include "annotmix/rng.hpp"

namespace annotmix {

// Instances, optional true labels, class count. Features are one instance
// per row.
struct Dataset {
  Matrix features;               // N x D
  std::vector<int> true_labels;  // empty when the split is unlabeled
  int num_classes = 0;
  std::string split_tag = "train";

  std::size_t size() const { return features.rows(); }
  std::size_t dim() const { return features.cols(); }
  bool has_labels() const { return !true_labels.empty(); }
};

// One noisy annotation: annotator `annotator` assigned class `label` to
// instance `instance`. Also the unit of the mixing population, where the
// same three indices identify (x_n, a_m, z_nm).
struct Triple {
  int instance = 0;
  int annotator = 0;
  int label = 0;

  bool operator==(const Triple&) const = default;
};

// Sparse annotations: absence of a record means the annotator skipped the
// instance. At most one record per (instance, annotator) pair.
struct AnnotationSet {
  std::vector<Triple> records;
  int num_annotators = 0;

  std::size_t size() const { return records.size(); }
};

// The mixing population: exactly one triple per annotation record, in a
// deterministic order until a stream shuffles a copy.
struct TripleSet {
  std::vector<Triple> triples;

  std::size_t size() const { return triples.size(); }
  bool empty() const { return triples.empty(); }
};

struct BatchPair {
  std::vector<Triple> first;
  std::vector<Triple> second;
};

namespace detail {

inline std::runtime_error csv_error(const std::string& path, std::size_t line,
                                    const std::string& what) {
  return std::runtime_error(path + " line " + std::to_string(line) + ": " + what);
}

inline std::vector<std::string> split_csv_line(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> cells;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      cells.push_back(line.substr(start));
      return cells;
    }
    cells.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

inline double parse_cell(const std::string& cell, const std::string& path, std::size_t line) {
  std::size_t consumed = 0;
  double v = 0.0;
  try {
    v = std::stod(cell, &consumed);
  } catch (const std::exception&) {
    throw csv_error(path, line, "non-numeric cell '" + cell + "'");
  }
  if (consumed != cell.size()) throw csv_error(path, line, "non-numeric cell '" + cell + "'");
  if (!std::isfinite(v)) throw csv_error(path, line, "non-finite cell '" + cell + "'");
  return v;
}

inline int parse_index_cell(const std::string& cell, const std::string& path, std::size_t line) {
  const double v = parse_cell(cell, path, line);
  const int i = static_cast<int>(v);
  if (static_cast<double>(i) != v || i < 0)
    throw csv_error(path, line, "expected a non-negative integer, got '" + cell + "'");
  return i;
}

inline std::ifstream open_or_throw(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return in;
}

// %.17g prints doubles so they parse back bit-identically.
inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

// Features CSV with header f0,...,f{D-1}; optional labels CSV with header
// `label`. num_classes == 0 infers C as max label + 1.
inline Dataset load_dataset(const std::string& features_path, const std::string& labels_path = "",
                            int num_classes = 0) {
  Dataset ds;
  {
    auto in = detail::open_or_throw(features_path);
    std::string line;
    std::size_t line_no = 0;
    std::size_t dim = 0;
    std::vector<double> values;
    while (std::getline(in, line)) {
      ++line_no;
      const auto cells = detail::split_csv_line(line);
      if (line_no == 1) {
        dim = cells.size();
        for (std::size_t j = 0; j < dim; ++j)
          if (cells[j] != "f" + std::to_string(j))
            throw detail::csv_error(features_path, 1, "expected header f0,...,f" +
                                                          std::to_string(dim - 1) + ", got '" +
                                                          cells[j] + "'");
        continue;
      }
      if (cells.size() != dim)
        throw detail::csv_error(features_path, line_no,
                                "expected " + std::to_string(dim) + " cells, got " +
                                    std::to_string(cells.size()));
      for (const auto& cell : cells)
        values.push_back(detail::parse_cell(cell, features_path, line_no));
    }
    if (dim == 0) throw std::runtime_error(features_path + ": empty features file");
    const std::size_t rows = values.size() / dim;
    ds.features = Matrix(rows, dim, std::move(values));
  }
  if (!labels_path.empty()) {
    auto in = detail::open_or_throw(labels_path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto cells = detail::split_csv_line(line);
      if (cells.size() != 1)
        throw detail::csv_error(labels_path, line_no, "expected a single `label` column");
      if (line_no == 1) {
        if (cells[0] != "label")
          throw detail::csv_error(labels_path, 1, "expected header `label`, got '" + cells[0] + "'");
        continue;
      }
      ds.true_labels.push_back(detail::parse_index_cell(cells[0], labels_path, line_no));
    }
    if (ds.true_labels.size() != ds.size())
      throw std::runtime_error(labels_path + ": " + std::to_string(ds.true_labels.size()) +
                               " labels for " + std::to_string(ds.size()) + " instances");
    int max_label = 0;
    for (int y : ds.true_labels) max_label = std::max(max_label, y);
    ds.num_classes = num_classes > 0 ? num_classes : max_label + 1;
    for (std::size_t i = 0; i < ds.true_labels.size(); ++i)
      if (ds.true_labels[i] >= ds.num_classes)
        throw detail::csv_error(labels_path, i + 2,
                                "label " + std::to_string(ds.true_labels[i]) +
                                    " out of range for C=" + std::to_string(ds.num_classes));
  } else {
    ds.num_classes = num_classes;
  }
  if (ds.num_classes < 2 && !labels_path.empty())
    throw std::runtime_error(labels_path + ": need at least 2 classes, got " +
                             std::to_string(ds.num_classes));
  return ds;
}

// Annotations CSV with header instance,annotator,label. Duplicate
// (instance, annotator) pairs are rejected; bounds are checked against
// whichever of num_instances / num_classes are provided (> 0).
inline AnnotationSet load_annotations(const std::string& path, int num_annotators,
                                      int num_instances = 0, int num_classes = 0) {
  if (num_annotators <= 0) throw std::invalid_argument("load_annotations: num_annotators must be positive");
  AnnotationSet ann;
  ann.num_annotators = num_annotators;
  auto in = detail::open_or_throw(path);
  std::string line;
  std::size_t line_no = 0;
  std::unordered_set<long long> seen;
  while (std::getline(in, line)) {
    ++line_no;
    const auto cells = detail::split_csv_line(line);
    if (line_no == 1) {
      if (cells.size() != 3 || cells[0] != "instance" || cells[1] != "annotator" ||
          cells[2] != "label")
        throw detail::csv_error(path, 1, "expected header instance,annotator,label");
      continue;
    }
    if (line.empty()) continue;  // allow a trailing blank line
    if (cells.size() != 3)
      throw detail::csv_error(path, line_no, "expected 3 cells, got " + std::to_string(cells.size()));
    Triple t;
    t.instance = detail::parse_index_cell(cells[0], path, line_no);
    t.annotator = detail::parse_index_cell(cells[1], path, line_no);
    t.label = detail::parse_index_cell(cells[2], path, line_no);
    if (t.annotator >= num_annotators)
      throw detail::csv_error(path, line_no, "annotator " + std::to_string(t.annotator) +
                                                 " out of range for M=" +
                                                 std::to_string(num_annotators));
    if (num_instances > 0 && t.instance >= num_instances)
      throw detail::csv_error(path, line_no, "instance " + std::to_string(t.instance) +
                                                 " out of range for N=" +
                                                 std::to_string(num_instances));
    if (num_classes > 0 && t.label >= num_classes)
      throw detail::csv_error(path, line_no, "label " + std::to_string(t.label) +
                                                 " out of range for C=" + std::to_string(num_classes));
    const long long key = static_cast<long long>(t.instance) * num_annotators + t.annotator;
    if (!seen.insert(key).second)
      throw detail::csv_error(path, line_no, "duplicate annotation for instance " +
                                                 std::to_string(t.instance) + ", annotator " +
                                                 std::to_string(t.annotator));
    ann.records.push_back(t);
  }
  return ann;
}

inline void save_features(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (std::size_t j = 0; j < ds.dim(); ++j) out << (j ? ",f" : "f") << j;
  out << "\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const double* row = ds.features.row(i);
    for (std::size_t j = 0; j < ds.dim(); ++j) {
      if (j) out << ",";
      out << detail::format_double(row[j]);
    }
    out << "\n";
  }
}

inline void save_labels(const Dataset& ds, const std::string& path) {
  if (!ds.has_labels()) throw std::invalid_argument("save_labels: dataset has no labels");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "label\n";
  for (int y : ds.true_labels) out << y << "\n";
}

inline void save_annotations(const AnnotationSet& ann, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "instance,annotator,label\n";
  for (const Triple& t : ann.records)
    out << t.instance << "," << t.annotator << "," << t.label << "\n";
}

// One triple per record, in record order.
inline TripleSet build_triples(const Dataset& ds, const AnnotationSet& ann) {
  TripleSet ts;
  ts.triples = ann.records;
  for (const Triple& t : ts.triples)
    if (t.instance >= static_cast<int>(ds.size()) ||
        (ds.num_classes > 0 && t.label >= ds.num_classes))
      throw std::invalid_argument("build_triples: record (" + std::to_string(t.instance) + "," +
                                  std::to_string(t.annotator) + "," + std::to_string(t.label) +
                                  ") out of range");
  return ts;
}

// Two independent uniform shuffles of the same triples, zipped into
// equal-length batch pairs. Every triple appears exactly once per stream;
// the trailing partial batch is kept.
inline std::vector<BatchPair> paired_epoch_stream(const TripleSet& ts, std::size_t batch_size,
                                                  Rng& rng) {
  if (ts.empty()) throw std::invalid_argument("paired_epoch_stream: empty triple set");
  if (batch_size == 0) throw std::invalid_argument("paired_epoch_stream: batch_size must be positive");
  const auto p1 = rng.permutation(ts.size());
  const auto p2 = rng.permutation(ts.size());
  std::vector<BatchPair> batches;
  for (std::size_t start = 0; start < ts.size(); start += batch_size) {
    const std::size_t stop = std::min(start + batch_size, ts.size());
    BatchPair bp;
    bp.first.reserve(stop - start);
    bp.second.reserve(stop - start);
    for (std::size_t i = start; i < stop; ++i) {
      bp.first.push_back(ts.triples[p1[i]]);
      bp.second.push_back(ts.triples[p2[i]]);
    }
    batches.push_back(std::move(bp));
  }
  return batches;
}

// Record indices grouped by instance; index n lists positions in
// ann.records annotating instance n.
inline std::vector<std::vector<int>> group_by_instance(const AnnotationSet& ann,
                                                       std::size_t num_instances) {
  std::vector<std::vector<int>> groups(num_instances);
  for (std::size_t r = 0; r < ann.records.size(); ++r) {
    const int n = ann.records[r].instance;
    if (n >= static_cast<int>(num_instances))
      throw std::invalid_argument("group_by_instance: instance " + std::to_string(n) +
                                  " out of range");
    groups[n].push_back(static_cast<int>(r));
  }
  return groups;
}

// Balanced synthetic blobs: C isotropic Gaussian clusters with means evenly
// spaced on a circle. Labels are exact (the generating cluster).
inline Dataset make_blobs(std::size_t n, int num_classes, double radius, double noise_std,
                          Rng& rng, std::size_t dim = 2) {
  if (num_classes < 2) throw std::invalid_argument("make_blobs: need at least 2 classes");
  if (dim < 2) throw std::invalid_argument("make_blobs: need at least 2 dimensions");
  Dataset ds;
  ds.num_classes = num_classes;
  ds.features = Matrix(n, dim);
  ds.true_labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int c = static_cast<int>(i % num_classes);
    const double angle = 2.0 * 3.14159265358979323846 * c / num_classes;
    ds.true_labels[i] = c;
    double* row = ds.features.row(i);
    row[0] = radius * std::cos(angle) + noise_std * rng.normal();
    row[1] = radius * std::sin(angle) + noise_std * rng.normal();
    for (std::size_t j = 2; j < dim; ++j) row[j] = noise_std * rng.normal();
  }
  // Shuffle rows so downstream subsampling never sees a stratified order.
  const auto perm = rng.permutation(n);
  Dataset shuffled = ds;
  for (std::size_t i = 0; i < n; ++i) {
    const double* src = ds.features.row(perm[i]);
    double* dst = shuffled.features.row(i);
    for (std::size_t j = 0; j < dim; ++j) dst[j] = src[j];
    shuffled.true_labels[i] = ds.true_labels[perm[i]];
  }
  return shuffled;
}

}  // namespace annotmix
