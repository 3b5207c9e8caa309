#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "annotmix/data.hpp"
#include "annotmix/models.hpp"
#include "annotmix/rng.hpp"
#include "annotmix/training.hpp"

namespace annotmix {

// Error-prone annotators: one weak network each, trained with individually
// drawn hyperparameters, then masked down to a per-instance label budget.
struct SimConfig {
  int num_annotators = 10;
  int epochs_min = 1;
  int epochs_max = 30;
  double lr_min = 1e-4;
  double lr_max = 5e-2;
  double subsample_min = 0.02;
  double subsample_max = 0.3;
  double target_avg_labels = 2.0;
  // Explicit per-annotator labeling probabilities; empty draws them from
  // Beta(2, 6) so a few annotators label much and most label little.
  std::vector<double> participation;
  std::size_t weak_hidden = 32;
  std::size_t weak_batch = 32;
  std::uint64_t seed = 0;
};

inline void validate(const SimConfig& cfg) {
  if (cfg.num_annotators <= 0)
    throw std::invalid_argument("sim.num_annotators: must be positive");
  if (cfg.epochs_min < 1 || cfg.epochs_max < cfg.epochs_min)
    throw std::invalid_argument("sim.epochs: need 1 <= min <= max");
  if (cfg.lr_min <= 0.0 || cfg.lr_max < cfg.lr_min)
    throw std::invalid_argument("sim.learning_rate: need 0 < min <= max");
  if (cfg.subsample_min <= 0.0 || cfg.subsample_max < cfg.subsample_min ||
      cfg.subsample_max > 1.0)
    throw std::invalid_argument("sim.subsample: need 0 < min <= max <= 1");
  if (cfg.target_avg_labels <= 0.0 ||
      cfg.target_avg_labels > static_cast<double>(cfg.num_annotators))
    throw std::invalid_argument("sim.target_avg_labels: must lie in (0, M], got " +
                                std::to_string(cfg.target_avg_labels));
  if (!cfg.participation.empty()) {
    if (cfg.participation.size() != static_cast<std::size_t>(cfg.num_annotators))
      throw std::invalid_argument("sim.participation: length must equal num_annotators");
    double total = 0.0;
    for (double p : cfg.participation) {
      if (p < 0.0 || p > 1.0)
        throw std::invalid_argument("sim.participation: probabilities must lie in [0,1]");
      total += p;
    }
    if (total <= 0.0)
      throw std::invalid_argument("sim.participation: at least one probability must be positive");
  }
}

struct AnnotatorStats {
  int annotator = 0;
  std::size_t labels = 0;
  double accuracy = 0.0;  // over this annotator's emitted records
};

struct SimReport {
  double target_avg_labels = 0.0;
  double realized_avg_labels = 0.0;
  double false_fraction = 0.0;
  std::size_t total_records = 0;
  std::vector<AnnotatorStats> per_annotator;

  double accuracy_spread() const {
    double lo = 1.0, hi = 0.0;
    for (const auto& a : per_annotator) {
      if (a.labels == 0) continue;
      lo = std::min(lo, a.accuracy);
      hi = std::max(hi, a.accuracy);
    }
    return hi > lo ? hi - lo : 0.0;
  }
};

inline nlohmann::json to_json(const SimReport& r) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& a : r.per_annotator)
    per.push_back({{"annotator", a.annotator}, {"labels", a.labels}, {"accuracy", a.accuracy}});
  return {{"target_avg_labels", r.target_avg_labels},
          {"realized_avg_labels", r.realized_avg_labels},
          {"false_fraction", r.false_fraction},
          {"total_records", r.total_records},
          {"accuracy_spread", r.accuracy_spread()},
          {"per_annotator", per}};
}

// Recompute the report quantities from an annotation set and true labels.
inline SimReport noise_summary(const AnnotationSet& ann, const Dataset& ds) {
  if (!ds.has_labels()) throw std::invalid_argument("noise_summary: dataset has no true labels");
  SimReport r;
  r.total_records = ann.size();
  r.realized_avg_labels =
      ds.size() ? static_cast<double>(ann.size()) / static_cast<double>(ds.size()) : 0.0;
  std::vector<std::size_t> counts(ann.num_annotators, 0);
  std::vector<std::size_t> hits(ann.num_annotators, 0);
  std::size_t wrong = 0;
  for (const Triple& t : ann.records) {
    const bool correct = t.label == ds.true_labels[t.instance];
    wrong += !correct;
    ++counts[t.annotator];
    hits[t.annotator] += correct;
  }
  r.false_fraction = ann.size() ? static_cast<double>(wrong) / static_cast<double>(ann.size()) : 0.0;
  for (int m = 0; m < ann.num_annotators; ++m) {
    AnnotatorStats s;
    s.annotator = m;
    s.labels = counts[m];
    s.accuracy = counts[m] ? static_cast<double>(hits[m]) / static_cast<double>(counts[m]) : 0.0;
    r.per_annotator.push_back(s);
  }
  return r;
}

namespace detail {

// Per-class uniform subsample of at least one instance per present class.
inline std::vector<int> subsample_per_class(const Dataset& ds, double ratio, Rng& rng) {
  std::vector<std::vector<int>> by_class(ds.num_classes);
  for (std::size_t i = 0; i < ds.size(); ++i)
    by_class[ds.true_labels[i]].push_back(static_cast<int>(i));
  std::vector<int> picked;
  for (auto& members : by_class) {
    if (members.empty()) continue;
    const std::size_t want = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(ratio * static_cast<double>(members.size()))));
    rng.shuffle(members);
    for (std::size_t i = 0; i < std::min(want, members.size()); ++i)
      picked.push_back(members[i]);
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

inline Dataset subset_dataset(const Dataset& ds, const std::vector<int>& rows) {
  Dataset sub;
  sub.num_classes = ds.num_classes;
  sub.split_tag = ds.split_tag;
  sub.features = Matrix(rows.size(), ds.dim());
  sub.true_labels.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < ds.dim(); ++j) sub.features(i, j) = ds.features(rows[i], j);
    sub.true_labels[i] = ds.true_labels[rows[i]];
  }
  return sub;
}

// Integer label budget per annotator: proportional to participation weight,
// summing exactly to `budget`, each capped at num_instances.
inline std::vector<std::size_t> allocate_label_counts(const std::vector<double>& weights,
                                                      std::size_t budget,
                                                      std::size_t num_instances) {
  const std::size_t m = weights.size();
  double total = 0.0;
  for (double w : weights) total += w;
  std::vector<std::size_t> counts(m, 0);
  std::vector<std::pair<double, std::size_t>> remainders;  // (-fraction, index)
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const double raw = total > 0.0 ? static_cast<double>(budget) * weights[i] / total : 0.0;
    counts[i] = std::min(static_cast<std::size_t>(raw), num_instances);
    assigned += counts[i];
    remainders.push_back({-(raw - std::floor(raw)), i});
  }
  std::sort(remainders.begin(), remainders.end());
  // Hand out the remaining labels by largest fractional part, then round
  // robin, always respecting per-annotator capacity.
  std::size_t cursor = 0;
  while (assigned < budget) {
    const std::size_t i = remainders[cursor % m].second;
    if (counts[i] < num_instances) {
      ++counts[i];
      ++assigned;
    }
    ++cursor;
    if (cursor > 2 * m * (budget + 1)) break;  // all annotators saturated
  }
  return counts;
}

}  // namespace detail

struct SimResult {
  AnnotationSet annotations;  // masked training annotations
  SimReport report;
  std::vector<ClassifierNet> annotator_nets;
  std::vector<double> participation;
};

// Full table of one annotator prediction per (instance, annotator) pair.
inline AnnotationSet full_prediction_table(const std::vector<ClassifierNet>& nets,
                                           const Dataset& ds) {
  AnnotationSet table;
  table.num_annotators = static_cast<int>(nets.size());
  std::vector<std::vector<int>> preds;
  for (const ClassifierNet& net : nets) {
    std::vector<int> p;
    for (std::size_t start = 0; start < ds.size(); start += kEvalChunk) {
      const std::size_t stop = std::min(start + kEvalChunk, ds.size());
      Matrix x(stop - start, ds.dim());
      for (std::size_t i = start; i < stop; ++i)
        for (std::size_t j = 0; j < ds.dim(); ++j) x(i - start, j) = ds.features(i, j);
      const auto chunk = predict_classes(net, x);
      p.insert(p.end(), chunk.begin(), chunk.end());
    }
    preds.push_back(std::move(p));
  }
  for (std::size_t n = 0; n < ds.size(); ++n)
    for (std::size_t m = 0; m < nets.size(); ++m)
      table.records.push_back(
          {static_cast<int>(n), static_cast<int>(m), preds[m][n]});
  return table;
}

// Mask a full table down to the label budget: annotator m keeps a uniform
// subset of counts[m] instances.
inline AnnotationSet mask_table(const AnnotationSet& table, std::size_t num_instances,
                                const std::vector<std::size_t>& counts, Rng& rng) {
  AnnotationSet masked;
  masked.num_annotators = table.num_annotators;
  std::vector<std::vector<int>> label_of(table.num_annotators,
                                         std::vector<int>(num_instances, -1));
  for (const Triple& t : table.records) label_of[t.annotator][t.instance] = t.label;
  std::vector<std::vector<bool>> keep(table.num_annotators,
                                      std::vector<bool>(num_instances, false));
  for (int m = 0; m < table.num_annotators; ++m) {
    const auto perm = rng.permutation(num_instances);
    for (std::size_t i = 0; i < counts[m]; ++i) keep[m][perm[i]] = true;
  }
  for (std::size_t n = 0; n < num_instances; ++n)
    for (int m = 0; m < table.num_annotators; ++m)
      if (keep[m][n]) masked.records.push_back({static_cast<int>(n), m, label_of[m][n]});
  return masked;
}

// Train M weak networks on per-annotator subsamples, predict everywhere,
// then mask down to the target label budget.
inline SimResult simulate_annotators(const Dataset& ds, const SimConfig& cfg) {
  validate(cfg);
  if (!ds.has_labels())
    throw std::invalid_argument("simulate_annotators: dataset has no true labels");
  if (ds.size() == 0) throw std::invalid_argument("simulate_annotators: empty dataset");

  Rng root(cfg.seed);
  Rng hyper_rng = root.derive(10);
  Rng participation_rng = root.derive(11);
  Rng mask_rng = root.derive(12);

  SimResult res;
  for (int m = 0; m < cfg.num_annotators; ++m) {
    const int epochs = hyper_rng.uniform_int(cfg.epochs_min, cfg.epochs_max);
    const double lr = hyper_rng.log_uniform(cfg.lr_min, cfg.lr_max);
    const double ratio = hyper_rng.uniform(cfg.subsample_min, cfg.subsample_max);
    Rng sample_rng = root.derive(100 + static_cast<std::uint64_t>(m));
    const auto rows = detail::subsample_per_class(ds, ratio, sample_rng);
    const Dataset sub = detail::subset_dataset(ds, rows);

    TrainConfig tc;
    tc.method = TrainMethod::true_base;
    tc.epochs = epochs;
    tc.batch_size = cfg.weak_batch;
    tc.learning_rate = lr;
    tc.mixup.mode = MixupMode::off;
    tc.hidden = {cfg.weak_hidden};
    tc.seed = sample_rng.next_u64();
    const TrainState ts = train(sub, AnnotationSet{{}, 1}, tc);
    res.annotator_nets.push_back(ts.model.classifier);
  }

  res.participation = cfg.participation;
  if (res.participation.empty()) {
    res.participation.resize(cfg.num_annotators);
    for (double& p : res.participation) p = participation_rng.beta(2.0, 6.0);
  }

  const AnnotationSet table = full_prediction_table(res.annotator_nets, ds);
  const std::size_t budget = static_cast<std::size_t>(
      std::llround(cfg.target_avg_labels * static_cast<double>(ds.size())));
  const auto counts = detail::allocate_label_counts(res.participation, budget, ds.size());
  res.annotations = mask_table(table, ds.size(), counts, mask_rng);

  res.report = noise_summary(res.annotations, ds);
  res.report.target_avg_labels = cfg.target_avg_labels;
  return res;
}

}  // namespace annotmix
