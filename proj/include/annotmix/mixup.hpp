#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "annotmix/data.hpp"
#include "annotmix/matrix.hpp"
#include "annotmix/rng.hpp"

namespace annotmix {

enum class MixupMode { off, vanilla, triple, same_instance_only };

inline MixupMode parse_mixup_mode(const std::string& s) {
  if (s == "off") return MixupMode::off;
  if (s == "vanilla") return MixupMode::vanilla;
  if (s == "triple") return MixupMode::triple;
  if (s == "same_instance_only") return MixupMode::same_instance_only;
  throw std::invalid_argument("mixup.mode: expected off|vanilla|triple|same_instance_only, got '" +
                              s + "'");
}

inline std::string to_string(MixupMode m) {
  switch (m) {
    case MixupMode::off: return "off";
    case MixupMode::vanilla: return "vanilla";
    case MixupMode::triple: return "triple";
    case MixupMode::same_instance_only: return "same_instance_only";
  }
  return "off";
}

struct MixupConfig {
  MixupMode mode = MixupMode::triple;
  double alpha = 1.0;
  bool per_row = false;
};

inline void validate(const MixupConfig& cfg) {
  if (cfg.mode != MixupMode::off && cfg.alpha <= 0.0)
    throw std::invalid_argument("mixup.alpha: must be positive, got " + std::to_string(cfg.alpha));
}

// Convex combinations of two encoded triple batches: instances, annotator
// one-hots, and label one-hots, mixed with one coefficient.
struct MixedBatch {
  Matrix x;  // batch x D
  Matrix a;  // batch x M
  Matrix z;  // batch x C
  double lambda = 1.0;
};

inline Matrix encode_features(const Dataset& ds, const std::vector<Triple>& batch) {
  Matrix x(batch.size(), ds.dim());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double* src = ds.features.row(batch[i].instance);
    double* dst = x.row(i);
    for (std::size_t j = 0; j < ds.dim(); ++j) dst[j] = src[j];
  }
  return x;
}

inline Matrix encode_annotators(const std::vector<Triple>& batch, int num_annotators) {
  Matrix a(batch.size(), num_annotators);
  for (std::size_t i = 0; i < batch.size(); ++i) a(i, batch[i].annotator) = 1.0;
  return a;
}

inline Matrix encode_labels(const std::vector<Triple>& batch, int num_classes) {
  Matrix z(batch.size(), num_classes);
  for (std::size_t i = 0; i < batch.size(); ++i) z(i, batch[i].label) = 1.0;
  return z;
}

inline Matrix encode_instance_rows(const Dataset& ds, const std::vector<int>& instances) {
  Matrix x(instances.size(), ds.dim());
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const double* src = ds.features.row(instances[i]);
    double* dst = x.row(i);
    for (std::size_t j = 0; j < ds.dim(); ++j) dst[j] = src[j];
  }
  return x;
}

inline Matrix encode_class_rows(const std::vector<int>& labels, int num_classes) {
  Matrix y(labels.size(), num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) y(i, labels[i]) = 1.0;
  return y;
}

namespace detail {

// Row-level convex combination with exact boundaries: lambda 1/0 copies a
// source row verbatim, as does an identical pair, so degenerate mixing can
// never perturb a trajectory by floating-point round-off.
inline void mix_row(double* dst, const double* r1, const double* r2, std::size_t n,
                    double lambda, bool identical) {
  if (lambda == 1.0 || identical) {
    for (std::size_t j = 0; j < n; ++j) dst[j] = r1[j];
  } else if (lambda == 0.0) {
    for (std::size_t j = 0; j < n; ++j) dst[j] = r2[j];
  } else {
    for (std::size_t j = 0; j < n; ++j) dst[j] = lambda * r1[j] + (1.0 - lambda) * r2[j];
  }
}

inline Matrix mix_matrices(const Matrix& m1, const Matrix& m2, double lambda,
                           const std::vector<bool>& identical) {
  Matrix out(m1.rows(), m1.cols());
  for (std::size_t i = 0; i < m1.rows(); ++i)
    mix_row(out.row(i), m1.row(i), m2.row(i), m1.cols(), lambda, identical[i]);
  return out;
}

}  // namespace detail

// x~ = lambda x1 + (1-lambda) x2, likewise for annotator and label
// encodings; one lambda for the whole batch.
inline MixedBatch mix_triple_batch(const std::vector<Triple>& b1, const std::vector<Triple>& b2,
                                   double lambda, const Dataset& ds, int num_annotators) {
  if (b1.size() != b2.size())
    throw std::invalid_argument("mix_triple_batch: batch sizes " + std::to_string(b1.size()) +
                                " vs " + std::to_string(b2.size()));
  if (lambda < 0.0 || lambda > 1.0)
    throw std::invalid_argument("mix_triple_batch: lambda must be in [0,1]");
  std::vector<bool> identical(b1.size());
  for (std::size_t i = 0; i < b1.size(); ++i) identical[i] = b1[i] == b2[i];
  MixedBatch mb;
  mb.lambda = lambda;
  mb.x = detail::mix_matrices(encode_features(ds, b1), encode_features(ds, b2), lambda, identical);
  mb.a = detail::mix_matrices(encode_annotators(b1, num_annotators),
                              encode_annotators(b2, num_annotators), lambda, identical);
  mb.z = detail::mix_matrices(encode_labels(b1, ds.num_classes), encode_labels(b2, ds.num_classes),
                              lambda, identical);
  return mb;
}

// Vanilla two-channel mixing over (instance, label) pairs for the two-stage
// baseline; no annotator channel.
struct MixedPairBatch {
  Matrix x;  // batch x D
  Matrix y;  // batch x C
  double lambda = 1.0;
};

inline MixedPairBatch mix_vanilla_batch(const std::vector<int>& inst1,
                                        const std::vector<int>& lab1,
                                        const std::vector<int>& inst2,
                                        const std::vector<int>& lab2, double lambda,
                                        const Dataset& ds) {
  if (inst1.size() != inst2.size() || lab1.size() != inst1.size() || lab2.size() != inst2.size())
    throw std::invalid_argument("mix_vanilla_batch: batch sizes disagree");
  if (lambda < 0.0 || lambda > 1.0)
    throw std::invalid_argument("mix_vanilla_batch: lambda must be in [0,1]");
  std::vector<bool> identical(inst1.size());
  for (std::size_t i = 0; i < inst1.size(); ++i)
    identical[i] = inst1[i] == inst2[i] && lab1[i] == lab2[i];
  MixedPairBatch mb;
  mb.lambda = lambda;
  mb.x = detail::mix_matrices(encode_instance_rows(ds, inst1), encode_instance_rows(ds, inst2),
                              lambda, identical);
  mb.y = detail::mix_matrices(encode_class_rows(lab1, ds.num_classes),
                              encode_class_rows(lab2, ds.num_classes), lambda, identical);
  return mb;
}

// Uniform draw of a partner triple annotating the same instance (possibly
// the triple itself; always itself when the instance has a single
// annotation, making the mix a no-op on that row).
inline Triple same_instance_partner(const Triple& t, const TripleSet& ts,
                                    const std::vector<std::vector<int>>& groups, Rng& rng) {
  const auto& group = groups[t.instance];
  if (group.empty())
    throw std::invalid_argument("same_instance_partner: instance " + std::to_string(t.instance) +
                                " has no annotations");
  return ts.triples[group[rng.uniform_int(group.size())]];
}

// Every triple in order, paired within its instance group.
inline std::vector<std::pair<Triple, Triple>> pair_same_instance(const TripleSet& ts, Rng& rng) {
  std::size_t num_instances = 0;
  for (const Triple& t : ts.triples)
    num_instances = std::max(num_instances, static_cast<std::size_t>(t.instance) + 1);
  AnnotationSet view;
  view.records = ts.triples;
  const auto groups = group_by_instance(view, num_instances);
  std::vector<std::pair<Triple, Triple>> pairs;
  pairs.reserve(ts.size());
  for (const Triple& t : ts.triples)
    pairs.emplace_back(t, same_instance_partner(t, ts, groups, rng));
  return pairs;
}

}  // namespace annotmix
