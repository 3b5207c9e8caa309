#pragma once

#include <algorithm>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "annotmix/data.hpp"
#include "annotmix/matrix.hpp"
#include "annotmix/mixup.hpp"
#include "annotmix/models.hpp"

namespace annotmix {

inline constexpr std::size_t kEvalChunk = 512;

// Fraction of instances whose predicted class equals the true label.
inline double eval_clf_acc(const ClassifierNet& net, const Dataset& ds) {
  if (!ds.has_labels()) throw std::invalid_argument("clf_acc: dataset has no true labels");
  if (ds.size() == 0) throw std::invalid_argument("clf_acc: empty dataset");
  std::size_t correct = 0;
  for (std::size_t start = 0; start < ds.size(); start += kEvalChunk) {
    const std::size_t stop = std::min(start + kEvalChunk, ds.size());
    Matrix x(stop - start, ds.dim());
    for (std::size_t i = start; i < stop; ++i)
      for (std::size_t j = 0; j < ds.dim(); ++j) x(i - start, j) = ds.features(i, j);
    const auto pred = predict_classes(net, x);
    for (std::size_t i = start; i < stop; ++i) correct += pred[i - start] == ds.true_labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

// Fraction of triples whose noisy label is predicted; models without an
// annotator head reduce to the classifier prediction (identity confusion).
inline double eval_annot_acc(const ModelPair& mp, const std::vector<Triple>& triples,
                             const Dataset& ds) {
  if (triples.empty()) throw std::invalid_argument("annot_acc: empty triple set");
  std::size_t correct = 0;
  for (std::size_t start = 0; start < triples.size(); start += kEvalChunk) {
    const std::size_t stop = std::min(start + kEvalChunk, triples.size());
    const std::vector<Triple> chunk(triples.begin() + start, triples.begin() + stop);
    const Matrix x = encode_features(ds, chunk);
    std::vector<int> pred;
    if (mp.has_annotator) {
      const Matrix a = encode_annotators(chunk, mp.annotator.num_annotators);
      pred = predict_annotations(mp, x, a);
    } else {
      pred = predict_classes(mp.classifier, x);
    }
    for (std::size_t i = 0; i < chunk.size(); ++i) correct += pred[i] == chunk[i].label;
  }
  return static_cast<double>(correct) / static_cast<double>(triples.size());
}

// Estimated probability the annotator labels each row correctly:
// p_theta(x)^T diag(P_pi(h, a)) per row.
inline std::vector<double> correctness_probabilities(const ModelPair& mp, const Matrix& x,
                                                     const Matrix& annotator_encoding) {
  if (!mp.has_annotator)
    throw std::invalid_argument("correctness_probability: model has no annotator head");
  const auto clf = classifier_forward_value(mp.classifier, x);
  const Matrix confusion =
      annotator_forward_value(mp.annotator, clf.embedding, annotator_encoding);
  const std::size_t c = clf.probs.cols();
  std::vector<double> out(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double* pi = clf.probs.row(i);
    const double* si = confusion.row(i);
    double acc = 0.0;
    for (std::size_t k = 0; k < c; ++k) acc += pi[k] * si[k * c + k];
    out[i] = acc;
  }
  return out;
}

inline double correctness_probability(const ModelPair& mp, const Matrix& x_row, int annotator) {
  Matrix a(1, mp.annotator.num_annotators);
  a(0, annotator) = 1.0;
  return correctness_probabilities(mp, x_row, a)[0];
}

// Mann-Whitney rank statistic with midrank tie handling:
// P(score_pos > score_neg) + 0.5 P(equal). Single-class labels are not
// computable.
inline std::optional<double> auroc(const std::vector<double>& scores,
                                   const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("auroc: scores and labels lengths differ");
  std::size_t npos = 0, nneg = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) throw std::invalid_argument("auroc: labels must be 0 or 1");
    (l == 1 ? npos : nneg) += 1;
  }
  if (npos == 0 || nneg == 0) return std::nullopt;
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1 .. j
    for (std::size_t k = i; k < j; ++k)
      if (labels[idx[k]] == 1) rank_sum_pos += midrank;
    i = j;
  }
  const double u =
      rank_sum_pos - 0.5 * static_cast<double>(npos) * static_cast<double>(npos + 1);
  return u / (static_cast<double>(npos) * static_cast<double>(nneg));
}

// AUROC of the correctness score against whether each table entry is in
// fact correct. Needs true test labels and a simulated prediction table;
// absent either (e.g. human-annotated test splits) it is not computable.
inline std::optional<double> perf_auroc(const ModelPair& mp, const Dataset& test,
                                        const AnnotationSet& table) {
  if (!mp.has_annotator || !test.has_labels() || table.records.empty()) return std::nullopt;
  std::vector<double> scores;
  std::vector<int> bits;
  scores.reserve(table.size());
  bits.reserve(table.size());
  for (std::size_t start = 0; start < table.size(); start += kEvalChunk) {
    const std::size_t stop = std::min(start + kEvalChunk, table.size());
    const std::vector<Triple> chunk(table.records.begin() + start, table.records.begin() + stop);
    const Matrix x = encode_features(test, chunk);
    const Matrix a = encode_annotators(chunk, mp.annotator.num_annotators);
    const auto probs = correctness_probabilities(mp, x, a);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      scores.push_back(probs[i]);
      bits.push_back(chunk[i].label == test.true_labels[chunk[i].instance] ? 1 : 0);
    }
  }
  return auroc(scores, bits);
}

// Single-run scores plus the metadata needed to aggregate across seeds.
struct MetricsReport {
  std::string method;
  std::uint64_t seed = 0;
  std::string config_hash;
  double clf_acc = 0.0;                    // last-epoch model on the test split
  std::optional<double> clf_acc_best;      // best-epoch model, when validation exists
  std::optional<double> annot_acc;         // on training annotations
  std::optional<double> perf_auroc_score;  // absent when not computable
};

inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json j;
  j["method"] = r.method;
  j["seed"] = r.seed;
  j["config_hash"] = r.config_hash;
  j["clf_acc"] = r.clf_acc;
  if (r.clf_acc_best) j["clf_acc_best"] = *r.clf_acc_best;
  if (r.annot_acc) j["annot_acc"] = *r.annot_acc;
  if (r.perf_auroc_score) j["perf_auroc"] = *r.perf_auroc_score;
  return j;
}

}  // namespace annotmix
