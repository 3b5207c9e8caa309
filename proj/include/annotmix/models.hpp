#pragma once

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "annotmix/matrix.hpp"
#include "annotmix/rng.hpp"
#include "annotmix/tape.hpp"

namespace annotmix {

struct DenseLayer {
  Matrix w;  // in x out
  Matrix b;  // 1 x out
};

inline DenseLayer make_layer(std::size_t in, std::size_t out, Rng& rng) {
  DenseLayer l;
  l.w = Matrix(in, out);
  const double s = std::sqrt(6.0 / static_cast<double>(in));  // scaled uniform fan-in
  for (std::size_t i = 0; i < l.w.size(); ++i) l.w.data()[i] = rng.uniform(-s, s);
  l.b = Matrix(1, out);
  return l;
}

// Per-batch handles to parameters staged onto a tape as input nodes.
struct StagedLayer {
  Var w;
  Var b;
};

inline std::vector<StagedLayer> stage_layers(Tape& tape, const std::vector<DenseLayer>& layers) {
  std::vector<StagedLayer> staged;
  staged.reserve(layers.size());
  for (const DenseLayer& l : layers) staged.push_back({tape.input(l.w), tape.input(l.b)});
  return staged;
}

// MLP over feature rows: hidden layers with leaky-rectifier activations,
// then a softmax head. The penultimate activation doubles as the embedding
// consumed by the annotator model.
struct ClassifierNet {
  std::vector<std::size_t> layer_sizes;  // [D, hidden..., C]
  std::vector<DenseLayer> layers;
  double leaky_slope = 0.01;

  static ClassifierNet create(const std::vector<std::size_t>& sizes, Rng& rng) {
    if (sizes.size() < 2) throw std::invalid_argument("ClassifierNet: need at least [D, C]");
    for (std::size_t s : sizes)
      if (s == 0) throw std::invalid_argument("ClassifierNet: zero layer size");
    ClassifierNet net;
    net.layer_sizes = sizes;
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i)
      net.layers.push_back(make_layer(sizes[i], sizes[i + 1], rng));
    return net;
  }

  std::size_t input_dim() const { return layer_sizes.front(); }
  int num_classes() const { return static_cast<int>(layer_sizes.back()); }
  // With no hidden layer the embedding degenerates to the raw input.
  std::size_t embedding_dim() const { return layer_sizes[layer_sizes.size() - 2]; }

  std::vector<Matrix*> params() {
    std::vector<Matrix*> ps;
    for (DenseLayer& l : layers) {
      ps.push_back(&l.w);
      ps.push_back(&l.b);
    }
    return ps;
  }
};

struct ClassifierForward {
  Var probs;      // batch x C
  Var embedding;  // batch x H (penultimate activation)
  Var logits;     // batch x C
};

inline ClassifierForward classifier_forward(Tape& tape, const ClassifierNet& net,
                                            const std::vector<StagedLayer>& staged, Var x) {
  Var h = x;
  for (std::size_t i = 0; i + 1 < net.layers.size(); ++i)
    h = tape.leaky_relu(tape.add_row(tape.matmul(h, staged[i].w), staged[i].b), net.leaky_slope);
  const Var logits = tape.add_row(tape.matmul(h, staged.back().w), staged.back().b);
  return {tape.softmax_rows(logits), h, logits};
}

struct ClassifierValue {
  Matrix probs;
  Matrix embedding;
};

inline ClassifierValue classifier_forward_value(const ClassifierNet& net, const Matrix& x) {
  Tape tape;
  const auto staged = stage_layers(tape, net.layers);
  const auto fwd = classifier_forward(tape, net, staged, tape.input(x));
  return {tape.value(fwd.probs), tape.value(fwd.embedding)};
}

inline std::vector<int> predict_classes(const ClassifierNet& net, const Matrix& x) {
  const Matrix probs = classifier_forward_value(net, x).probs;
  std::vector<int> out(probs.rows());
  for (std::size_t i = 0; i < probs.rows(); ++i) out[i] = static_cast<int>(argmax_row(probs, i));
  return out;
}

inline int predict_class(const ClassifierNet& net, const Matrix& x_row) {
  return predict_classes(net, x_row)[0];
}

// One-hidden-layer MLP mapping concat(embedding, annotator encoding) to a
// row-stochastic confusion matrix, flattened as C*C columns (row-major:
// true class selects the C-wide group). The final layer starts near the
// diagonally dominant prior: bias carries its logits, weights are scaled
// close to zero so the prior holds across inputs.
struct AnnotatorNet {
  int num_classes = 0;
  int num_annotators = 0;
  std::size_t embedding_dim = 0;
  double eta = 0.9;
  double leaky_slope = 0.01;
  std::vector<DenseLayer> layers;  // [H+M -> hidden, hidden -> C*C]

  static AnnotatorNet create(std::size_t embedding_dim, int num_annotators, int num_classes,
                             std::size_t hidden, double eta, Rng& rng) {
    AnnotatorNet net;
    net.num_classes = num_classes;
    net.num_annotators = num_annotators;
    net.embedding_dim = embedding_dim;
    const std::size_t in = embedding_dim + static_cast<std::size_t>(num_annotators);
    const std::size_t out = static_cast<std::size_t>(num_classes) * num_classes;
    net.layers.push_back(make_layer(in, hidden, rng));
    net.layers.push_back(make_layer(hidden, out, rng));
    init_confusion_bias(net, eta, num_classes);
    return net;
  }

  std::vector<Matrix*> params() {
    std::vector<Matrix*> ps;
    for (DenseLayer& l : layers) {
      ps.push_back(&l.w);
      ps.push_back(&l.b);
    }
    return ps;
  }

  // Sets the final-layer bias to the log of the target confusion matrix
  // (diagonal eta, off-diagonal (1-eta)/(C-1)) and shrinks the final-layer
  // weights so the target approximately holds for every input.
  static void init_confusion_bias(AnnotatorNet& net, double eta, int num_classes) {
    if (eta <= 1.0 / num_classes || eta >= 1.0)
      throw std::invalid_argument("models.eta: must lie in (1/C, 1), got " + std::to_string(eta) +
                                  " for C=" + std::to_string(num_classes));
    net.eta = eta;
    DenseLayer& head = net.layers.back();
    const double off = (1.0 - eta) / (num_classes - 1);
    for (int i = 0; i < num_classes; ++i)
      for (int j = 0; j < num_classes; ++j)
        head.b(0, static_cast<std::size_t>(i) * num_classes + j) =
            std::log(i == j ? eta : off);
    for (std::size_t k = 0; k < head.w.size(); ++k) head.w.data()[k] *= 0.01;
  }
};

// confusion: batch x C*C, each C-wide group a simplex (one confusion-matrix
// row per group).
inline Var annotator_forward(Tape& tape, const AnnotatorNet& net,
                             const std::vector<StagedLayer>& staged, Var embedding,
                             Var annotator_encoding) {
  Var h = tape.concat_cols(embedding, annotator_encoding);
  h = tape.leaky_relu(tape.add_row(tape.matmul(h, staged[0].w), staged[0].b), net.leaky_slope);
  const Var logits = tape.add_row(tape.matmul(h, staged[1].w), staged[1].b);
  return tape.softmax_groups(logits, static_cast<std::size_t>(net.num_classes));
}

inline Matrix annotator_forward_value(const AnnotatorNet& net, const Matrix& embedding,
                                      const Matrix& annotator_encoding) {
  Tape tape;
  const auto staged = stage_layers(tape, net.layers);
  return tape.value(
      annotator_forward(tape, net, staged, tape.input(embedding), tape.input(annotator_encoding)));
}

// Eq-9-style combination: annotation_probs row i = probs_i^T * confusion_i.
inline Var combine(Tape& tape, Var probs, Var confusion) {
  return tape.row_dot_slices(probs, confusion);
}

inline Matrix combine_value(const Matrix& probs, const Matrix& confusion) {
  Tape tape;
  return tape.value(combine(tape, tape.input(probs), tape.input(confusion)));
}

// The trained pair plus the shared sizes needed to encode inputs.
struct ModelPair {
  ClassifierNet classifier;
  AnnotatorNet annotator;
  bool has_annotator = false;

  int num_classes() const { return classifier.num_classes(); }
};

inline Matrix annotation_probs_value(const ModelPair& mp, const Matrix& x,
                                     const Matrix& annotator_encoding) {
  if (!mp.has_annotator)
    throw std::invalid_argument("annotation_probs: model has no annotator head");
  const auto clf = classifier_forward_value(mp.classifier, x);
  const Matrix confusion =
      annotator_forward_value(mp.annotator, clf.embedding, annotator_encoding);
  return combine_value(clf.probs, confusion);
}

inline std::vector<int> predict_annotations(const ModelPair& mp, const Matrix& x,
                                            const Matrix& annotator_encoding) {
  const Matrix probs = annotation_probs_value(mp, x, annotator_encoding);
  std::vector<int> out(probs.rows());
  for (std::size_t i = 0; i < probs.rows(); ++i) out[i] = static_cast<int>(argmax_row(probs, i));
  return out;
}

inline int predict_annotation(const ModelPair& mp, const Matrix& x_row, int annotator) {
  Matrix a(1, mp.annotator.num_annotators);
  a(0, annotator) = 1.0;
  return predict_annotations(mp, x_row, a)[0];
}

// --- checkpoints -----------------------------------------------------------
// JSON container; doubles survive the round trip bit-exactly.

namespace detail {

inline nlohmann::json matrix_to_json(const Matrix& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.raw()}};
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
  return Matrix(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(),
                j.at("data").get<std::vector<double>>());
}

inline nlohmann::json layers_to_json(const std::vector<DenseLayer>& layers) {
  nlohmann::json arr = nlohmann::json::array();
  for (const DenseLayer& l : layers)
    arr.push_back({{"w", matrix_to_json(l.w)}, {"b", matrix_to_json(l.b)}});
  return arr;
}

inline std::vector<DenseLayer> layers_from_json(const nlohmann::json& arr) {
  std::vector<DenseLayer> layers;
  for (const auto& j : arr)
    layers.push_back({matrix_from_json(j.at("w")), matrix_from_json(j.at("b"))});
  return layers;
}

}  // namespace detail

inline void save_checkpoint(const ModelPair& mp, const std::string& path) {
  nlohmann::json j;
  j["format"] = "annotmix-checkpoint";
  j["version"] = 1;
  j["classifier"] = {{"layer_sizes", mp.classifier.layer_sizes},
                     {"leaky_slope", mp.classifier.leaky_slope},
                     {"layers", detail::layers_to_json(mp.classifier.layers)}};
  j["has_annotator"] = mp.has_annotator;
  if (mp.has_annotator)
    j["annotator"] = {{"num_classes", mp.annotator.num_classes},
                      {"num_annotators", mp.annotator.num_annotators},
                      {"embedding_dim", mp.annotator.embedding_dim},
                      {"eta", mp.annotator.eta},
                      {"leaky_slope", mp.annotator.leaky_slope},
                      {"layers", detail::layers_to_json(mp.annotator.layers)}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump() << "\n";
}

inline ModelPair load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  nlohmann::json j;
  in >> j;
  if (j.value("format", "") != "annotmix-checkpoint")
    throw std::runtime_error(path + ": not a checkpoint file");
  if (j.value("version", 0) != 1)
    throw std::runtime_error(path + ": unsupported checkpoint version");
  ModelPair mp;
  const auto& jc = j.at("classifier");
  mp.classifier.layer_sizes = jc.at("layer_sizes").get<std::vector<std::size_t>>();
  mp.classifier.leaky_slope = jc.at("leaky_slope").get<double>();
  mp.classifier.layers = detail::layers_from_json(jc.at("layers"));
  mp.has_annotator = j.at("has_annotator").get<bool>();
  if (mp.has_annotator) {
    const auto& ja = j.at("annotator");
    mp.annotator.num_classes = ja.at("num_classes").get<int>();
    mp.annotator.num_annotators = ja.at("num_annotators").get<int>();
    mp.annotator.embedding_dim = ja.at("embedding_dim").get<std::size_t>();
    mp.annotator.eta = ja.at("eta").get<double>();
    mp.annotator.leaky_slope = ja.at("leaky_slope").get<double>();
    mp.annotator.layers = detail::layers_from_json(ja.at("layers"));
  }
  return mp;
}

}  // namespace annotmix
