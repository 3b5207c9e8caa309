#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "annotmix/data.hpp"
#include "annotmix/eval.hpp"
#include "annotmix/matrix.hpp"
#include "annotmix/mixup.hpp"
#include "annotmix/models.hpp"
#include "annotmix/optim.hpp"
#include "annotmix/rng.hpp"
#include "annotmix/tape.hpp"

namespace annotmix {

enum class TrainMethod { annot_mix, mv_base, mv_mixup, true_base };

inline TrainMethod parse_train_method(const std::string& s) {
  if (s == "annot_mix") return TrainMethod::annot_mix;
  if (s == "mv_base") return TrainMethod::mv_base;
  if (s == "mv_mixup") return TrainMethod::mv_mixup;
  if (s == "true_base") return TrainMethod::true_base;
  throw std::invalid_argument("train.method: expected annot_mix|mv_base|mv_mixup|true_base, got '" +
                              s + "'");
}

inline std::string to_string(TrainMethod m) {
  switch (m) {
    case TrainMethod::annot_mix: return "annot_mix";
    case TrainMethod::mv_base: return "mv_base";
    case TrainMethod::mv_mixup: return "mv_mixup";
    case TrainMethod::true_base: return "true_base";
  }
  return "annot_mix";
}

struct TrainConfig {
  TrainMethod method = TrainMethod::annot_mix;
  int epochs = 50;
  std::size_t batch_size = 64;
  double learning_rate = 1e-2;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  MixupConfig mixup;
  double eta = 0.9;
  std::vector<std::size_t> hidden = {128, 128};
  std::size_t annotator_hidden = 128;
  bool detach_embedding = false;
  // Diagnostic override pinning every mixing coefficient; exercises the
  // exact boundary identities (e.g. forced 1.0 reproduces the ERM path).
  std::optional<double> force_lambda;
};

inline void validate(const TrainConfig& cfg) {
  if (cfg.epochs <= 0) throw std::invalid_argument("train.epochs: must be positive");
  if (cfg.batch_size == 0) throw std::invalid_argument("train.batch_size: must be positive");
  if (cfg.learning_rate <= 0.0) throw std::invalid_argument("train.learning_rate: must be positive");
  if (cfg.weight_decay < 0.0) throw std::invalid_argument("train.weight_decay: must be >= 0");
  validate(cfg.mixup);
  if (cfg.method == TrainMethod::annot_mix && cfg.mixup.mode == MixupMode::vanilla)
    throw std::invalid_argument(
        "mixup.mode: vanilla has no annotator channel; use triple or same_instance_only with "
        "method annot_mix");
  if (cfg.force_lambda && (*cfg.force_lambda < 0.0 || *cfg.force_lambda > 1.0))
    throw std::invalid_argument("mixup.force_lambda: must lie in [0,1]");
  if (cfg.hidden.empty())
    throw std::invalid_argument("models.hidden: need at least one hidden layer");
}

struct EpochRow {
  int epoch = 0;
  double train_loss = 0.0;
  std::optional<double> annot_acc_train;
  std::optional<double> clf_acc_val;
  std::optional<double> clf_acc_test;
  double lr = 0.0;
};

struct TrainState {
  ModelPair model;
  std::vector<EpochRow> log;
  std::optional<ModelPair> best_model;  // highest validation clf-acc so far
  double best_val_acc = -1.0;
  int best_epoch = -1;
  long steps = 0;
  std::size_t unlabeled_excluded = 0;  // instances without any vote
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(int epoch, const std::string& what)
      : std::runtime_error("diverged at epoch " + std::to_string(epoch) + ": " + what),
        epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

inline constexpr double kProbFloor = 1e-12;

// Mean over the batch of -sum_c z~_c ln(max(p_c, floor)).
inline double annotmix_loss_value(const Matrix& annotation_probs, const Matrix& z) {
  check_same_shape(annotation_probs, z, "annotmix_loss");
  double total = 0.0;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    const double* pi = annotation_probs.row(i);
    const double* zi = z.row(i);
    for (std::size_t c = 0; c < z.cols(); ++c)
      if (zi[c] != 0.0) total -= zi[c] * std::log(std::max(pi[c], kProbFloor));
  }
  return total / static_cast<double>(z.rows());
}

inline Var annotmix_loss(Tape& tape, Var annotation_probs, Var z) {
  const std::size_t batch = tape.value(z).rows();
  check_same_shape(tape.value(annotation_probs), tape.value(z), "annotmix_loss");
  const Var ce = tape.hadamard(z, tape.log_floor(annotation_probs, kProbFloor));
  return tape.neg(tape.scale(tape.sum_all(ce), 1.0 / static_cast<double>(batch)));
}

// Modal class of the instance's votes; ties are broken uniformly with the
// run's seeded stream, empty vote sets signal no vote.
inline std::optional<int> majority_vote(const AnnotationSet& ann,
                                        const std::vector<std::vector<int>>& groups, int instance,
                                        Rng& rng) {
  const auto& group = groups[instance];
  if (group.empty()) return std::nullopt;
  std::map<int, int> counts;
  for (int r : group) ++counts[ann.records[r].label];
  int best = 0;
  for (const auto& [cls, cnt] : counts) best = std::max(best, cnt);
  std::vector<int> modal;
  for (const auto& [cls, cnt] : counts)
    if (cnt == best) modal.push_back(cls);
  if (modal.size() == 1) return modal[0];
  return modal[rng.uniform_int(modal.size())];
}

namespace detail {

// Stable stream tags: every trainer derives the same sub-streams in the
// same order so trajectories stay comparable across methods and modes.
enum StreamTag : std::uint64_t {
  kInitStream = 0,
  kShuffleStream = 1,
  kMixStream = 2,
  kPairStream = 3,
  kVoteStream = 4,
};

inline std::vector<std::size_t> layer_sizes_for(const Dataset& ds, const TrainConfig& cfg) {
  std::vector<std::size_t> sizes;
  sizes.push_back(ds.dim());
  for (std::size_t h : cfg.hidden) sizes.push_back(h);
  sizes.push_back(static_cast<std::size_t>(ds.num_classes));
  return sizes;
}

inline double draw_lambda(const TrainConfig& cfg, Rng& mix_rng) {
  if (cfg.force_lambda) return *cfg.force_lambda;
  return mix_rng.sample_beta(cfg.mixup.alpha);
}

inline void epoch_metrics(TrainState& st, int epoch, double loss_sum,
                          std::size_t seen, const std::vector<Triple>& triples,
                          const Dataset& train, const Dataset* val, const Dataset* test,
                          double lr) {
  EpochRow row;
  row.epoch = epoch;
  row.train_loss = loss_sum / static_cast<double>(seen);
  if (!triples.empty()) row.annot_acc_train = eval_annot_acc(st.model, triples, train);
  if (val && val->has_labels() && val->size() > 0) {
    row.clf_acc_val = eval_clf_acc(st.model.classifier, *val);
    if (*row.clf_acc_val > st.best_val_acc) {
      st.best_val_acc = *row.clf_acc_val;
      st.best_epoch = epoch;
      st.best_model = st.model;
    }
  }
  if (test && test->has_labels() && test->size() > 0)
    row.clf_acc_test = eval_clf_acc(st.model.classifier, *test);
  row.lr = lr;
  st.log.push_back(row);
}

}  // namespace detail

// Joint training of classifier and annotator model on noisy triples:
// per batch pair, draw one mixing coefficient, mix the triples, combine the
// class probabilities with the per-row confusion matrices and take one
// optimizer step on the cross-entropy against the mixed labels.
inline TrainState train_annotmix(const Dataset& train, const AnnotationSet& ann,
                                 const TrainConfig& cfg, const Dataset* val = nullptr,
                                 const Dataset* test = nullptr) {
  if (ann.records.empty())
    throw std::invalid_argument("train: annotation set is empty; nothing to train on");
  const TripleSet ts = build_triples(train, ann);
  Rng root(cfg.seed);
  Rng init_rng = root.derive(detail::kInitStream);
  Rng shuffle_rng = root.derive(detail::kShuffleStream);
  Rng mix_rng = root.derive(detail::kMixStream);
  Rng pair_rng = root.derive(detail::kPairStream);

  TrainState st;
  st.model.classifier = ClassifierNet::create(detail::layer_sizes_for(train, cfg), init_rng);
  st.model.annotator =
      AnnotatorNet::create(st.model.classifier.embedding_dim(), ann.num_annotators,
                           train.num_classes, cfg.annotator_hidden, cfg.eta, init_rng);
  st.model.has_annotator = true;

  std::vector<Matrix*> params = st.model.classifier.params();
  for (Matrix* p : st.model.annotator.params()) params.push_back(p);
  AdamW opt(params, 0.9, 0.999, 1e-8, cfg.weight_decay);

  std::vector<std::vector<int>> groups;
  if (cfg.mixup.mode == MixupMode::same_instance_only) {
    AnnotationSet view;
    view.records = ts.triples;
    groups = group_by_instance(view, train.size());
  }

  Tape tape;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cosine_lr(cfg.learning_rate, epoch, cfg.epochs);
    auto batches = paired_epoch_stream(ts, cfg.batch_size, shuffle_rng);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (BatchPair& bp : batches) {
      if (cfg.mixup.mode == MixupMode::same_instance_only)
        for (std::size_t i = 0; i < bp.first.size(); ++i)
          bp.second[i] = same_instance_partner(bp.first[i], ts, groups, pair_rng);
      const double lambda =
          cfg.mixup.mode == MixupMode::off ? 1.0 : detail::draw_lambda(cfg, mix_rng);
      const MixedBatch mb =
          mix_triple_batch(bp.first, bp.second, lambda, train, ann.num_annotators);

      tape.reset();
      const auto clf_staged = stage_layers(tape, st.model.classifier.layers);
      const auto ann_staged = stage_layers(tape, st.model.annotator.layers);
      const Var x = tape.input(mb.x);
      const Var a = tape.input(mb.a);
      const Var z = tape.input(mb.z);
      const auto fwd = classifier_forward(tape, st.model.classifier, clf_staged, x);
      const Var embedding =
          cfg.detach_embedding ? tape.input(tape.value(fwd.embedding)) : fwd.embedding;
      const Var confusion =
          annotator_forward(tape, st.model.annotator, ann_staged, embedding, a);
      const Var loss = annotmix_loss(tape, combine(tape, fwd.probs, confusion), z);

      const double loss_val = tape.value(loss)(0, 0);
      if (!std::isfinite(loss_val)) throw TrainingDiverged(epoch, "non-finite training loss");
      tape.backward(loss);

      std::vector<const Matrix*> grads;
      grads.reserve(params.size());
      for (const auto& l : clf_staged) {
        grads.push_back(&tape.grad(l.w));
        grads.push_back(&tape.grad(l.b));
      }
      for (const auto& l : ann_staged) {
        grads.push_back(&tape.grad(l.w));
        grads.push_back(&tape.grad(l.b));
      }
      opt.step(grads, lr);
      ++st.steps;
      loss_sum += loss_val * static_cast<double>(bp.first.size());
      seen += bp.first.size();
    }
    detail::epoch_metrics(st, epoch, loss_sum, seen, ts.triples, train, val, test, lr);
  }
  return st;
}

// Two-stage baselines: aggregate labels (majority vote, or true labels for
// the upper baseline), then train the classifier alone, optionally with
// vanilla mixup over (instance, label) pairs.
inline TrainState train_two_stage(const Dataset& train, const AnnotationSet& ann,
                                  const TrainConfig& cfg, const Dataset* val = nullptr,
                                  const Dataset* test = nullptr) {
  Rng root(cfg.seed);
  Rng init_rng = root.derive(detail::kInitStream);
  Rng shuffle_rng = root.derive(detail::kShuffleStream);
  Rng mix_rng = root.derive(detail::kMixStream);
  Rng vote_rng = root.derive(detail::kVoteStream);

  TrainState st;
  std::vector<int> instances;
  std::vector<int> labels;
  if (cfg.method == TrainMethod::true_base) {
    if (!train.has_labels())
      throw std::invalid_argument("train: method true_base requires true labels");
    instances.resize(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) instances[i] = static_cast<int>(i);
    labels = train.true_labels;
  } else {
    const auto groups = group_by_instance(ann, train.size());
    for (std::size_t n = 0; n < train.size(); ++n) {
      const auto vote = majority_vote(ann, groups, static_cast<int>(n), vote_rng);
      if (!vote) {
        ++st.unlabeled_excluded;
        continue;
      }
      instances.push_back(static_cast<int>(n));
      labels.push_back(*vote);
    }
    if (instances.empty())
      throw std::invalid_argument("train: no instance has any annotation to vote on");
  }

  st.model.classifier = ClassifierNet::create(detail::layer_sizes_for(train, cfg), init_rng);
  st.model.has_annotator = false;

  std::vector<Matrix*> params = st.model.classifier.params();
  AdamW opt(params, 0.9, 0.999, 1e-8, cfg.weight_decay);
  const TripleSet ts = build_triples(train, ann);
  const bool mix_on = cfg.method == TrainMethod::mv_mixup;

  Tape tape;
  const std::size_t k = instances.size();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cosine_lr(cfg.learning_rate, epoch, cfg.epochs);
    const auto p1 = shuffle_rng.permutation(k);
    const auto p2 = shuffle_rng.permutation(k);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < k; start += cfg.batch_size) {
      const std::size_t stop = std::min(start + cfg.batch_size, k);
      std::vector<int> inst1, lab1, inst2, lab2;
      for (std::size_t i = start; i < stop; ++i) {
        inst1.push_back(instances[p1[i]]);
        lab1.push_back(labels[p1[i]]);
        inst2.push_back(instances[p2[i]]);
        lab2.push_back(labels[p2[i]]);
      }
      const double lambda = mix_on ? detail::draw_lambda(cfg, mix_rng) : 1.0;
      const MixedPairBatch mb = mix_vanilla_batch(inst1, lab1, inst2, lab2, lambda, train);

      tape.reset();
      const auto staged = stage_layers(tape, st.model.classifier.layers);
      const auto fwd = classifier_forward(tape, st.model.classifier, staged, tape.input(mb.x));
      const Var loss = annotmix_loss(tape, fwd.probs, tape.input(mb.y));
      const double loss_val = tape.value(loss)(0, 0);
      if (!std::isfinite(loss_val)) throw TrainingDiverged(epoch, "non-finite training loss");
      tape.backward(loss);
      std::vector<const Matrix*> grads;
      for (const auto& l : staged) {
        grads.push_back(&tape.grad(l.w));
        grads.push_back(&tape.grad(l.b));
      }
      opt.step(grads, lr);
      ++st.steps;
      loss_sum += loss_val * static_cast<double>(stop - start);
      seen += stop - start;
    }
    detail::epoch_metrics(st, epoch, loss_sum, seen, ts.triples, train, val, test, lr);
  }
  return st;
}

inline TrainState train(const Dataset& train, const AnnotationSet& ann, const TrainConfig& cfg,
                        const Dataset* val = nullptr, const Dataset* test = nullptr) {
  validate(cfg);
  if (cfg.method == TrainMethod::annot_mix) return train_annotmix(train, ann, cfg, val, test);
  return train_two_stage(train, ann, cfg, val, test);
}

}  // namespace annotmix
