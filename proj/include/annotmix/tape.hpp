#pragma once

#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "annotmix/matrix.hpp"

namespace annotmix {

// Handle to a node on a Tape.
struct Var {
  int id = -1;
};

// Reverse-mode differentiation at matrix granularity. Operations append
// nodes in evaluation order; backward() replays adjoint updates in exact
// reverse order of recording. Adjoints of nodes the loss never touched
// stay zero.
class Tape {
 public:
  Var input(Matrix m) {
    nodes_.push_back(Node{std::move(m), {}, false, nullptr});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  const Matrix& value(Var v) const { return nodes_[check(v)].value; }

  // Adjoint after backward(); a fresh zero matrix for untouched nodes.
  const Matrix& grad(Var v) { return grad_ref(check(v)); }

  std::size_t size() const { return nodes_.size(); }

  void reset() { nodes_.clear(); }

  Var matmul(Var a, Var b) {
    const Matrix& av = value(a);
    const Matrix& bv = value(b);
    if (av.cols() != bv.rows()) {
      throw std::invalid_argument("matmul: inner dimensions " + std::to_string(av.cols()) +
                                  " vs " + std::to_string(bv.rows()));
    }
    Matrix out(av.rows(), bv.cols());
    matmul_acc(out, av, bv);
    return push(std::move(out), [a, b](Tape& t, const Matrix& g) {
      matmul_nt_acc(t.grad_ref(a.id), g, t.value(b));
      matmul_tn_acc(t.grad_ref(b.id), t.value(a), g);
    });
  }

  Var add(Var a, Var b) {
    const Matrix& av = value(a);
    const Matrix& bv = value(b);
    check_same_shape(av, bv, "add");
    Matrix out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += bv.data()[i];
    return push(std::move(out), [a, b](Tape& t, const Matrix& g) {
      t.accumulate(a, g);
      t.accumulate(b, g);
    });
  }

  Var sub(Var a, Var b) {
    const Matrix& av = value(a);
    const Matrix& bv = value(b);
    check_same_shape(av, bv, "sub");
    Matrix out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] -= bv.data()[i];
    return push(std::move(out), [a, b](Tape& t, const Matrix& g) {
      t.accumulate(a, g);
      Matrix& gb = t.grad_ref(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) gb.data()[i] -= g.data()[i];
    });
  }

  Var hadamard(Var a, Var b) {
    const Matrix& av = value(a);
    const Matrix& bv = value(b);
    check_same_shape(av, bv, "hadamard");
    Matrix out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= bv.data()[i];
    return push(std::move(out), [a, b](Tape& t, const Matrix& g) {
      Matrix& ga = t.grad_ref(a.id);
      Matrix& gb = t.grad_ref(b.id);
      const Matrix& av2 = t.value(a);
      const Matrix& bv2 = t.value(b);
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga.data()[i] += g.data()[i] * bv2.data()[i];
        gb.data()[i] += g.data()[i] * av2.data()[i];
      }
    });
  }

  // The single broadcast in the library: a 1 x cols row added to every row.
  Var add_row(Var a, Var row) {
    const Matrix& av = value(a);
    const Matrix& rv = value(row);
    if (rv.rows() != 1 || rv.cols() != av.cols()) {
      throw std::invalid_argument("add_row: expected 1x" + std::to_string(av.cols()) + ", got " +
                                  std::to_string(rv.rows()) + "x" + std::to_string(rv.cols()));
    }
    Matrix out = av;
    for (std::size_t i = 0; i < out.rows(); ++i) {
      double* oi = out.row(i);
      for (std::size_t j = 0; j < out.cols(); ++j) oi[j] += rv.data()[j];
    }
    return push(std::move(out), [a, row](Tape& t, const Matrix& g) {
      t.accumulate(a, g);
      Matrix& gr = t.grad_ref(row.id);
      for (std::size_t i = 0; i < g.rows(); ++i) {
        const double* gi = g.row(i);
        for (std::size_t j = 0; j < g.cols(); ++j) gr.data()[j] += gi[j];
      }
    });
  }

  Var scale(Var a, double s) {
    Matrix out = value(a);
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= s;
    return push(std::move(out), [a, s](Tape& t, const Matrix& g) {
      Matrix& ga = t.grad_ref(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga.data()[i] += s * g.data()[i];
    });
  }

  Var leaky_relu(Var a, double slope) {
    const Matrix& av = value(a);
    Matrix out = av;
    for (std::size_t i = 0; i < out.size(); ++i)
      if (out.data()[i] < 0.0) out.data()[i] *= slope;
    return push(std::move(out), [a, slope](Tape& t, const Matrix& g) {
      Matrix& ga = t.grad_ref(a.id);
      const Matrix& av2 = t.value(a);
      for (std::size_t i = 0; i < g.size(); ++i)
        ga.data()[i] += g.data()[i] * (av2.data()[i] >= 0.0 ? 1.0 : slope);
    });
  }

  // Softmax over consecutive groups of `group` entries per row. group == cols
  // is the plain row softmax; the annotator head uses group == C over C*C
  // columns, one simplex per confusion-matrix row.
  Var softmax_groups(Var a, std::size_t group) {
    Matrix out = softmax_groups_value(value(a), group);
    return push(std::move(out), [a, group](Tape& t, const Matrix& g, int self) {
      Matrix& ga = t.grad_ref(a.id);
      const Matrix& y = t.nodes_[self].value;
      for (std::size_t i = 0; i < g.rows(); ++i) {
        const double* yi = y.row(i);
        const double* gi = g.row(i);
        double* gai = ga.row(i);
        for (std::size_t base = 0; base < g.cols(); base += group) {
          double dot = 0.0;
          for (std::size_t j = 0; j < group; ++j) dot += gi[base + j] * yi[base + j];
          for (std::size_t j = 0; j < group; ++j)
            gai[base + j] += yi[base + j] * (gi[base + j] - dot);
        }
      }
    });
  }

  Var softmax_rows(Var a) { return softmax_groups(a, value(a).cols()); }

  // ln(max(x, floor)); the flat region below the floor has zero derivative.
  Var log_floor(Var a, double floor) {
    const Matrix& av = value(a);
    Matrix out(av.rows(), av.cols());
    for (std::size_t i = 0; i < out.size(); ++i)
      out.data()[i] = std::log(std::max(av.data()[i], floor));
    return push(std::move(out), [a, floor](Tape& t, const Matrix& g) {
      Matrix& ga = t.grad_ref(a.id);
      const Matrix& av2 = t.value(a);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (av2.data()[i] > floor) ga.data()[i] += g.data()[i] / av2.data()[i];
    });
  }

  Var concat_cols(Var a, Var b) {
    const Matrix& av = value(a);
    const Matrix& bv = value(b);
    if (av.rows() != bv.rows()) {
      throw std::invalid_argument("concat_cols: row counts " + std::to_string(av.rows()) +
                                  " vs " + std::to_string(bv.rows()));
    }
    Matrix out(av.rows(), av.cols() + bv.cols());
    for (std::size_t i = 0; i < av.rows(); ++i) {
      double* oi = out.row(i);
      const double* ai = av.row(i);
      const double* bi = bv.row(i);
      for (std::size_t j = 0; j < av.cols(); ++j) oi[j] = ai[j];
      for (std::size_t j = 0; j < bv.cols(); ++j) oi[av.cols() + j] = bi[j];
    }
    return push(std::move(out), [a, b](Tape& t, const Matrix& g) {
      Matrix& ga = t.grad_ref(a.id);
      Matrix& gb = t.grad_ref(b.id);
      const std::size_t ac = ga.cols();
      for (std::size_t i = 0; i < g.rows(); ++i) {
        const double* gi = g.row(i);
        double* gai = ga.row(i);
        double* gbi = gb.row(i);
        for (std::size_t j = 0; j < ac; ++j) gai[j] += gi[j];
        for (std::size_t j = 0; j < gb.cols(); ++j) gbi[j] += gi[ac + j];
      }
    });
  }

  // Row-wise vector-matrix product: probs (batch x C) against per-row C x C
  // slices stored flat (batch x C*C). out[i][j] = sum_c probs[i][c] *
  // slices[i][c*C + j].
  Var row_dot_slices(Var probs, Var slices) {
    const Matrix& pv = value(probs);
    const Matrix& sv = value(slices);
    const std::size_t c = pv.cols();
    if (sv.rows() != pv.rows() || sv.cols() != c * c) {
      throw std::invalid_argument("row_dot_slices: expected " + std::to_string(pv.rows()) + "x" +
                                  std::to_string(c * c) + " slices, got " +
                                  std::to_string(sv.rows()) + "x" + std::to_string(sv.cols()));
    }
    Matrix out(pv.rows(), c);
    for (std::size_t i = 0; i < pv.rows(); ++i) {
      const double* pi = pv.row(i);
      const double* si = sv.row(i);
      double* oi = out.row(i);
      for (std::size_t cc = 0; cc < c; ++cc) {
        const double pc = pi[cc];
        for (std::size_t j = 0; j < c; ++j) oi[j] += pc * si[cc * c + j];
      }
    }
    return push(std::move(out), [probs, slices, c](Tape& t, const Matrix& g) {
      Matrix& gp = t.grad_ref(probs.id);
      Matrix& gs = t.grad_ref(slices.id);
      const Matrix& pv2 = t.value(probs);
      const Matrix& sv2 = t.value(slices);
      for (std::size_t i = 0; i < g.rows(); ++i) {
        const double* gi = g.row(i);
        const double* pi = pv2.row(i);
        const double* si = sv2.row(i);
        double* gpi = gp.row(i);
        double* gsi = gs.row(i);
        for (std::size_t cc = 0; cc < c; ++cc) {
          double acc = 0.0;
          for (std::size_t j = 0; j < c; ++j) {
            acc += gi[j] * si[cc * c + j];
            gsi[cc * c + j] += gi[j] * pi[cc];
          }
          gpi[cc] += acc;
        }
      }
    });
  }

  Var sum_all(Var a) {
    const Matrix& av = value(a);
    double s = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) s += av.data()[i];
    Matrix out(1, 1, s);
    return push(std::move(out), [a](Tape& t, const Matrix& g) {
      Matrix& ga = t.grad_ref(a.id);
      for (std::size_t i = 0; i < ga.size(); ++i) ga.data()[i] += g(0, 0);
    });
  }

  Var mean_all(Var a) {
    const std::size_t n = value(a).size();
    return scale(sum_all(a), 1.0 / static_cast<double>(n));
  }

  Var neg(Var a) { return scale(a, -1.0); }

  void backward(Var loss) {
    const Matrix& lv = value(loss);
    if (lv.rows() != 1 || lv.cols() != 1) {
      throw std::invalid_argument("backward: loss must be 1x1, got " + std::to_string(lv.rows()) +
                                  "x" + std::to_string(lv.cols()));
    }
    grad_ref(loss.id)(0, 0) = 1.0;
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.backward && n.grad_live) n.backward(*this, n.grad, i);
    }
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool grad_live = false;
    std::function<void(Tape&, const Matrix&, int)> backward;
  };

  int check(Var v) const {
    if (v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
      throw std::invalid_argument("Tape: invalid Var");
    return v.id;
  }

  Matrix& grad_ref(int id) {
    Node& n = nodes_[id];
    if (!n.grad_live) {
      n.grad = Matrix(n.value.rows(), n.value.cols());
      n.grad_live = true;
    }
    return n.grad;
  }

  void accumulate(Var v, const Matrix& g) {
    Matrix& gv = grad_ref(v.id);
    for (std::size_t i = 0; i < g.size(); ++i) gv.data()[i] += g.data()[i];
  }

  template <typename F>
  Var push(Matrix value, F&& back) {
    Node n;
    n.value = std::move(value);
    if constexpr (std::is_invocable_v<F, Tape&, const Matrix&, int>) {
      n.backward = std::forward<F>(back);
    } else {
      n.backward = [f = std::forward<F>(back)](Tape& t, const Matrix& g, int) { f(t, g); };
    }
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
};

}  // namespace annotmix
