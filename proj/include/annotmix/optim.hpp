#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "annotmix/matrix.hpp"

namespace annotmix {

// Adaptive-moment optimizer with decoupled weight decay. Moments are owned
// here, keyed by position in the parameter list handed to the constructor.
class AdamW {
 public:
  AdamW(std::vector<Matrix*> params, double beta1 = 0.9, double beta2 = 0.999,
        double eps = 1e-8, double weight_decay = 0.0)
      : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps),
        weight_decay_(weight_decay) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const Matrix* p : params_) {
      m_.emplace_back(p->rows(), p->cols());
      v_.emplace_back(p->rows(), p->cols());
    }
  }

  std::size_t num_params() const { return params_.size(); }

  // One update over all parameters; grads[i] pairs with params[i].
  void step(const std::vector<const Matrix*>& grads, double lr) {
    if (grads.size() != params_.size())
      throw std::invalid_argument("AdamW::step: gradient count mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Matrix& p = *params_[k];
      const Matrix& g = *grads[k];
      check_same_shape(p, g, "AdamW::step");
      if (!g.all_finite())
        throw std::runtime_error("AdamW::step: non-finite gradient in parameter " +
                                 std::to_string(k));
      double* pd = p.data();
      const double* gd = g.data();
      double* md = m_[k].data();
      double* vd = v_[k].data();
      for (std::size_t i = 0; i < p.size(); ++i) {
        md[i] = beta1_ * md[i] + (1.0 - beta1_) * gd[i];
        vd[i] = beta2_ * vd[i] + (1.0 - beta2_) * gd[i] * gd[i];
        const double mhat = md[i] / bc1;
        const double vhat = vd[i] / bc2;
        pd[i] -= lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * pd[i]);
      }
    }
  }

 private:
  std::vector<Matrix*> params_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  double beta1_;
  double beta2_;
  double eps_;
  double weight_decay_;
  long t_ = 0;
};

// Cosine annealing from lr0 at epoch 0 to exactly 0 at the final epoch.
inline double cosine_lr(double lr0, int epoch, int total_epochs) {
  if (total_epochs <= 1) return epoch == 0 ? lr0 : 0.0;
  const double pi = 3.14159265358979323846;
  return lr0 * 0.5 *
         (1.0 + std::cos(pi * static_cast<double>(epoch) / static_cast<double>(total_epochs - 1)));
}

}  // namespace annotmix
