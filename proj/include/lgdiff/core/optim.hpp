#pragma once

#include <cmath>
#include <vector>

#include "lgdiff/core/nn.hpp"

namespace lgdiff {

// Cosine annealing from lr_max at step 0 to lr_min at step `total`.
inline double cosine_lr(double lr_max, double lr_min, Index step, Index total) {
  if (total <= 0) return lr_max;
  const double t = static_cast<double>(std::min(step, total)) / static_cast<double>(total);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(M_PI * t));
}

template <typename S>
class Adam {
 public:
  explicit Adam(ParamStore<S>& params, double lr = 1e-4, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8)
      : params_(params), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& [n, v] : params_.items()) {
      m_.push_back(Tensor<S>::zeros(v->value.shape()));
      v_.push_back(Tensor<S>::zeros(v->value.shape()));
    }
  }

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    std::size_t i = 0;
    for (const auto& [n, p] : params_.items()) {
      if (p->has_grad()) {
        auto& g = p->grad.data();
        m_[i].data() = S(beta1_) * m_[i].data() + S(1.0 - beta1_) * g;
        v_[i].data() = S(beta2_) * v_[i].data() + S(1.0 - beta2_) * g * g;
        p->value.data() -=
            S(lr_) * (m_[i].data() / S(bc1)) /
            ((v_[i].data() / S(bc2)).sqrt() + S(eps_));
      }
      ++i;
    }
  }

  void zero_grad() { params_.zero_grad(); }

 private:
  ParamStore<S>& params_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Tensor<S>> m_, v_;
};

}  // namespace lgdiff
