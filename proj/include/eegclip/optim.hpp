#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "eegclip/nn.hpp"

namespace eegclip {

// Adam with L2 weight decay added to the gradient (PyTorch `Adam` semantics).
// Parameters are registered in groups that scale the base learning rate.
template <class T>
class Adam {
 public:
  struct Group {
    nn::ParamList<T> params;
    double lr_scale = 1.0;
    double weight_decay = 0.0;
  };

  Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void add_group(nn::ParamList<T> params, double lr_scale, double weight_decay) {
    Group g{{}, lr_scale, weight_decay};
    for (auto* p : params)
      if (p->trainable) g.params.push_back(p);
    for (auto* p : g.params) {
      m_.emplace_back(p->value.size(), 0.0);
      v_.emplace_back(p->value.size(), 0.0);
    }
    groups_.push_back(std::move(g));
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, double(t_));
    const double bc2 = 1.0 - std::pow(beta2_, double(t_));
    std::size_t slot = 0;
    for (auto& g : groups_) {
      const double lr = lr_ * g.lr_scale;
      for (auto* p : g.params) {
        auto& m = m_[slot];
        auto& v = v_[slot];
        ++slot;
        for (std::size_t i = 0; i < p->value.size(); ++i) {
          const double grad = double(p->grad.data[i]) + g.weight_decay * double(p->value.data[i]);
          m[i] = beta1_ * m[i] + (1.0 - beta1_) * grad;
          v[i] = beta2_ * v[i] + (1.0 - beta2_) * grad * grad;
          if (lr == 0.0) continue;
          const double update = lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
          p->value.data[i] = T(double(p->value.data[i]) - update);
        }
      }
    }
  }

  void zero_grad() {
    for (auto& g : groups_) nn::zero_grads(g.params);
  }

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Group> groups_;
  std::vector<std::vector<double>> m_, v_;
};

// Learning rate at optimizer step `step` (0-based) of `total`: linear warmup
// over the first `warmup` steps, then either constant or cosine annealing to 0.
inline double scheduled_lr(double base, std::size_t step, std::size_t total, std::size_t warmup,
                           bool cosine) {
  if (step < warmup) return base * double(step + 1) / double(warmup);
  if (!cosine || total <= warmup) return base;
  const double progress = double(step - warmup) / double(total - warmup);
  return 0.5 * base * (1.0 + std::cos(3.14159265358979323846 * progress));
}

}  // namespace eegclip
