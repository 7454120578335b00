#pragma once

#include <cmath>
#include <vector>

#include "sfcl/nn.hpp"

namespace sfcl::optim {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Shrinks θ by lr·wd·θ each step, outside the moment estimates.
  double weight_decay = 1e-8;
};

template <Scalar T>
struct AdamSlot {
  Tensor<T> m, v;
};

/// One Adam update of `param` in place. `t` is the 1-based step count.
template <Scalar T>
void adam_step(Tensor<T>& param, const Tensor<T>& grad, AdamSlot<T>& state, std::size_t t, const AdamConfig& cfg) {
  if (t == 0) throw UsageError("adam_step: step counter starts at 1");
  if (!grad.empty() && grad.dims() != param.dims())
    throw ShapeError("adam_step: gradient " + shape_str(grad.dims()) + " does not match parameter " + shape_str(param.dims()));
  if (state.m.empty()) {
    state.m = Tensor<T>(param.dims());
    state.v = Tensor<T>(param.dims());
  }
  if (state.m.dims() != param.dims()) throw ShapeError("adam_step: optimizer state shape mismatch");
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(cfg.beta1, static_cast<double>(t)));
  const T c2 = static_cast<T>(1.0 - std::pow(cfg.beta2, static_cast<double>(t)));
  const T lr = static_cast<T>(cfg.lr), eps = static_cast<T>(cfg.eps), wd = static_cast<T>(cfg.weight_decay);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const T g = grad.empty() ? T{0} : grad[i];
    state.m[i] = b1 * state.m[i] + (T{1} - b1) * g;
    state.v[i] = b2 * state.v[i] + (T{1} - b2) * g * g;
    const T mhat = state.m[i] / c1;
    const T vhat = state.v[i] / c2;
    param[i] = param[i] - lr * wd * param[i] - lr * mhat / (std::sqrt(vhat) + eps);
  }
}

/// Adam over every trainable entry of a parameter store.
template <Scalar T>
class Adam {
 public:
  Adam(nn::ParamStore<T>& store, AdamConfig cfg) : params_(store.trainable()), slots_(params_.size()), cfg_(cfg) {}

  void step() {
    ++t_;
    for (std::size_t i = 0; i < params_.size(); ++i)
      adam_step(params_[i].mutable_value(), params_[i].grad(), slots_[i], t_, cfg_);
  }

  std::size_t steps() const { return t_; }

 private:
  std::vector<Var<T>> params_;
  std::vector<AdamSlot<T>> slots_;
  AdamConfig cfg_;
  std::size_t t_ = 0;
};

}  // namespace sfcl::optim
