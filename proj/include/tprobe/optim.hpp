#pragma once

#include <cmath>
#include <span>
#include <stdexcept>

#include "tprobe/tensor.hpp"

namespace tprobe {

template <typename T>
struct LossResult {
  double loss = 0.0;
  Tensor<T> grad;  // dL/dpred, same shape as pred
};

/// Mean squared error L = (1/N)·Σ(y − ŷ)², with dL/dŷ = 2(ŷ − y)/N.
template <typename T>
LossResult<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.size() != target.size())
    throw ShapeError("mse: prediction length " + std::to_string(pred.size()) + " vs target " +
                     std::to_string(target.size()));
  if (pred.size() == 0) throw ShapeError("mse: empty input");
  const double n = static_cast<double>(pred.size());
  LossResult<T> out{0.0, Tensor<T>(pred.shape())};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double diff = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    out.loss += diff * diff;
    out.grad[i] = static_cast<T>(2.0 * diff / n);
  }
  out.loss /= n;
  return out;
}

struct AdamOptions {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;
};

/// One Adam update with bias correction. Weight decay is decoupled and
/// applied to the value before the moment update. Clears the gradient.
template <typename T>
void adam_step(Parameter<T>& p, const AdamOptions& opt) {
  p.step_count += 1;
  const double t = static_cast<double>(p.step_count);
  const double c1 = 1.0 - std::pow(opt.beta1, t);
  const double c2 = 1.0 - std::pow(opt.beta2, t);
  for (std::size_t i = 0; i < p.size(); ++i) {
    double value = p.value[i];
    const double g = p.grad[i];
    if (opt.weight_decay != 0.0) value -= opt.lr * opt.weight_decay * value;
    const double m = opt.beta1 * p.adam_m[i] + (1.0 - opt.beta1) * g;
    const double v = opt.beta2 * p.adam_v[i] + (1.0 - opt.beta2) * g * g;
    p.adam_m[i] = static_cast<T>(m);
    p.adam_v[i] = static_cast<T>(v);
    value -= opt.lr * (m / c1) / (std::sqrt(v / c2) + opt.eps);
    p.value[i] = static_cast<T>(value);
  }
  p.zero_grad();
}

template <typename T>
void adam_step(const ParamRefs<T>& params, const AdamOptions& opt) {
  for (auto* p : params) adam_step(*p, opt);
}

template <typename T>
double grad_norm(const ParamRefs<T>& params) {
  double sq = 0.0;
  for (const auto* p : params)
    for (auto g : p->grad.values()) sq += static_cast<double>(g) * g;
  return std::sqrt(sq);
}

/// Rescales all gradients so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(const ParamRefs<T>& params, double max_norm) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("clip_grad_norm: max_norm must be positive");
  const double norm = grad_norm(params);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto* p : params)
      for (auto& g : p->grad.values()) g = static_cast<T>(g * scale);
  }
  return norm;
}

template <typename T>
void zero_grads(const ParamRefs<T>& params) {
  for (auto* p : params) p->zero_grad();
}

}  // namespace tprobe
