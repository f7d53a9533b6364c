#ifndef TOKENPOSE_OPTIM_HPP
#define TOKENPOSE_OPTIM_HPP

#include <cmath>
#include <vector>

#include "tokenpose/config.hpp"
#include "tokenpose/tensor.hpp"

namespace tokenpose {

// Piecewise-constant schedule: base rate divided by the drop factor at each
// drop epoch, drops inclusive at the boundary.
inline double lr_at(std::size_t epoch, const TrainConfig& cfg) {
  double lr = cfg.base_lr;
  for (std::size_t e : cfg.lr_drop_epochs)
    if (epoch >= e) lr *= cfg.lr_drop_factor;
  return lr;
}

// Adam with the bias correction folded into the step size:
//   alpha_t = lr * sqrt(1 - b2^t) / (1 - b1^t);  p -= alpha_t * m / (sqrt(v) + eps)
template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m, v;
  std::uint64_t step = 0;

  void init(const std::vector<Tensor<T>>& params) {
    m.clear();
    v.clear();
    for (const auto& p : params) {
      m.emplace_back(p.numel(), T(0));
      v.emplace_back(p.numel(), T(0));
    }
    step = 0;
  }
};

template <typename T>
void adam_step(std::vector<Tensor<T>>& params, const std::vector<const std::vector<T>*>& grads,
               AdamState<T>& state, double lr, double beta1 = 0.9, double beta2 = 0.999,
               double eps = 1e-8) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw ShapeMismatch("adam_step: parameter/gradient/state counts disagree");
  ++state.step;
  double t = static_cast<double>(state.step);
  double alpha = lr * std::sqrt(1.0 - std::pow(beta2, t)) / (1.0 - std::pow(beta1, t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].mutable_values();
    const std::vector<T>& g = *grads[i];
    if (g.size() != p.size())
      throw ShapeMismatch("adam_step: gradient size " + std::to_string(g.size()) +
                          " != parameter size " + std::to_string(p.size()));
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      double gj = static_cast<double>(g[j]);
      double mj = beta1 * static_cast<double>(m[j]) + (1.0 - beta1) * gj;
      double vj = beta2 * static_cast<double>(v[j]) + (1.0 - beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      p[j] = static_cast<T>(static_cast<double>(p[j]) - alpha * mj / (std::sqrt(vj) + eps));
    }
  }
}

}  // namespace tokenpose

#endif
