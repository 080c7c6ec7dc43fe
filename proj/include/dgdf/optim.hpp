#pragma once

#include <cmath>
#include <vector>

#include "dgdf/tensor.hpp"

namespace dgdf {

// Standard Adam with bias correction. One moment pair per parameter tensor.
struct AdamState {
  double lr = 8e-5;  // default training rate
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::vector<std::vector<float>> m, v;

  void ensure(const std::vector<Tensor>& params) {
    if (!m.empty()) return;
    m.resize(params.size());
    v.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      m[i].assign(static_cast<size_t>(params[i].numel()), 0.0f);
      v[i].assign(static_cast<size_t>(params[i].numel()), 0.0f);
    }
  }
};

inline void adam_step(std::vector<Tensor>& params,
                      const std::vector<const std::vector<float>*>& grads, AdamState& state,
                      double lr) {
  require(params.size() == grads.size(), "adam_step: params/grads size mismatch");
  state.ensure(params);
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (size_t pi = 0; pi < params.size(); ++pi) {
    const std::vector<float>& g = *grads[pi];
    require_shape(static_cast<std::int64_t>(g.size()) == params[pi].numel(),
                  "adam_step: grad size mismatch");
    float* w = params[pi].mutable_data();
    float* m = state.m[pi].data();
    float* v = state.v[pi].data();
    const double b1 = state.beta1, b2 = state.beta2, eps = state.eps;
    parallel_for(static_cast<std::int64_t>(g.size()), [&](std::int64_t i) {
      double gi = g[static_cast<size_t>(i)];
      double mi = b1 * m[i] + (1.0 - b1) * gi;
      double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      double update = (mi / bc1) / (std::sqrt(vi / bc2) + eps);
      w[i] = static_cast<float>(w[i] - lr * update);
    }, 16384);
  }
}

inline void adam_step(std::vector<Tensor>& params,
                      const std::vector<const std::vector<float>*>& grads, AdamState& state) {
  adam_step(params, grads, state, state.lr);
}

// Exponential moving average of weights. The shadow is kept in f64: the
// update moves by only (1-decay) of the gap per step, which underflows f32
// rounding long before the advertised convergence horizon.
struct EmaState {
  double decay = 0.995;
  std::vector<std::vector<double>> shadow;

  bool initialized() const { return !shadow.empty(); }

  void init_from(const std::vector<Tensor>& params) {
    shadow.clear();
    shadow.reserve(params.size());
    for (const auto& p : params)
      shadow.emplace_back(p.vec().begin(), p.vec().end());
  }

  // f32 snapshot of parameter pi, for sampling and serialization.
  Tensor snapshot(size_t pi, Shape4 shape) const {
    std::vector<float> v(shadow[pi].begin(), shadow[pi].end());
    return Tensor::from(shape, std::move(v));
  }
};

// m <- decay*m + (1-decay)*w, elementwise.
inline void ema_update(EmaState& ema, const std::vector<Tensor>& live, double decay) {
  require(decay > 0.0 && decay < 1.0, "ema_update: decay must be in (0,1)");
  if (!ema.initialized()) ema.init_from(live);
  require(ema.shadow.size() == live.size(), "ema_update: size mismatch");
  const double od = 1.0 - decay;
  for (size_t pi = 0; pi < ema.shadow.size(); ++pi) {
    require_shape(static_cast<std::int64_t>(ema.shadow[pi].size()) == live[pi].numel(),
                  "ema_update: shape mismatch");
    double* m = ema.shadow[pi].data();
    const float* w = live[pi].data();
    parallel_for(live[pi].numel(), [&](std::int64_t i) {
      m[i] = decay * m[i] + od * w[i];
    }, 16384);
  }
}

}  // namespace dgdf
