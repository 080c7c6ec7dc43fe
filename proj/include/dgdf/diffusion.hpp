#pragma once

// Noise schedules and the forward/reverse diffusion processes, plus the
// noise-prediction training step. Steps use the convention t in 0..T where
// t = 0 means "no diffusion" and training draws t from {1..T}.

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "dgdf/nn_ops.hpp"
#include "dgdf/optim.hpp"
#include "dgdf/rng.hpp"
#include "dgdf/tensor.hpp"

namespace dgdf {

struct NoiseSchedule {
  int T = 0;
  double beta_start = 0.0, beta_end = 0.0;
  // arrays indexed 1..T; index 0 is the t=0 convention (alpha_bar[0] = 1)
  std::vector<double> beta, alpha, alpha_bar;
  std::vector<double> sqrt_alpha_bar, sqrt_one_minus_alpha_bar;
  std::vector<double> posterior_mean_coef_x0, posterior_mean_coef_xt, posterior_variance;

  void check_t(int t) const {
    require(t >= 1 && t <= T, "diffusion step t=" + std::to_string(t) + " out of range 1.." +
                                  std::to_string(T));
  }
};

inline NoiseSchedule linear_schedule(int T, double beta_start = 1e-4, double beta_end = 0.02) {
  require(T >= 1, "schedule: T must be >= 1");
  require(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0,
          "schedule: need 0 < beta_start < beta_end < 1");
  NoiseSchedule s;
  s.T = T;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  s.beta.assign(static_cast<size_t>(T) + 1, 0.0);
  s.alpha.assign(static_cast<size_t>(T) + 1, 1.0);
  s.alpha_bar.assign(static_cast<size_t>(T) + 1, 1.0);
  s.sqrt_alpha_bar.assign(static_cast<size_t>(T) + 1, 1.0);
  s.sqrt_one_minus_alpha_bar.assign(static_cast<size_t>(T) + 1, 0.0);
  s.posterior_mean_coef_x0.assign(static_cast<size_t>(T) + 1, 0.0);
  s.posterior_mean_coef_xt.assign(static_cast<size_t>(T) + 1, 0.0);
  s.posterior_variance.assign(static_cast<size_t>(T) + 1, 0.0);
  for (int t = 1; t <= T; ++t) {
    double b = T == 1 ? beta_start
                      : beta_start + (beta_end - beta_start) * (t - 1) / (T - 1);
    s.beta[static_cast<size_t>(t)] = b;
    s.alpha[static_cast<size_t>(t)] = 1.0 - b;
    s.alpha_bar[static_cast<size_t>(t)] = s.alpha_bar[static_cast<size_t>(t - 1)] * (1.0 - b);
    s.sqrt_alpha_bar[static_cast<size_t>(t)] = std::sqrt(s.alpha_bar[static_cast<size_t>(t)]);
    s.sqrt_one_minus_alpha_bar[static_cast<size_t>(t)] =
        std::sqrt(1.0 - s.alpha_bar[static_cast<size_t>(t)]);
    double ab_prev = s.alpha_bar[static_cast<size_t>(t - 1)];
    double ab = s.alpha_bar[static_cast<size_t>(t)];
    s.posterior_mean_coef_x0[static_cast<size_t>(t)] = std::sqrt(ab_prev) * b / (1.0 - ab);
    s.posterior_mean_coef_xt[static_cast<size_t>(t)] =
        std::sqrt(1.0 - b) * (1.0 - ab_prev) / (1.0 - ab);
    s.posterior_variance[static_cast<size_t>(t)] = (1.0 - ab_prev) / (1.0 - ab) * b;
  }
  return s;
}

// ------------------------------------------------------------- forward

// x_t = sqrt(abar_t) x0 + sqrt(1-abar_t) eps; t = 0 returns x0 unchanged.
inline Tensor forward_diffuse(const Tensor& x0, int t, const Tensor& eps,
                              const NoiseSchedule& sched) {
  if (t == 0) return x0.detached();
  sched.check_t(t);
  require_shape(eps.shape() == x0.shape(), "forward_diffuse: eps shape mismatch");
  float a = static_cast<float>(sched.sqrt_alpha_bar[static_cast<size_t>(t)]);
  float b = static_cast<float>(sched.sqrt_one_minus_alpha_bar[static_cast<size_t>(t)]);
  return scale_add(nullptr, a, x0, b, eps);
}

// per-sample steps for a batch
inline Tensor forward_diffuse(const Tensor& x0, std::span<const int> ts, const Tensor& eps,
                              const NoiseSchedule& sched) {
  const Shape4& s = x0.shape();
  require_shape(static_cast<int>(ts.size()) == s.n, "forward_diffuse: one t per sample");
  require_shape(eps.shape() == s, "forward_diffuse: eps shape mismatch");
  std::vector<float> out(static_cast<size_t>(s.numel()));
  const std::int64_t per = static_cast<std::int64_t>(s.c) * s.h * s.w;
  for (int n = 0; n < s.n; ++n) {
    int t = ts[static_cast<size_t>(n)];
    float a = 1.0f, b = 0.0f;
    if (t != 0) {
      sched.check_t(t);
      a = static_cast<float>(sched.sqrt_alpha_bar[static_cast<size_t>(t)]);
      b = static_cast<float>(sched.sqrt_one_minus_alpha_bar[static_cast<size_t>(t)]);
    }
    const float* px = x0.data() + n * per;
    const float* pe = eps.data() + n * per;
    float* po = out.data() + n * per;
    for (std::int64_t i = 0; i < per; ++i) po[i] = a * px[i] + b * pe[i];
  }
  return Tensor::from(s, std::move(out));
}

struct DiffusedSample {
  Tensor x_t;
  Tensor eps;  // the realized noise, kept for diagnostics and oracle tests
  int t = 0;
};

// Single closed-form jump from the handcrafted-degraded image to x_t.
inline DiffusedSample diffuse_from_initial_lq(const Tensor& x, int t, Rng& rng,
                                              const NoiseSchedule& sched) {
  DiffusedSample out;
  out.t = t;
  if (t == 0) {
    out.x_t = x.detached();
    out.eps = Tensor::zeros(x.shape());
    return out;
  }
  sched.check_t(t);
  out.eps = randn(rng, x.shape());
  out.x_t = forward_diffuse(x, t, out.eps, sched);
  return out;
}

// ------------------------------------------------------------- reverse

// x0_hat = (x_t - sqrt(1-abar_t) eps_hat) / sqrt(abar_t), optionally clamped
// to the model range [-1, 1].
inline Tensor predict_x0(const Tensor& x_t, int t, const Tensor& eps_hat,
                         const NoiseSchedule& sched, bool clamp = true) {
  sched.check_t(t);
  require_shape(eps_hat.shape() == x_t.shape(), "predict_x0: eps_hat shape mismatch");
  const float inv_a = static_cast<float>(1.0 / sched.sqrt_alpha_bar[static_cast<size_t>(t)]);
  const float b = static_cast<float>(sched.sqrt_one_minus_alpha_bar[static_cast<size_t>(t)]);
  std::vector<float> out(static_cast<size_t>(x_t.numel()));
  const float* px = x_t.data();
  const float* pe = eps_hat.data();
  parallel_for(x_t.numel(), [&](std::int64_t i) {
    float v = (px[i] - b * pe[i]) * inv_a;
    if (clamp) v = std::min(1.0f, std::max(-1.0f, v));
    out[static_cast<size_t>(i)] = v;
  }, 8192);
  return Tensor::from(x_t.shape(), std::move(out));
}

// One reverse step: Gaussian posterior around the x0-parameterized mean.
// No noise is injected at t = 1 (zero terminal variance) or when
// inject_noise is off.
inline Tensor posterior_step(const Tensor& x_t, int t, const Tensor& x0_hat, Rng& rng,
                             const NoiseSchedule& sched, bool inject_noise = true) {
  sched.check_t(t);
  require_shape(x0_hat.shape() == x_t.shape(), "posterior_step: x0_hat shape mismatch");
  const float c0 = static_cast<float>(sched.posterior_mean_coef_x0[static_cast<size_t>(t)]);
  const float ct = static_cast<float>(sched.posterior_mean_coef_xt[static_cast<size_t>(t)]);
  Tensor mean = scale_add(nullptr, c0, x0_hat, ct, x_t);
  if (!inject_noise || t <= 1) return mean;
  const float sig = static_cast<float>(std::sqrt(sched.posterior_variance[static_cast<size_t>(t)]));
  Tensor z = randn(rng, x_t.shape());
  return scale_add(nullptr, 1.0f, mean, sig, z);
}

// Noise predictor interface: (x_s, per-sample s) -> eps_hat.
using NoisePredictor = std::function<Tensor(const Tensor&, std::span<const int>)>;

// Walks s = t_start..1 with x0-prediction at every step; returns x_0.
// All samples in the batch share t_start.
inline Tensor reverse_chain(const Tensor& x_t, int t_start, const NoisePredictor& model,
                            Rng& rng, const NoiseSchedule& sched, bool deterministic = false) {
  if (t_start == 0) return x_t.detached();
  sched.check_t(t_start);
  Tensor x = x_t.detached();
  std::vector<int> ts(static_cast<size_t>(x.shape().n));
  for (int s = t_start; s >= 1; --s) {
    std::fill(ts.begin(), ts.end(), s);
    Tensor eps_hat = model(x, ts);
    require_shape(eps_hat.shape() == x.shape(), "reverse_chain: model output shape mismatch");
    Tensor x0_hat = predict_x0(x, s, eps_hat, sched, true);
    x = posterior_step(x, s, x0_hat, rng, sched, !deterministic);
  }
  return x;
}

// ------------------------------------------------------------- training

// Model surface needed by the training step; satisfied by denoiser::UNet and
// by test oracles.
template <class Model>
concept TrainableDenoiser = requires(Model m, Tape& tape, const Tensor& x,
                                     std::span<const int> ts) {
  { m.forward_train(tape, x, ts) } -> std::same_as<Tensor>;
  { m.parameters() } -> std::same_as<std::vector<Tensor>&>;
  { m.chained_gradients(tape) } -> std::same_as<std::vector<const std::vector<float>*>>;
};

struct TrainStepResult {
  double loss = 0.0;
  std::vector<int> ts;
};

// Draws t ~ U{1..T} and eps per sample, forms x_t by the closed-form jump,
// takes an L1 step between eps and the model prediction, then updates the
// EMA shadow.
template <class Model>
  requires TrainableDenoiser<Model>
inline TrainStepResult train_step(Model& model, const Tensor& batch_x0, Rng& rng,
                                  const NoiseSchedule& sched, AdamState& optim, EmaState& ema,
                                  double lr, double ema_decay = 0.995) {
  const Shape4& s = batch_x0.shape();
  TrainStepResult res;
  res.ts.resize(static_cast<size_t>(s.n));
  for (int n = 0; n < s.n; ++n)
    res.ts[static_cast<size_t>(n)] = static_cast<int>(rand_uniform_int(rng, 1, sched.T));
  Tensor eps = randn(rng, s);
  Tensor x_t = forward_diffuse(batch_x0, res.ts, eps, sched);

  Tape tape;
  Tensor eps_hat = model.forward_train(tape, x_t, res.ts);
  Tensor loss = l1_loss(&tape, eps_hat, eps);
  res.loss = loss.item();
  if (!std::isfinite(res.loss))
    throw error("train_step: non-finite loss at optimizer step " +
                std::to_string(optim.step + 1));
  if (loss.tracked()) {  // untracked when the model exposes no trainable path
    tape.backward(loss);
    auto grads = model.chained_gradients(tape);
    adam_step(model.parameters(), grads, optim, lr);
  }
  if (!ema.initialized()) ema.init_from(model.parameters());
  ema_update(ema, model.parameters(), ema_decay);
  return res;
}

}  // namespace dgdf
