#pragma once

// Denoiser training loop over an LQ corpus: random image, random patch crop,
// one optimizer step per iteration, EMA tracked throughout.

#include <functional>
#include <string>
#include <vector>

#include "dgdf/dataset.hpp"
#include "dgdf/diffusion.hpp"
#include "dgdf/unet.hpp"

namespace dgdf {

struct TrainOptions {
  int iters = 10000;
  int batch = 16;
  double lr = 8e-5;
  double ema_decay = 0.995;
  int patch = 32;
  int t_total = 1000;
  double beta_start = 1e-4, beta_end = 0.02;
  UNetConfig net;
  std::uint64_t seed = 0;
  int log_every = 100;
};

struct TrainResult {
  UNet model;
  NoiseSchedule sched;
  std::vector<std::pair<int, double>> loss_log;  // (iter, smoothed loss)
};

inline TrainResult train_denoiser(const std::vector<Image>& corpus, const TrainOptions& opt,
                                  const std::function<void(int, double)>& progress = nullptr) {
  require(!corpus.empty(), "train_denoiser: empty corpus");
  require(opt.batch >= 1 && opt.iters >= 0, "train_denoiser: bad batch/iters");
  for (const auto& img : corpus)
    require_shape(img.w >= opt.patch && img.h >= opt.patch,
                  "train_denoiser: corpus image smaller than patch size");

  TrainResult res;
  res.sched = linear_schedule(opt.t_total, opt.beta_start, opt.beta_end);
  Rng init_rng(opt.seed, 0xA11CE);
  res.model = UNet::init(opt.net, init_rng);

  AdamState optim;
  optim.lr = opt.lr;
  EmaState& ema = res.model.ema_state();
  Rng data_rng(opt.seed, 0xDA7A);
  Rng step_rng(opt.seed, 0x57E9);

  double smooth = 0.0;
  bool smooth_init = false;
  for (int iter = 1; iter <= opt.iters; ++iter) {
    std::vector<Image> batch_imgs;
    batch_imgs.reserve(static_cast<size_t>(opt.batch));
    for (int b = 0; b < opt.batch; ++b) {
      const Image& src =
          corpus[static_cast<size_t>(rand_uniform_int(data_rng, 0, static_cast<int>(corpus.size()) - 1))];
      batch_imgs.push_back(random_crop(src, opt.patch, data_rng));
    }
    Tensor batch = images_to_model(batch_imgs);
    auto step = train_step(res.model, batch, step_rng, res.sched, optim, ema, opt.lr,
                           opt.ema_decay);
    smooth = smooth_init ? 0.98 * smooth + 0.02 * step.loss : step.loss;
    smooth_init = true;
    if (iter % opt.log_every == 0 || iter == opt.iters) {
      res.loss_log.emplace_back(iter, smooth);
      if (progress) progress(iter, smooth);
    }
  }
  return res;
}

}  // namespace dgdf
