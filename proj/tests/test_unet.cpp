#include <doctest.h>

#include <cmath>

#include "dgdf/unet.hpp"
#include "ref_unet.hpp"
#include "test_util.hpp"

using namespace dgdf;

namespace {

UNetConfig mini_config() {
  UNetConfig cfg;
  cfg.in_channels = 4;
  cfg.base_channels = 8;
  cfg.channel_mults = {1, 2};
  cfg.res_blocks_per_level = 1;
  cfg.time_embed_dim = 16;
  cfg.norm_groups = 4;
  return cfg;
}

// layer-by-layer parameter arithmetic, independent of the registry
std::int64_t count_params_oracle(const UNetConfig& c) {
  auto conv = [](int cin, int cout, int k) { return static_cast<std::int64_t>(cout) * cin * k * k + cout; };
  auto lin = [](int fin, int fout) { return static_cast<std::int64_t>(fout) * fin + fout; };
  auto affine = [](int ch) { return static_cast<std::int64_t>(2) * ch; };
  auto resblock = [&](int cin, int cout, int td) {
    std::int64_t n = affine(cin) + conv(cin, cout, 3) + lin(td, cout) + affine(cout) +
                     conv(cout, cout, 3);
    if (cin != cout) n += conv(cin, cout, 1);
    return n;
  };
  const int td = c.time_embed_dim;
  std::int64_t n = lin(td, td) * 2;
  int ch = c.channels_at(0);
  n += conv(c.in_channels, ch, 3);
  for (int level = 0; level < c.levels(); ++level) {
    int out = c.channels_at(level);
    for (int b = 0; b < c.res_blocks_per_level; ++b) {
      n += resblock(ch, out, td);
      ch = out;
    }
    if (level + 1 < c.levels()) n += conv(ch, ch, 3);
  }
  n += resblock(ch, ch, td);
  for (int level = c.levels() - 1; level >= 0; --level) {
    int out = c.channels_at(level);
    int in = ch + out;
    for (int b = 0; b < c.res_blocks_per_level; ++b) {
      n += resblock(in, out, td);
      in = out;
    }
    ch = out;
    if (level > 0) {
      n += conv(ch, c.channels_at(level - 1), 3);
      ch = c.channels_at(level - 1);
    }
  }
  n += affine(ch) + conv(ch, c.in_channels, 3);
  return n;
}

}  // namespace

TEST_SUITE("unet") {

TEST_CASE("fresh model predicts exactly zero") {
  Rng rng(201, 0);
  UNet model = UNet::init(mini_config(), rng);
  Rng xr(203, 0);
  Tensor x = rand_uniform(xr, Shape4{2, 4, 8, 8}, -1.0f, 1.0f);
  std::vector<int> ts{3, 500};
  Tensor out = model.forward(x, ts);
  for (float v : out.vec()) CHECK(v == 0.0f);
}

TEST_CASE("parameter count matches the counting formula") {
  UNetConfig cfg;
  cfg.in_channels = 3;
  cfg.base_channels = 8;
  cfg.channel_mults = {1, 2};
  cfg.res_blocks_per_level = 1;
  cfg.time_embed_dim = 32;
  cfg.norm_groups = 8;
  Rng rng(205, 0);
  UNet model = UNet::init(cfg, rng);
  CHECK(model.parameter_count() == count_params_oracle(cfg));

  UNetConfig big;  // defaults
  Rng rng2(207, 0);
  UNet model2 = UNet::init(big, rng2);
  CHECK(model2.parameter_count() == count_params_oracle(big));
}

TEST_CASE("same seed gives identical parameters") {
  Rng a(209, 0), b(209, 0);
  UNet m1 = UNet::init(mini_config(), a);
  UNet m2 = UNet::init(mini_config(), b);
  REQUIRE(m1.parameters().size() == m2.parameters().size());
  for (size_t i = 0; i < m1.parameters().size(); ++i)
    CHECK(m1.parameters()[i].vec() == m2.parameters()[i].vec());
}

TEST_CASE("forward preserves shape and is deterministic") {
  UNetConfig cfg = mini_config();
  cfg.in_channels = 3;
  Rng rng(211, 0);
  UNet model = UNet::init(cfg, rng);
  Rng xr(213, 0);
  Tensor x = rand_uniform(xr, Shape4{2, 3, 32, 32}, -1.0f, 1.0f);
  std::vector<int> ts{17, 801};
  Tensor out1 = model.forward(x, ts);
  CHECK(out1.shape() == x.shape());
  Tensor out2 = model.forward(x, ts);
  CHECK(out1.vec() == out2.vec());
}

TEST_CASE("config and input validation") {
  Rng rng(215, 0);
  UNetConfig bad = mini_config();
  bad.norm_groups = 3;
  CHECK_THROWS_AS(UNet::init(bad, rng), shape_error);

  UNet model = UNet::init(mini_config(), rng);
  Tensor odd = Tensor::zeros(Shape4{1, 4, 7, 7});  // not divisible by 2^(levels-1)
  std::vector<int> ts{1};
  CHECK_THROWS_AS(model.forward(odd, ts), shape_error);
  Tensor wrong_c = Tensor::zeros(Shape4{1, 3, 8, 8});
  CHECK_THROWS_AS(model.forward(wrong_c, ts), shape_error);
  Tensor ok = Tensor::zeros(Shape4{2, 4, 8, 8});
  std::vector<int> short_ts{1};
  CHECK_THROWS_AS(model.forward(ok, short_ts), shape_error);
}

TEST_CASE("miniature unet passes the finite-difference gradient check") {
  UNetConfig cfg = mini_config();
  Rng rng(217, 0);
  UNet model = UNet::init(cfg, rng);
  // knock the zero head off its init so every path carries gradient
  for (auto& p : model.parameters())
    if (p.numel() > 0) {
      float* d = p.mutable_data();
      Rng pr(219, static_cast<std::uint64_t>(p.numel()));
      for (std::int64_t i = 0; i < p.numel(); ++i)
        d[i] += 0.05f * static_cast<float>(pr.normal_at(static_cast<std::uint64_t>(i)));
    }

  Rng xr(221, 0);
  Tensor x = rand_uniform(xr, Shape4{1, 4, 8, 8}, -1.0f, 1.0f);
  Tensor head_w = rand_uniform(xr, Shape4{1, 4, 8, 8}, -1.0f, 1.0f);
  std::vector<int> ts{137};

  // analytic gradients through the tape
  Tape tape;
  Tensor xt = tape.leaf(x);
  Tensor out = model.forward_train(tape, xt, ts);
  Tensor loss = weighted_sum(&tape, out, head_w);
  tape.backward(loss);
  auto grads = model.chained_gradients(tape);
  const auto& x_grad = tape.grad(xt);

  // f64 reference path
  refunet::ParamMap P = refunet::params_of(model);
  refops::RT rx = refops::RT::of(x);
  refops::RT rw = refops::RT::of(head_w);
  auto ref_loss = [&](const refunet::ParamMap& pm, const refops::RT& xin) {
    return refops::weighted_sum(refunet::forward(cfg, pm, xin, ts), rw);
  };

  double f_impl = loss.item();
  double f_ref = ref_loss(P, rx);
  CHECK(std::abs(f_impl - f_ref) <= 1e-4 * std::max(1.0, std::abs(f_ref)));

  const double h = 1e-3, rel_tol = 1e-3, abs_floor = 1e-5;
  auto check_fd = [&](double analytic, double fd) {
    double err = std::abs(analytic - fd);
    double tol = abs_floor + rel_tol * std::max(std::abs(analytic), std::abs(fd));
    CHECK_MESSAGE(err <= tol, "analytic ", analytic, " vs fd ", fd);
  };

  // sampled elements of every parameter tensor
  const auto& names = model.parameter_names();
  for (size_t pi = 0; pi < names.size(); ++pi) {
    refops::RT& rp = P[names[pi]];
    const std::int64_t n = static_cast<std::int64_t>(rp.v.size());
    const std::int64_t step = n > 4 ? n / 4 : 1;
    for (std::int64_t j = 0; j < n; j += step) {
      double saved = rp.v[static_cast<size_t>(j)];
      rp.v[static_cast<size_t>(j)] = saved + h;
      double fp = ref_loss(P, rx);
      rp.v[static_cast<size_t>(j)] = saved - h;
      double fm = ref_loss(P, rx);
      rp.v[static_cast<size_t>(j)] = saved;
      check_fd((*grads[pi])[static_cast<size_t>(j)], (fp - fm) / (2.0 * h));
    }
  }
  // sampled input elements
  for (std::int64_t j = 0; j < x.numel(); j += x.numel() / 8) {
    double saved = rx.v[static_cast<size_t>(j)];
    rx.v[static_cast<size_t>(j)] = saved + h;
    double fp = ref_loss(P, rx);
    rx.v[static_cast<size_t>(j)] = saved - h;
    double fm = ref_loss(P, rx);
    rx.v[static_cast<size_t>(j)] = saved;
    check_fd(x_grad[static_cast<size_t>(j)], (fp - fm) / (2.0 * h));
  }
}

TEST_CASE("ema copy semantics") {
  Rng rng(223, 0);
  UNet model = UNet::init(mini_config(), rng);

  SUBCASE("before any update the EMA equals the live weights") {
    UNet ema = model.ema_copy();
    for (size_t i = 0; i < model.parameters().size(); ++i)
      for (std::int64_t j = 0; j < model.parameters()[i].numel(); ++j)
        CHECK(ema.parameters()[i].data()[j] ==
              doctest::Approx(model.parameters()[i].data()[j]));
  }
  SUBCASE("frozen live weights are a fixed point") {
    for (int k = 0; k < 50; ++k) ema_update(model.ema_state(), model.parameters(), 0.995);
    UNet ema = model.ema_copy();
    for (size_t i = 0; i < model.parameters().size(); ++i)
      for (std::int64_t j = 0; j < model.parameters()[i].numel(); ++j)
        CHECK(ema.parameters()[i].data()[j] ==
              doctest::Approx(model.parameters()[i].data()[j]).epsilon(1e-6));
  }
  SUBCASE("moving weights lag by the geometric recursion") {
    // scalar oracle: m_k = d m_{k-1} + (1-d) w_k alongside the real update
    const double d = 0.995;
    double w = model.parameters()[2].data()[0];
    double oracle = w;
    for (int k = 1; k <= 100; ++k) {
      float* pw = model.parameters()[2].mutable_data();
      pw[0] = static_cast<float>(w + 0.01 * k);
      ema_update(model.ema_state(), model.parameters(), d);
      oracle = d * oracle + (1.0 - d) * (w + 0.01 * k);
    }
    CHECK(model.ema_state().shadow[2][0] == doctest::Approx(oracle).epsilon(1e-9));
  }
}

TEST_CASE("training moves the model and conditions on t") {
  UNetConfig cfg = mini_config();
  cfg.in_channels = 3;
  cfg.time_embed_dim = 32;
  Rng rng(227, 0);
  UNet model = UNet::init(cfg, rng);
  NoiseSchedule sched = linear_schedule(1000);

  std::vector<Image> imgs;
  Rng ir(229, 0);
  for (int i = 0; i < 16; ++i) imgs.push_back(testutil::make_image(ir, 16, 16));
  Tensor batch = images_to_model(imgs);

  AdamState opt;
  EmaState& ema = model.ema_state();
  Rng tr(231, 0);

  SUBCASE("first-step gradients reach the head; later steps reach everything") {
    std::vector<int> ts(16, 10);
    for (int n = 0; n < 16; ++n) ts[static_cast<size_t>(n)] = 10 + 60 * n;
    Tensor eps = randn(tr, batch.shape());
    Tensor x_t = forward_diffuse(batch, ts, eps, sched);

    Tape tape;
    Tensor out = model.forward_train(tape, x_t, ts);
    tape.backward(l1_loss(&tape, out, eps));
    auto grads = model.chained_gradients(tape);
    const auto& names = model.parameter_names();
    // zero-initialized head blocks upstream flow on the very first step
    for (size_t i = 0; i < names.size(); ++i) {
      double mx = 0.0;
      for (float g : *grads[i]) mx = std::max(mx, std::abs(static_cast<double>(g)));
      if (names[i] == "head.conv.w" || names[i] == "head.conv.b")
        CHECK(mx > 0.0);
    }

    // two optimizer steps later every branch is live
    for (int k = 0; k < 2; ++k) train_step(model, batch, tr, sched, opt, ema, 1e-3);
    Tape tape2;
    Tensor out2 = model.forward_train(tape2, x_t, ts);
    tape2.backward(l1_loss(&tape2, out2, eps));
    auto grads2 = model.chained_gradients(tape2);
    for (size_t i = 0; i < names.size(); ++i) {
      double mx = 0.0;
      for (float g : *grads2[i]) mx = std::max(mx, std::abs(static_cast<double>(g)));
      CHECK_MESSAGE(mx > 0.0, "dead branch at ", names[i]);
    }
  }

  SUBCASE("200 steps on a 16-image toy set strictly decrease smoothed loss") {
    std::vector<double> losses;
    for (int i = 0; i < 200; ++i)
      losses.push_back(train_step(model, batch, tr, sched, opt, ema, 2e-3).loss);
    double head = 0.0, tail = 0.0;
    for (int i = 0; i < 50; ++i) {
      head += losses[static_cast<size_t>(i)];
      tail += losses[losses.size() - 50 + static_cast<size_t>(i)];
    }
    CHECK(tail / 50.0 < head / 50.0);
  }

  SUBCASE("a lightly trained model is time sensitive") {
    for (int i = 0; i < 5; ++i) train_step(model, batch, tr, sched, opt, ema, 1e-3);
    Rng xr(233, 0);
    Tensor x = rand_uniform(xr, Shape4{1, 3, 16, 16}, -1.0f, 1.0f);
    std::vector<int> t1{50}, t2{800};
    Tensor o1 = model.forward(x, t1);
    Tensor o2 = model.forward(x, t2);
    float mx = 0.0f;
    for (std::int64_t i = 0; i < o1.numel(); ++i)
      mx = std::max(mx, std::abs(o1.data()[i] - o2.data()[i]));
    CHECK(mx > 0.0f);
  }
}

}  // TEST_SUITE
