#pragma once

// The learnable noise predictor: a small time-conditioned UNet. Downsampling
// by stride-2 convolution, upsampling by nearest-2x + conv, skip connections
// by channel concatenation, GroupNorm + SiLU throughout, no attention.

#include <map>
#include <span>
#include <string>
#include <vector>

#include "dgdf/diffusion.hpp"
#include "dgdf/nn_ops.hpp"
#include "dgdf/optim.hpp"

namespace dgdf {

struct UNetConfig {
  int in_channels = 3;
  int base_channels = 32;
  std::vector<int> channel_mults = {1, 2, 4};
  int res_blocks_per_level = 2;
  int time_embed_dim = 128;
  int norm_groups = 8;

  int levels() const { return static_cast<int>(channel_mults.size()); }
  int channels_at(int level) const {
    return base_channels * channel_mults[static_cast<size_t>(level)];
  }
  int spatial_divisor() const { return 1 << (levels() - 1); }

  void validate() const {
    require(in_channels >= 1 && base_channels >= 1, "unet: bad channel config");
    require(!channel_mults.empty(), "unet: channel_mults must be non-empty");
    require(res_blocks_per_level >= 1, "unet: need at least one res block per level");
    require(time_embed_dim >= 2 && time_embed_dim % 2 == 0, "unet: time_embed_dim must be even");
    for (int i = 0; i < levels(); ++i)
      require_shape(channels_at(i) % norm_groups == 0,
                    "unet: norm_groups " + std::to_string(norm_groups) +
                        " must divide channel count " + std::to_string(channels_at(i)));
  }
};

class UNet {
 public:
  UNet() = default;

  static UNet init(const UNetConfig& cfg, Rng& rng) {
    cfg.validate();
    UNet m;
    m.cfg_ = cfg;
    const int td = cfg.time_embed_dim;
    m.add_linear(rng, "time.mlp1", td, td);
    m.add_linear(rng, "time.mlp2", td, td);

    int ch = cfg.channels_at(0);
    m.add_conv(rng, "stem", cfg.in_channels, ch, 3);
    for (int level = 0; level < cfg.levels(); ++level) {
      int out_ch = cfg.channels_at(level);
      for (int b = 0; b < cfg.res_blocks_per_level; ++b) {
        m.add_resblock(rng, block_name("down", level, b), ch, out_ch, td);
        ch = out_ch;
      }
      if (level + 1 < cfg.levels()) m.add_conv(rng, down_name(level), ch, ch, 3);
    }
    m.add_resblock(rng, "mid.b0", ch, ch, td);
    for (int level = cfg.levels() - 1; level >= 0; --level) {
      int out_ch = cfg.channels_at(level);
      int in_ch = ch + out_ch;  // concatenated skip
      for (int b = 0; b < cfg.res_blocks_per_level; ++b) {
        m.add_resblock(rng, block_name("up", level, b), in_ch, out_ch, td);
        in_ch = out_ch;
      }
      ch = out_ch;
      if (level > 0) {
        m.add_conv(rng, up_name(level), ch, cfg.channels_at(level - 1), 3);
        ch = cfg.channels_at(level - 1);
      }
    }
    m.add_affine("head.norm", ch);
    m.add_conv(rng, "head.conv", ch, cfg.in_channels, 3, /*zero_init=*/true);
    m.ema_.init_from(m.params_);
    return m;
  }

  const UNetConfig& config() const { return cfg_; }
  std::vector<Tensor>& parameters() { return params_; }
  const std::vector<Tensor>& parameters() const { return params_; }
  const std::vector<std::string>& parameter_names() const { return names_; }
  EmaState& ema_state() { return ema_; }
  const EmaState& ema_state() const { return ema_; }

  std::int64_t parameter_count() const {
    std::int64_t n = 0;
    for (const auto& p : params_) n += p.numel();
    return n;
  }

  // Frozen copy carrying the EMA shadow as live weights; for sampling.
  UNet ema_copy() const {
    UNet m;
    m.cfg_ = cfg_;
    m.names_ = names_;
    m.index_ = index_;
    m.params_.reserve(params_.size());
    for (size_t i = 0; i < params_.size(); ++i)
      m.params_.push_back(ema_.shadow.empty() ? params_[i]
                                              : ema_.snapshot(i, params_[i].shape()));
    m.ema_.init_from(m.params_);
    return m;
  }

  // Inference forward (no tape).
  Tensor forward(const Tensor& x, std::span<const int> ts) const {
    return const_cast<UNet*>(this)->run(nullptr, x, ts, false);
  }

  // Deepest feature map (after the mid block), for feature-space metrics.
  Tensor bottleneck(const Tensor& x, std::span<const int> ts) const {
    return const_cast<UNet*>(this)->run(nullptr, x, ts, true);
  }

  // Training forward: binds parameters to the tape and records their nodes.
  Tensor forward_train(Tape& tape, const Tensor& x, std::span<const int> ts) {
    return run(&tape, x, ts, false);
  }

  std::vector<const std::vector<float>*> chained_gradients(Tape& tape) {
    require(bound_nodes_.size() == params_.size(), "chained_gradients: no bound forward");
    std::vector<const std::vector<float>*> out;
    out.reserve(params_.size());
    for (int node : bound_nodes_) out.push_back(&tape.grad(node));
    return out;
  }

  NoisePredictor predictor(bool use_ema = true) const {
    auto model = std::make_shared<UNet>(use_ema ? ema_copy() : *this);
    return [model](const Tensor& x, std::span<const int> ts) {
      return model->forward(x, ts);
    };
  }

  // checkpoint support
  const Tensor& param(const std::string& name) const {
    auto it = index_.find(name);
    require(it != index_.end(), "unknown parameter: " + name);
    return params_[static_cast<size_t>(it->second)];
  }
  void set_param(const std::string& name, Tensor value) {
    auto it = index_.find(name);
    require(it != index_.end(), "unknown parameter: " + name);
    require_shape(value.shape() == params_[static_cast<size_t>(it->second)].shape(),
                  "parameter shape mismatch for " + name);
    params_[static_cast<size_t>(it->second)] = std::move(value);
  }
  void set_ema_from_tensors(const std::vector<Tensor>& ema_tensors) {
    require(ema_tensors.size() == params_.size(), "ema tensor count mismatch");
    ema_.init_from(ema_tensors);
  }

 private:
  static std::string block_name(const char* path, int level, int block) {
    return std::string(path) + std::to_string(level) + ".b" + std::to_string(block);
  }
  static std::string down_name(int level) { return "down" + std::to_string(level) + ".ds"; }
  static std::string up_name(int level) { return "up" + std::to_string(level) + ".us"; }

  int add_param(const std::string& name, Tensor t) {
    require(index_.find(name) == index_.end(), "duplicate parameter name: " + name);
    index_[name] = static_cast<int>(params_.size());
    names_.push_back(name);
    params_.push_back(std::move(t));
    return static_cast<int>(params_.size()) - 1;
  }

  static Tensor kaiming_uniform(Rng& rng, Shape4 s, int fan_in) {
    float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
    return rand_uniform(rng, s, -bound, bound);
  }

  void add_conv(Rng& rng, const std::string& name, int cin, int cout, int k,
                bool zero_init = false) {
    Shape4 ws{cout, cin, k, k};
    add_param(name + ".w", zero_init ? Tensor::zeros(ws)
                                     : kaiming_uniform(rng, ws, cin * k * k));
    add_param(name + ".b", Tensor::zeros(Shape4{1, cout, 1, 1}));
  }

  void add_linear(Rng& rng, const std::string& name, int fin, int fout) {
    add_param(name + ".w", kaiming_uniform(rng, Shape4{fout, fin, 1, 1}, fin));
    add_param(name + ".b", Tensor::zeros(Shape4{1, fout, 1, 1}));
  }

  void add_affine(const std::string& name, int ch) {
    add_param(name + ".g", Tensor::full(Shape4{1, ch, 1, 1}, 1.0f));
    add_param(name + ".beta", Tensor::zeros(Shape4{1, ch, 1, 1}));
  }

  void add_resblock(Rng& rng, const std::string& name, int cin, int cout, int td) {
    add_affine(name + ".norm1", cin);
    add_conv(rng, name + ".conv1", cin, cout, 3);
    add_linear(rng, name + ".temb", td, cout);
    add_affine(name + ".norm2", cout);
    add_conv(rng, name + ".conv2", cout, cout, 3);
    if (cin != cout) add_conv(rng, name + ".skip", cin, cout, 1);
  }

  // parameter lookup during a forward pass (bound to tape when training)
  struct Ctx {
    UNet* m;
    Tape* tape;
    const Tensor& get(const std::string& name) {
      auto it = m->index_.find(name);
      require(it != m->index_.end(), "unknown parameter: " + name);
      size_t i = static_cast<size_t>(it->second);
      return m->bound_.empty() ? m->params_[i] : m->bound_[i];
    }
  };

  Tensor run(Tape* tape, const Tensor& x, std::span<const int> ts, bool stop_at_bottleneck) {
    cfg_.validate();
    const Shape4& s = x.shape();
    require_shape(s.c == cfg_.in_channels, "unet: input channels " + std::to_string(s.c));
    require_shape(s.h % cfg_.spatial_divisor() == 0 && s.w % cfg_.spatial_divisor() == 0,
                  "unet: spatial dims " + s.str() + " not divisible by " +
                      std::to_string(cfg_.spatial_divisor()));
    require_shape(static_cast<int>(ts.size()) == s.n, "unet: one t per sample");

    bound_.clear();
    bound_nodes_.clear();
    if (tape) {
      bound_.reserve(params_.size());
      bound_nodes_.reserve(params_.size());
      for (const auto& p : params_) {
        Tensor b = tape->leaf(p);
        bound_nodes_.push_back(b.node());
        bound_.push_back(std::move(b));
      }
    }
    Ctx ctx{this, tape};
    auto P = [&](const std::string& n) -> const Tensor& { return ctx.get(n); };
    auto GN = [&](const Tensor& h, const std::string& n) {
      return group_norm(tape, h, cfg_.norm_groups, P(n + ".g"), P(n + ".beta"));
    };

    // time conditioning
    Tensor temb = make_time_embedding(ts, cfg_.time_embed_dim);
    temb = linear(tape, temb, P("time.mlp1.w"), P("time.mlp1.b"));
    temb = silu(tape, temb);
    temb = linear(tape, temb, P("time.mlp2.w"), P("time.mlp2.b"));
    Tensor temb_act = silu(tape, temb);

    auto res_block = [&](Tensor h, const std::string& name, int cin, int cout) {
      Tensor r = group_norm(tape, h, cfg_.norm_groups, P(name + ".norm1.g"),
                            P(name + ".norm1.beta"));
      r = silu(tape, r);
      r = conv2d(tape, r, P(name + ".conv1.w"), P(name + ".conv1.b"), 1, Pad::reflect);
      Tensor tb = linear(tape, temb_act, P(name + ".temb.w"), P(name + ".temb.b"));
      r = add_per_channel(tape, r, tb);
      r = group_norm(tape, r, cfg_.norm_groups, P(name + ".norm2.g"), P(name + ".norm2.beta"));
      r = silu(tape, r);
      r = conv2d(tape, r, P(name + ".conv2.w"), P(name + ".conv2.b"), 1, Pad::reflect);
      Tensor sk = cin == cout
                      ? h
                      : conv2d(tape, h, P(name + ".skip.w"), P(name + ".skip.b"), 1, Pad::zero);
      return add(tape, r, sk);
    };

    Tensor h = conv2d(tape, x, P("stem.w"), P("stem.b"), 1, Pad::reflect);
    int ch = cfg_.channels_at(0);
    std::vector<Tensor> skips;
    for (int level = 0; level < cfg_.levels(); ++level) {
      int out_ch = cfg_.channels_at(level);
      for (int b = 0; b < cfg_.res_blocks_per_level; ++b) {
        h = res_block(h, block_name("down", level, b), ch, out_ch);
        ch = out_ch;
      }
      skips.push_back(h);
      if (level + 1 < cfg_.levels())
        h = conv2d(tape, h, P(down_name(level) + ".w"), P(down_name(level) + ".b"), 2,
                   Pad::reflect);
    }
    h = res_block(h, "mid.b0", ch, ch);
    if (stop_at_bottleneck) return h;
    for (int level = cfg_.levels() - 1; level >= 0; --level) {
      int out_ch = cfg_.channels_at(level);
      h = concat_channels(tape, h, skips[static_cast<size_t>(level)]);
      int in_ch = ch + out_ch;
      for (int b = 0; b < cfg_.res_blocks_per_level; ++b) {
        h = res_block(h, block_name("up", level, b), in_ch, out_ch);
        in_ch = out_ch;
      }
      ch = out_ch;
      if (level > 0) {
        h = upsample_nearest2x(tape, h);
        h = conv2d(tape, h, P(up_name(level) + ".w"), P(up_name(level) + ".b"), 1,
                   Pad::reflect);
        ch = cfg_.channels_at(level - 1);
      }
    }
    h = GN(h, "head.norm");
    h = silu(tape, h);
    h = conv2d(tape, h, P("head.conv.w"), P("head.conv.b"), 1, Pad::reflect);
    return h;
  }

  UNetConfig cfg_;
  std::vector<Tensor> params_;
  std::vector<std::string> names_;
  std::map<std::string, int> index_;
  std::vector<Tensor> bound_;
  std::vector<int> bound_nodes_;
  EmaState ema_;
};

}  // namespace dgdf
