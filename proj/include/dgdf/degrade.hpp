#pragma once

// Handcrafted degradation models: blur kernels, resampling, noise, JPEG and
// the four pipeline families (bicubic / classical / shuffle / high-order)
// with reproducible random parameterization.

#include <algorithm>
#include <cmath>
#include <string>
#include <variant>
#include <vector>

#include "dgdf/image.hpp"
#include "dgdf/jpeg.hpp"
#include "dgdf/rng.hpp"

namespace dgdf {

// ------------------------------------------------------------ blur kernels

struct Kernel2D {
  int size = 0;
  std::vector<float> weights;  // size*size, sums to 1

  float at(int y, int x) const { return weights[static_cast<size_t>(y) * size + x]; }
};

inline Kernel2D anisotropic_gaussian_kernel(double sigma_x, double sigma_y, double theta,
                                            int size) {
  require(size >= 1 && size % 2 == 1, "gaussian kernel size must be odd");
  require(sigma_x > 0.0 && sigma_y > 0.0, "gaussian kernel sigma must be positive");
  Kernel2D k;
  k.size = size;
  k.weights.resize(static_cast<size_t>(size) * size);
  const int r = size / 2;
  const double ct = std::cos(theta), st = std::sin(theta);
  double total = 0.0;
  for (int y = -r; y <= r; ++y)
    for (int x = -r; x <= r; ++x) {
      // rotate offsets into the kernel frame
      double u = ct * x + st * y;
      double v = -st * x + ct * y;
      double w = std::exp(-0.5 * (u * u / (sigma_x * sigma_x) + v * v / (sigma_y * sigma_y)));
      k.weights[static_cast<size_t>(y + r) * size + (x + r)] = static_cast<float>(w);
      total += w;
    }
  for (auto& w : k.weights) w = static_cast<float>(w / total);
  return k;
}

inline Kernel2D delta_kernel(int size = 1) {
  Kernel2D k;
  k.size = size;
  k.weights.assign(static_cast<size_t>(size) * size, 0.0f);
  k.weights[static_cast<size_t>(size / 2) * size + size / 2] = 1.0f;
  return k;
}

// Same-resolution convolution with mirrored (reflect-101) boundary.
inline Image convolve2d_reflect(const Image& img, const Kernel2D& kernel) {
  require(kernel.size % 2 == 1, "convolve2d_reflect: kernel must be odd");
  const int r = kernel.size / 2;
  Image out(img.w, img.h, img.c);
  auto reflect = [](int i, int n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
    return std::min(std::max(i, 0), n - 1);
  };
  for (int c = 0; c < img.c; ++c) {
    const float* src = img.plane(c);
    float* dst = out.plane(c);
    parallel_for(img.h, [&](std::int64_t y) {
      for (int x = 0; x < img.w; ++x) {
        double acc = 0.0;
        for (int ky = -r; ky <= r; ++ky) {
          int sy = reflect(static_cast<int>(y) + ky, img.h);
          for (int kx = -r; kx <= r; ++kx) {
            int sx = reflect(x + kx, img.w);
            acc += static_cast<double>(kernel.at(ky + r, kx + r)) * src[sy * img.w + sx];
          }
        }
        dst[y * img.w + x] = static_cast<float>(acc);
      }
    }, 8);
  }
  return out;
}

// ---------------------------------------------------------------- resizing

enum class Filter { bicubic, bilinear, nearest, area };

inline const char* filter_name(Filter f) {
  switch (f) {
    case Filter::bicubic: return "bicubic";
    case Filter::bilinear: return "bilinear";
    case Filter::nearest: return "nearest";
    case Filter::area: return "area";
  }
  return "?";
}

inline Filter filter_from_name(const std::string& s) {
  if (s == "bicubic") return Filter::bicubic;
  if (s == "bilinear") return Filter::bilinear;
  if (s == "nearest") return Filter::nearest;
  if (s == "area") return Filter::area;
  throw value_error("unknown resize filter: " + s);
}

namespace resize_detail {

// Keys bicubic, a = -0.5; interpolates samples exactly at integer offsets.
inline double bicubic_kernel(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}
inline double tent_kernel(double x) {
  x = std::abs(x);
  return x < 1.0 ? 1.0 - x : 0.0;
}
inline double box_kernel(double x) { return std::abs(x) <= 0.5 ? 1.0 : 0.0; }

struct AxisWeights {
  std::vector<int> start;       // first source index per output position
  std::vector<int> count;       // taps per output position
  std::vector<double> weights;  // concatenated, normalized
  std::vector<size_t> offset;
};

inline AxisWeights build_axis(int in_n, int out_n, Filter f) {
  AxisWeights aw;
  aw.start.resize(static_cast<size_t>(out_n));
  aw.count.resize(static_cast<size_t>(out_n));
  aw.offset.resize(static_cast<size_t>(out_n));
  const double scale = static_cast<double>(out_n) / in_n;
  const double kscale = std::min(1.0, scale);  // widen support when minifying
  double radius = f == Filter::bicubic ? 2.0 : (f == Filter::bilinear ? 1.0 : 0.5);
  radius /= kscale;
  auto kernel = f == Filter::bicubic ? bicubic_kernel
               : f == Filter::bilinear ? tent_kernel
                                        : box_kernel;
  for (int o = 0; o < out_n; ++o) {
    double src = (o + 0.5) / scale - 0.5;
    int lo = static_cast<int>(std::ceil(src - radius - 1e-9));
    int hi = static_cast<int>(std::floor(src + radius + 1e-9));
    lo = std::max(lo, std::min(lo, in_n - 1));
    double total = 0.0;
    std::vector<double> w;
    for (int i = lo; i <= hi; ++i) {
      double v = kernel((i - src) * kscale);
      w.push_back(v);
      total += v;
    }
    if (total <= 0.0) {  // degenerate support, fall back to nearest sample
      w.assign(1, 1.0);
      lo = std::min(in_n - 1, std::max(0, static_cast<int>(std::lround(src))));
      hi = lo;
      total = 1.0;
    }
    aw.start[static_cast<size_t>(o)] = lo;
    aw.count[static_cast<size_t>(o)] = hi - lo + 1;
    aw.offset[static_cast<size_t>(o)] = aw.weights.size();
    for (double v : w) aw.weights.push_back(v / total);
  }
  return aw;
}

inline int clamp_index(int i, int n) { return std::min(n - 1, std::max(0, i)); }

}  // namespace resize_detail

inline Image resize_to(const Image& img, int out_w, int out_h, Filter f) {
  require(out_w >= 1 && out_h >= 1, "resize: degenerate output size");
  using namespace resize_detail;
  if (f == Filter::nearest) {
    Image out(out_w, out_h, img.c);
    for (int c = 0; c < img.c; ++c)
      for (int y = 0; y < out_h; ++y) {
        int sy = clamp_index(static_cast<int>((y + 0.5) * img.h / out_h), img.h);
        for (int x = 0; x < out_w; ++x) {
          int sx = clamp_index(static_cast<int>((x + 0.5) * img.w / out_w), img.w);
          out.at(c, y, x) = img.at(c, sy, sx);
        }
      }
    return out;
  }

  AxisWeights wx = build_axis(img.w, out_w, f);
  AxisWeights wy = build_axis(img.h, out_h, f);

  // horizontal pass, then vertical
  Image mid(out_w, img.h, img.c);
  for (int c = 0; c < img.c; ++c) {
    const float* src = img.plane(c);
    float* dst = mid.plane(c);
    parallel_for(img.h, [&](std::int64_t y) {
      for (int o = 0; o < out_w; ++o) {
        double acc = 0.0;
        int lo = wx.start[static_cast<size_t>(o)];
        int cnt = wx.count[static_cast<size_t>(o)];
        const double* w = wx.weights.data() + wx.offset[static_cast<size_t>(o)];
        for (int i = 0; i < cnt; ++i)
          acc += w[i] * src[y * img.w + clamp_index(lo + i, img.w)];
        dst[y * out_w + o] = static_cast<float>(acc);
      }
    }, 16);
  }
  Image out(out_w, out_h, img.c);
  for (int c = 0; c < img.c; ++c) {
    const float* src = mid.plane(c);
    float* dst = out.plane(c);
    parallel_for(out_h, [&](std::int64_t o) {
      int lo = wy.start[static_cast<size_t>(o)];
      int cnt = wy.count[static_cast<size_t>(o)];
      const double* w = wy.weights.data() + wy.offset[static_cast<size_t>(o)];
      for (int x = 0; x < out_w; ++x) {
        double acc = 0.0;
        for (int i = 0; i < cnt; ++i)
          acc += w[i] * src[clamp_index(lo + i, img.h) * out_w + x];
        dst[o * out_w + x] = static_cast<float>(acc);
      }
    }, 16);
  }
  return out;
}

inline Image resize(const Image& img, double scale, Filter f) {
  require(scale > 0.0, "resize: scale must be positive");
  int ow = std::max(1, static_cast<int>(std::lround(img.w * scale)));
  int oh = std::max(1, static_cast<int>(std::lround(img.h * scale)));
  return resize_to(img, ow, oh, f);
}

// ------------------------------------------------------------------- noise

// Additive Gaussian noise, clamped to [0,1]. gray=true draws one field
// shared by all channels, preserving chromatic differences.
inline Image add_gaussian_noise(const Image& img, double sigma, bool gray, Rng& rng) {
  require(sigma >= 0.0, "noise sigma must be >= 0");
  if (sigma == 0.0) return img;
  Image out = img;
  const std::int64_t plane = static_cast<std::int64_t>(img.w) * img.h;
  if (gray) {
    const Rng snap = rng;
    for (int c = 0; c < img.c; ++c) {
      float* dst = out.plane(c);
      parallel_for(plane, [&](std::int64_t i) {
        float n = static_cast<float>(snap.normal_at(static_cast<std::uint64_t>(i)) * sigma);
        dst[i] = std::min(1.0f, std::max(0.0f, dst[i] + n));
      }, 8192);
    }
    rng.skip(2 * static_cast<std::uint64_t>(plane));
  } else {
    const Rng snap = rng;
    parallel_for(static_cast<std::int64_t>(img.c) * plane, [&](std::int64_t i) {
      float n = static_cast<float>(snap.normal_at(static_cast<std::uint64_t>(i)) * sigma);
      out.px[static_cast<size_t>(i)] =
          std::min(1.0f, std::max(0.0f, out.px[static_cast<size_t>(i)] + n));
    }, 8192);
    rng.skip(2 * static_cast<std::uint64_t>(img.c * plane));
  }
  return out;
}

// ---------------------------------------------------------------- pipelines

enum class DegKind { bicubic, classical, shuffle, highorder };

inline const char* kind_name(DegKind k) {
  switch (k) {
    case DegKind::bicubic: return "bicubic";
    case DegKind::classical: return "classical";
    case DegKind::shuffle: return "shuffle";
    case DegKind::highorder: return "highorder";
  }
  return "?";
}

inline DegKind kind_from_name(const std::string& s) {
  if (s == "bicubic") return DegKind::bicubic;
  if (s == "classical") return DegKind::classical;
  if (s == "shuffle") return DegKind::shuffle;
  if (s == "highorder") return DegKind::highorder;
  throw value_error("unknown degradation kind: " + s);
}

struct BlurStage {
  double sigma_x = 1.0, sigma_y = 1.0, theta = 0.0;
  int size = 7;
};
struct ResizeStage {
  double scale = 1.0;
  Filter filter = Filter::bicubic;
};
struct NoiseStage {
  double sigma = 0.0;
  bool gray = false;
};
struct JpegStage {
  int quality = 95;
};
using StageSpec = std::variant<BlurStage, ResizeStage, NoiseStage, JpegStage>;

// A realized degradation d: ordered stages with concrete parameters plus the
// seed that makes its noise stages reproducible.
struct DegradationSample {
  DegKind kind = DegKind::bicubic;
  std::vector<StageSpec> stages;
  std::uint64_t seed = 0;
  int in_size = 0;   // expected (square) input resolution
  int out_size = 0;  // final LQ resolution
};

// Parameter ranges for pipeline sampling. The held-out corpus profile in
// dataset.hpp deliberately uses ranges disjoint from these defaults.
struct DegradationRanges {
  double blur_sigma_min = 0.2, blur_sigma_max = 3.0;
  int kernel_min = 7, kernel_max = 21;  // odd sizes
  double theta_max = 3.14159265358979323846;
  double down_min = 1.0, down_max = 4.0;  // intermediate downscale factor
  double noise_min = 1.0 / 255.0, noise_max = 30.0 / 255.0;
  double gray_prob = 0.4;
  int jpeg_min = 30, jpeg_max = 95;
  double second_round_prob = 0.8;
  double second_round_atten = 0.5;
  int hq_size = 64;
  int lq_size = 32;
};

namespace pipeline_detail {

inline BlurStage draw_blur(Rng& rng, const DegradationRanges& r, double atten = 1.0) {
  BlurStage b;
  double smax = r.blur_sigma_min + (r.blur_sigma_max - r.blur_sigma_min) * atten;
  b.sigma_x = rng.next_uniform(r.blur_sigma_min, smax);
  b.sigma_y = rng.next_uniform(r.blur_sigma_min, smax);
  b.theta = rng.next_uniform(0.0, r.theta_max);
  int half_steps = (r.kernel_max - r.kernel_min) / 2;
  b.size = r.kernel_min + 2 * static_cast<int>(rng.next_int(0, half_steps));
  return b;
}

inline NoiseStage draw_noise(Rng& rng, const DegradationRanges& r, double atten = 1.0) {
  NoiseStage n;
  double nmax = r.noise_min + (r.noise_max - r.noise_min) * atten;
  n.sigma = rng.next_uniform(r.noise_min, nmax);
  n.gray = rng.next_double() < r.gray_prob;
  return n;
}

inline JpegStage draw_jpeg(Rng& rng, const DegradationRanges& r) {
  return JpegStage{static_cast<int>(rng.next_int(r.jpeg_min, r.jpeg_max))};
}

inline Filter draw_down_filter(Rng& rng) {
  switch (rng.next_int(0, 2)) {
    case 0: return Filter::bicubic;
    case 1: return Filter::bilinear;
    default: return Filter::area;
  }
}

inline int apply_scale(int cur, double scale) {
  return std::max(1, static_cast<int>(std::lround(cur * scale)));
}

// scale that lands a square image of side cur exactly on target
inline double scale_to(int cur, int target) {
  return static_cast<double>(target) / static_cast<double>(cur);
}

}  // namespace pipeline_detail

inline DegradationSample sample_pipeline(DegKind kind, Rng& rng, const DegradationRanges& r) {
  using namespace pipeline_detail;
  require(r.hq_size >= 1 && r.lq_size >= 1 && r.lq_size <= r.hq_size,
          "degradation ranges: bad hq/lq sizes");
  require(r.kernel_min % 2 == 1 && r.kernel_max % 2 == 1 && r.kernel_min <= r.kernel_max,
          "degradation ranges: kernel sizes must be odd and ordered");
  require(r.blur_sigma_min > 0 && r.blur_sigma_min <= r.blur_sigma_max,
          "degradation ranges: bad blur sigmas");
  require(r.jpeg_min >= 1 && r.jpeg_max <= 100 && r.jpeg_min <= r.jpeg_max,
          "degradation ranges: bad jpeg qualities");
  require(r.down_min >= 1.0 && r.down_min <= r.down_max, "degradation ranges: bad downscale");

  DegradationSample s;
  s.kind = kind;
  s.in_size = r.hq_size;
  s.out_size = r.lq_size;
  s.seed = rng.next_u64();
  int cur = r.hq_size;

  switch (kind) {
    case DegKind::bicubic: {
      s.stages.push_back(ResizeStage{scale_to(cur, r.lq_size), Filter::bicubic});
      cur = r.lq_size;
      break;
    }
    case DegKind::classical: {
      s.stages.push_back(draw_blur(rng, r));
      s.stages.push_back(ResizeStage{scale_to(cur, r.lq_size), draw_down_filter(rng)});
      cur = r.lq_size;
      s.stages.push_back(draw_noise(rng, r));
      s.stages.push_back(draw_jpeg(rng, r));
      break;
    }
    case DegKind::shuffle: {
      std::vector<StageSpec> core;
      core.push_back(draw_blur(rng, r));
      core.push_back(ResizeStage{scale_to(cur, r.lq_size), draw_down_filter(rng)});
      core.push_back(draw_noise(rng, r));
      // Fisher-Yates over the three core stages
      for (int i = 2; i > 0; --i) {
        int j = static_cast<int>(rng.next_int(0, i));
        std::swap(core[static_cast<size_t>(i)], core[static_cast<size_t>(j)]);
      }
      for (auto& st : core) s.stages.push_back(st);
      cur = r.lq_size;
      s.stages.push_back(draw_jpeg(rng, r));
      break;
    }
    case DegKind::highorder: {
      auto round = [&](double atten) {
        s.stages.push_back(draw_blur(rng, r, atten));
        double f = rng.next_uniform(r.down_min, r.down_max);
        int next = std::max(r.lq_size / 2 < 8 ? 8 : r.lq_size / 2,
                            apply_scale(cur, 1.0 / f));
        next = std::min(next, cur);
        s.stages.push_back(ResizeStage{scale_to(cur, next), draw_down_filter(rng)});
        cur = next;
        s.stages.push_back(draw_noise(rng, r, atten));
        s.stages.push_back(draw_jpeg(rng, r));
      };
      round(1.0);
      if (rng.next_double() < r.second_round_prob) round(r.second_round_atten);
      s.stages.push_back(ResizeStage{scale_to(cur, r.lq_size), Filter::bicubic});
      cur = r.lq_size;
      s.stages.push_back(draw_jpeg(rng, r));
      break;
    }
  }
  require(cur == r.lq_size, "sample_pipeline: internal size tracking error");
  return s;
}

// Applies the recorded stages in order; fully determined by sample.seed.
inline Image apply(const Image& input, const DegradationSample& sample) {
  if (sample.in_size > 0)
    require_shape(input.w == sample.in_size && input.h == sample.in_size,
                  "apply: input is " + std::to_string(input.w) + "x" + std::to_string(input.h) +
                      ", sample expects " + std::to_string(sample.in_size) + " square");
  Image cur = input;
  int stage_index = 0;
  for (const auto& st : sample.stages) {
    Rng stage_rng(sample.seed, static_cast<std::uint64_t>(stage_index));
    if (const auto* b = std::get_if<BlurStage>(&st)) {
      cur = convolve2d_reflect(
          cur, anisotropic_gaussian_kernel(b->sigma_x, b->sigma_y, b->theta, b->size));
    } else if (const auto* rz = std::get_if<ResizeStage>(&st)) {
      cur = resize(cur, rz->scale, rz->filter);
    } else if (const auto* nz = std::get_if<NoiseStage>(&st)) {
      cur = add_gaussian_noise(cur, nz->sigma, nz->gray, stage_rng);
    } else if (const auto* jp = std::get_if<JpegStage>(&st)) {
      cur = jpeg_roundtrip(cur, jp->quality);
    }
    ++stage_index;
  }
  cur.clamp01();
  if (sample.out_size > 0)
    require_shape(cur.w == sample.out_size && cur.h == sample.out_size,
                  "apply: output resolution does not match the configured LQ target");
  return cur;
}

}  // namespace dgdf
