#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <span>
#include <vector>

#include "dgdf/tensor.hpp"

namespace dgdf {

// ------------------------------------------------------------------- GEMM
// Plain f32 kernels, parallel over output rows. Each output element is
// accumulated sequentially over k, so results are independent of the thread
// count.

namespace detail {

// C[M,N] += A[M,K] * B[K,N]
inline void gemm_acc(const float* A, const float* B, float* C, int M, int K, int N) {
  parallel_for(M, [&](std::int64_t i) {
    float* crow = C + i * N;
    const float* arow = A + i * K;
    for (int k = 0; k < K; ++k) {
      float a = arow[k];
      const float* brow = B + static_cast<std::int64_t>(k) * N;
      for (int j = 0; j < N; ++j) crow[j] += a * brow[j];
    }
  }, std::max<std::int64_t>(1, 65536 / std::max(1, K * N / std::max(1, M))));
}

// Dot product with eight independent accumulator lanes so the reduction
// vectorizes; the lane combination order is fixed, keeping results
// deterministic.
inline float dot8(const float* a, const float* b, int n) {
  float acc[16] = {0};
  int k = 0;
  for (; k + 16 <= n; k += 16)
    for (int l = 0; l < 16; ++l) acc[l] += a[k + l] * b[k + l];
  float tail = 0.0f;
  for (; k < n; ++k) tail += a[k] * b[k];
  for (int step = 8; step >= 1; step /= 2)
    for (int l = 0; l < step; ++l) acc[l] += acc[l + step];
  return acc[0] + tail;
}

// C[M,N] += A[M,K] * B[N,K]^T. Parallel over j so each B row is streamed
// once while the A rows stay cache-resident.
inline void gemm_abT_acc(const float* A, const float* B, float* C, int M, int K, int N) {
  parallel_for(N, [&](std::int64_t j) {
    const float* brow = B + j * K;
    for (int i = 0; i < M; ++i) {
      const float* arow = A + static_cast<std::int64_t>(i) * K;
      C[static_cast<std::int64_t>(i) * N + j] += dot8(arow, brow, K);
    }
  }, 1);
}

// C[M,N] += A[K,M]^T * B[K,N]. Column blocks keep the B slice hot across the
// whole i loop.
inline void gemm_aTb_acc(const float* A, const float* B, float* C, int M, int K, int N) {
  constexpr int kBlock = 4096;
  const int nblocks = (N + kBlock - 1) / kBlock;
  parallel_for(nblocks, [&](std::int64_t blk) {
    const int j0 = static_cast<int>(blk) * kBlock;
    const int j1 = std::min(N, j0 + kBlock);
    for (int i = 0; i < M; ++i) {
      float* crow = C + static_cast<std::int64_t>(i) * N;
      for (int k = 0; k < K; ++k) {
        float a = A[static_cast<std::int64_t>(k) * M + i];
        const float* brow = B + static_cast<std::int64_t>(k) * N;
        for (int j = j0; j < j1; ++j) crow[j] += a * brow[j];
      }
    }
  }, 1);
}

}  // namespace detail

// ------------------------------------------------------------ elementwise

inline Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
  require_shape(a.shape() == b.shape(),
                "add: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  std::vector<float> out(static_cast<size_t>(a.numel()));
  const float* pa = a.data();
  const float* pb = b.data();
  parallel_for(a.numel(), [&](std::int64_t i) { out[static_cast<size_t>(i)] = pa[i] + pb[i]; }, 8192);
  Tensor y = Tensor::from(a.shape(), std::move(out));
  DGDF_CHECK_FINITE(y);
  if (tape && (a.tracked() || b.tracked())) {
    int an = a.node(), bn = b.node();
    int id = tape->add_node(y.shape());
    tape->set_back(id, [an, bn](Tape& tp, const std::vector<float>& g) {
      if (an >= 0) {
        auto& ga = tp.acc(an);
        parallel_for(static_cast<std::int64_t>(g.size()),
                     [&](std::int64_t i) { ga[static_cast<size_t>(i)] += g[static_cast<size_t>(i)]; }, 16384);
      }
      if (bn >= 0) {
        auto& gb = tp.acc(bn);
        parallel_for(static_cast<std::int64_t>(g.size()),
                     [&](std::int64_t i) { gb[static_cast<size_t>(i)] += g[static_cast<size_t>(i)]; }, 16384);
      }
    });
    y.set_node(id);
  }
  return y;
}

// s1*a + s2*b with fixed scalars.
inline Tensor scale_add(Tape* tape, float s1, const Tensor& a, float s2, const Tensor& b) {
  require_shape(a.shape() == b.shape(),
                "scale_add: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  std::vector<float> out(static_cast<size_t>(a.numel()));
  const float* pa = a.data();
  const float* pb = b.data();
  parallel_for(a.numel(), [&](std::int64_t i) { out[static_cast<size_t>(i)] = s1 * pa[i] + s2 * pb[i]; }, 8192);
  Tensor y = Tensor::from(a.shape(), std::move(out));
  DGDF_CHECK_FINITE(y);
  if (tape && (a.tracked() || b.tracked())) {
    int an = a.node(), bn = b.node();
    int id = tape->add_node(y.shape());
    tape->set_back(id, [an, bn, s1, s2](Tape& tp, const std::vector<float>& g) {
      if (an >= 0) {
        auto& ga = tp.acc(an);
        parallel_for(static_cast<std::int64_t>(g.size()),
                     [&](std::int64_t i) { ga[static_cast<size_t>(i)] += s1 * g[static_cast<size_t>(i)]; }, 16384);
      }
      if (bn >= 0) {
        auto& gb = tp.acc(bn);
        parallel_for(static_cast<std::int64_t>(g.size()),
                     [&](std::int64_t i) { gb[static_cast<size_t>(i)] += s2 * g[static_cast<size_t>(i)]; }, 16384);
      }
    });
    y.set_node(id);
  }
  return y;
}

inline Tensor silu(Tape* tape, const Tensor& x) {
  std::vector<float> out(static_cast<size_t>(x.numel()));
  const float* px = x.data();
  parallel_for(x.numel(), [&](std::int64_t i) {
    float s = 1.0f / (1.0f + std::exp(-px[i]));
    out[static_cast<size_t>(i)] = px[i] * s;
  }, 8192);
  Tensor y = Tensor::from(x.shape(), std::move(out));
  DGDF_CHECK_FINITE(y);
  if (tape && x.tracked()) {
    int xn = x.node();
    Tensor xs = x;  // keep input alive for backward
    int id = tape->add_node(y.shape());
    tape->set_back(id, [xn, xs](Tape& tp, const std::vector<float>& g) {
      auto& gx = tp.acc(xn);
      const float* px = xs.data();
      parallel_for(static_cast<std::int64_t>(g.size()), [&](std::int64_t i) {
        float s = 1.0f / (1.0f + std::exp(-px[i]));
        gx[static_cast<size_t>(i)] += g[static_cast<size_t>(i)] * s * (1.0f + px[i] * (1.0f - s));
      }, 8192);
    });
    y.set_node(id);
  }
  return y;
}

inline Tensor concat_channels(Tape* tape, const Tensor& a, const Tensor& b) {
  const Shape4& sa = a.shape();
  const Shape4& sb = b.shape();
  require_shape(sa.n == sb.n && sa.h == sb.h && sa.w == sb.w,
                "concat_channels: mismatch " + sa.str() + " vs " + sb.str());
  Shape4 so{sa.n, sa.c + sb.c, sa.h, sa.w};
  std::vector<float> out(static_cast<size_t>(so.numel()));
  std::int64_t plane = static_cast<std::int64_t>(sa.h) * sa.w;
  for (int n = 0; n < sa.n; ++n) {
    std::memcpy(out.data() + (static_cast<std::int64_t>(n) * so.c) * plane,
                a.data() + (static_cast<std::int64_t>(n) * sa.c) * plane,
                static_cast<size_t>(sa.c * plane) * sizeof(float));
    std::memcpy(out.data() + (static_cast<std::int64_t>(n) * so.c + sa.c) * plane,
                b.data() + (static_cast<std::int64_t>(n) * sb.c) * plane,
                static_cast<size_t>(sb.c * plane) * sizeof(float));
  }
  Tensor y = Tensor::from(so, std::move(out));
  if (tape && (a.tracked() || b.tracked())) {
    int an = a.node(), bn = b.node();
    int ca = sa.c, cb = sb.c, N = sa.n;
    int id = tape->add_node(so);
    tape->set_back(id, [an, bn, ca, cb, N, plane](Tape& tp, const std::vector<float>& g) {
      float* ga = an >= 0 ? tp.acc(an).data() : nullptr;
      float* gb = bn >= 0 ? tp.acc(bn).data() : nullptr;
      parallel_for(N, [&](std::int64_t n) {
        const float* gn = g.data() + (n * (ca + cb)) * plane;
        if (ga) {
          float* dst = ga + (n * ca) * plane;
          for (std::int64_t i = 0; i < ca * plane; ++i) dst[i] += gn[i];
        }
        if (gb) {
          float* dst = gb + (n * cb) * plane;
          const float* src = gn + static_cast<std::int64_t>(ca) * plane;
          for (std::int64_t i = 0; i < cb * plane; ++i) dst[i] += src[i];
        }
      }, 1);
    });
    y.set_node(id);
  }
  return y;
}

inline Tensor upsample_nearest2x(Tape* tape, const Tensor& x) {
  const Shape4& s = x.shape();
  Shape4 so{s.n, s.c, s.h * 2, s.w * 2};
  std::vector<float> out(static_cast<size_t>(so.numel()));
  const float* px = x.data();
  parallel_for(static_cast<std::int64_t>(s.n) * s.c, [&](std::int64_t nc) {
    const float* src = px + nc * s.h * s.w;
    float* dst = out.data() + nc * so.h * so.w;
    for (int y0 = 0; y0 < s.h; ++y0)
      for (int x0 = 0; x0 < s.w; ++x0) {
        float v = src[y0 * s.w + x0];
        float* d = dst + (2 * y0) * so.w + 2 * x0;
        d[0] = v;
        d[1] = v;
        d[so.w] = v;
        d[so.w + 1] = v;
      }
  }, 1);
  Tensor y = Tensor::from(so, std::move(out));
  if (tape && x.tracked()) {
    int xn = x.node();
    int id = tape->add_node(so);
    tape->set_back(id, [xn, s, so](Tape& tp, const std::vector<float>& g) {
      auto& gx = tp.acc(xn);
      parallel_for(static_cast<std::int64_t>(s.n) * s.c, [&](std::int64_t nc) {
        float* dst = gx.data() + nc * s.h * s.w;
        const float* src = g.data() + nc * so.h * so.w;
        for (int y0 = 0; y0 < s.h; ++y0)
          for (int x0 = 0; x0 < s.w; ++x0) {
            const float* sp = src + (2 * y0) * so.w + 2 * x0;
            dst[y0 * s.w + x0] += sp[0] + sp[1] + sp[so.w] + sp[so.w + 1];
          }
      }, 1);
    });
    y.set_node(id);
  }
  return y;
}

inline Tensor avg_pool2x(Tape* tape, const Tensor& x) {
  const Shape4& s = x.shape();
  require_shape(s.h % 2 == 0 && s.w % 2 == 0, "avg_pool2x: odd spatial dims " + s.str());
  Shape4 so{s.n, s.c, s.h / 2, s.w / 2};
  std::vector<float> out(static_cast<size_t>(so.numel()));
  const float* px = x.data();
  parallel_for(static_cast<std::int64_t>(s.n) * s.c, [&](std::int64_t nc) {
    const float* src = px + nc * s.h * s.w;
    float* dst = out.data() + nc * so.h * so.w;
    for (int y0 = 0; y0 < so.h; ++y0)
      for (int x0 = 0; x0 < so.w; ++x0) {
        const float* sp = src + (2 * y0) * s.w + 2 * x0;
        dst[y0 * so.w + x0] = 0.25f * (sp[0] + sp[1] + sp[s.w] + sp[s.w + 1]);
      }
  }, 1);
  Tensor y = Tensor::from(so, std::move(out));
  if (tape && x.tracked()) {
    int xn = x.node();
    int id = tape->add_node(so);
    tape->set_back(id, [xn, s, so](Tape& tp, const std::vector<float>& g) {
      auto& gx = tp.acc(xn);
      parallel_for(static_cast<std::int64_t>(s.n) * s.c, [&](std::int64_t nc) {
        float* dst = gx.data() + nc * s.h * s.w;
        const float* src = g.data() + nc * so.h * so.w;
        for (int y0 = 0; y0 < so.h; ++y0)
          for (int x0 = 0; x0 < so.w; ++x0) {
            float v = 0.25f * src[y0 * so.w + x0];
            float* dp = dst + (2 * y0) * s.w + 2 * x0;
            dp[0] += v;
            dp[1] += v;
            dp[s.w] += v;
            dp[s.w + 1] += v;
          }
      }, 1);
    });
    y.set_node(id);
  }
  return y;
}

// x[N,C,H,W] + v[N,C,1,1] broadcast over the spatial plane; used to inject
// the per-sample time embedding into feature maps.
inline Tensor add_per_channel(Tape* tape, const Tensor& x, const Tensor& v) {
  const Shape4& s = x.shape();
  const Shape4& sv = v.shape();
  require_shape(sv.n == s.n && sv.c == s.c && sv.h == 1 && sv.w == 1,
                "add_per_channel: bias shape " + sv.str() + " for input " + s.str());
  std::vector<float> out(static_cast<size_t>(s.numel()));
  const float* px = x.data();
  const float* pv = v.data();
  std::int64_t plane = static_cast<std::int64_t>(s.h) * s.w;
  parallel_for(static_cast<std::int64_t>(s.n) * s.c, [&](std::int64_t nc) {
    float b = pv[nc];
    const float* src = px + nc * plane;
    float* dst = out.data() + nc * plane;
    for (std::int64_t i = 0; i < plane; ++i) dst[i] = src[i] + b;
  }, 1);
  Tensor y = Tensor::from(s, std::move(out));
  if (tape && (x.tracked() || v.tracked())) {
    int xn = x.node(), vn = v.node();
    int id = tape->add_node(s);
    tape->set_back(id, [xn, vn, s, plane](Tape& tp, const std::vector<float>& g) {
      if (xn >= 0) {
        auto& gx = tp.acc(xn);
        parallel_for(static_cast<std::int64_t>(g.size()),
                     [&](std::int64_t i) { gx[static_cast<size_t>(i)] += g[static_cast<size_t>(i)]; }, 16384);
      }
      if (vn >= 0) {
        auto& gv = tp.acc(vn);
        parallel_for(static_cast<std::int64_t>(s.n) * s.c, [&](std::int64_t nc) {
          double acc = 0.0;
          const float* src = g.data() + nc * plane;
          for (std::int64_t i = 0; i < plane; ++i) acc += src[i];
          gv[static_cast<size_t>(nc)] += static_cast<float>(acc);
        }, 1);
      }
    });
    y.set_node(id);
  }
  return y;
}

// ------------------------------------------------------------- convolution

enum class Pad { zero, reflect };

namespace detail {

inline int reflect_index(int i, int n) {
  // mirror without repeating the edge sample: -1 -> 1, n -> n-2
  if (i < 0) i = -i;
  if (i >= n) i = 2 * n - 2 - i;
  return i;
}

inline void pad_plane(const float* src, int H, int W, float* dst, int p, Pad mode) {
  int Hp = H + 2 * p, Wp = W + 2 * p;
  for (int y = 0; y < Hp; ++y) {
    int sy = y - p;
    if (mode == Pad::reflect) sy = reflect_index(sy, H);
    for (int x = 0; x < Wp; ++x) {
      int sx = x - p;
      if (mode == Pad::reflect) sx = reflect_index(sx, W);
      if (mode == Pad::zero && (sy < 0 || sy >= H || sx < 0 || sx >= W)) {
        dst[y * Wp + x] = 0.0f;
      } else {
        dst[y * Wp + x] = src[sy * W + sx];
      }
    }
  }
}

// Fold gradients of the padded plane back onto the source plane.
inline void unpad_plane_acc(const float* gpad, int H, int W, float* gsrc, int p, Pad mode) {
  int Hp = H + 2 * p, Wp = W + 2 * p;
  for (int y = 0; y < Hp; ++y) {
    int sy = y - p;
    if (mode == Pad::reflect) sy = reflect_index(sy, H);
    if (sy < 0 || sy >= H) continue;
    for (int x = 0; x < Wp; ++x) {
      int sx = x - p;
      if (mode == Pad::reflect) sx = reflect_index(sx, W);
      if (sx < 0 || sx >= W) continue;
      gsrc[sy * W + sx] += gpad[y * Wp + x];
    }
  }
}

// im2col with explicit destination row stride, so per-sample patches can land
// in column slices of one batch-wide matrix.
inline void im2col(const float* xp, int C, int Hp, int Wp, int k, int stride,
                   int OH, int OW, float* cols, std::int64_t row_stride) {
  for (int c = 0; c < C; ++c)
    for (int kh = 0; kh < k; ++kh)
      for (int kw = 0; kw < k; ++kw) {
        float* row = cols + ((static_cast<std::int64_t>(c) * k + kh) * k + kw) * row_stride;
        const float* base = xp + static_cast<std::int64_t>(c) * Hp * Wp + kh * Wp + kw;
        for (int oh = 0; oh < OH; ++oh) {
          const float* srow = base + static_cast<std::int64_t>(oh) * stride * Wp;
          for (int ow = 0; ow < OW; ++ow) row[oh * OW + ow] = srow[ow * stride];
        }
      }
}

inline void col2im_acc(const float* cols, int C, int Hp, int Wp, int k, int stride,
                       int OH, int OW, float* xp, std::int64_t row_stride) {
  for (int c = 0; c < C; ++c)
    for (int kh = 0; kh < k; ++kh)
      for (int kw = 0; kw < k; ++kw) {
        const float* row = cols + ((static_cast<std::int64_t>(c) * k + kh) * k + kw) * row_stride;
        float* base = xp + static_cast<std::int64_t>(c) * Hp * Wp + kh * Wp + kw;
        for (int oh = 0; oh < OH; ++oh) {
          float* srow = base + static_cast<std::int64_t>(oh) * stride * Wp;
          for (int ow = 0; ow < OW; ++ow) srow[ow * stride] += row[oh * OW + ow];
        }
      }
}

}  // namespace detail

// 2-D convolution, same-style padding of (k-1)/2, odd square kernels.
// weight (C_out, C_in, k, k), bias (1, C_out, 1, 1).
inline Tensor conv2d(Tape* tape, const Tensor& x, const Tensor& weight, const Tensor& bias,
                     int stride = 1, Pad pad = Pad::reflect) {
  const Shape4& sx = x.shape();
  const Shape4& sw = weight.shape();
  require(sw.h == sw.w && sw.h % 2 == 1, "conv2d: kernel must be odd square, got " + sw.str());
  require_shape(sx.c == sw.c, "conv2d: input channels " + std::to_string(sx.c) +
                                  " != weight C_in " + std::to_string(sw.c));
  require_shape(bias.shape() == Shape4{1, sw.n, 1, 1},
                "conv2d: bias shape " + bias.shape().str() + " for C_out " + std::to_string(sw.n));
  require(stride >= 1, "conv2d: stride must be >= 1");
  const int k = sw.h, p = (k - 1) / 2;
  if (pad == Pad::reflect && p > 0)
    require_shape(sx.h > p && sx.w > p, "conv2d: input too small for reflect pad " + sx.str());
  const int Hp = sx.h + 2 * p, Wp = sx.w + 2 * p;
  const int OH = (Hp - k) / stride + 1, OW = (Wp - k) / stride + 1;
  require_shape(OH >= 1 && OW >= 1, "conv2d: degenerate output size");
  const int Co = sw.n, Ci = sx.c, ckk = Ci * k * k;
  const std::int64_t ohw = static_cast<std::int64_t>(OH) * OW;

  Shape4 so{sx.n, Co, OH, OW};
  const int N = sx.n;
  const std::int64_t nohw = static_cast<std::int64_t>(N) * ohw;

  // one batch-wide column matrix [ckk, N*ohw]; per-sample slices fill in
  // parallel and a single GEMM covers the whole batch
  std::vector<float> out(static_cast<size_t>(so.numel()));
  std::vector<float> xpad = scratch_acquire(static_cast<size_t>(N) * Ci * Hp * Wp);
  std::vector<float> cols = scratch_acquire(static_cast<size_t>(ckk) * nohw);
  std::vector<float> cflat = scratch_acquire(static_cast<size_t>(Co) * nohw);
  std::fill(cflat.begin(), cflat.end(), 0.0f);

  parallel_for(static_cast<std::int64_t>(N) * Ci, [&](std::int64_t nc) {
    detail::pad_plane(x.data() + nc * sx.h * sx.w, sx.h, sx.w,
                      xpad.data() + nc * Hp * Wp, p, pad);
  }, 1);
  parallel_for(N, [&](std::int64_t n) {
    detail::im2col(xpad.data() + n * Ci * Hp * Wp, Ci, Hp, Wp, k, stride, OH, OW,
                   cols.data() + n * ohw, nohw);
  }, 1);
  detail::gemm_acc(weight.data(), cols.data(), cflat.data(), Co, ckk, static_cast<int>(nohw));
  const float* pb = bias.data();
  parallel_for(static_cast<std::int64_t>(N) * Co, [&](std::int64_t nco) {
    std::int64_t n = nco / Co, co = nco % Co;
    const float* src = cflat.data() + co * nohw + n * ohw;
    float* dst = out.data() + (n * Co + co) * ohw;
    float b = pb[co];
    for (std::int64_t i = 0; i < ohw; ++i) dst[i] = src[i] + b;
  }, 1);
  scratch_release(std::move(xpad));
  scratch_release(std::move(cols));
  scratch_release(std::move(cflat));
  Tensor y = Tensor::from(so, std::move(out));
  DGDF_CHECK_FINITE(y);

  if (tape && (x.tracked() || weight.tracked() || bias.tracked())) {
    int xn = x.node(), wn = weight.node(), bn = bias.node();
    Tensor xs = x, ws = weight;
    int id = tape->add_node(so);
    tape->set_back(id, [=](Tape& tp, const std::vector<float>& g) {
      const Shape4 sxi = xs.shape();
      // rebuild the padded input and column matrix (memory traded for reuse)
      std::vector<float> xpadb = scratch_acquire(static_cast<size_t>(N) * Ci * Hp * Wp);
      std::vector<float> colsb = scratch_acquire(static_cast<size_t>(ckk) * nohw);
      parallel_for(static_cast<std::int64_t>(N) * Ci, [&](std::int64_t nc) {
        detail::pad_plane(xs.data() + nc * sxi.h * sxi.w, sxi.h, sxi.w,
                          xpadb.data() + nc * Hp * Wp, p, pad);
      }, 1);
      parallel_for(N, [&](std::int64_t n) {
        detail::im2col(xpadb.data() + n * Ci * Hp * Wp, Ci, Hp, Wp, k, stride, OH, OW,
                       colsb.data() + n * ohw, nohw);
      }, 1);
      // upstream gradient in [Co, N*ohw] layout
      std::vector<float> gflat = scratch_acquire(static_cast<size_t>(Co) * nohw);
      parallel_for(static_cast<std::int64_t>(N) * Co, [&](std::int64_t nco) {
        std::int64_t n = nco / Co, co = nco % Co;
        const float* src = g.data() + (n * Co + co) * ohw;
        float* dst = gflat.data() + co * nohw + n * ohw;
        std::memcpy(dst, src, static_cast<size_t>(ohw) * sizeof(float));
      }, 1);
      if (wn >= 0) {
        auto& gw = tp.acc(wn);
        detail::gemm_abT_acc(gflat.data(), colsb.data(), gw.data(), Co,
                             static_cast<int>(nohw), ckk);
      }
      if (bn >= 0) {
        auto& gb = tp.acc(bn);
        for (int co = 0; co < Co; ++co) {
          double s = 0.0;
          const float* row = gflat.data() + static_cast<std::int64_t>(co) * nohw;
          for (std::int64_t i = 0; i < nohw; ++i) s += row[i];
          gb[static_cast<size_t>(co)] += static_cast<float>(s);
        }
      }
      if (xn >= 0) {
        std::vector<float> gcols = scratch_acquire(static_cast<size_t>(ckk) * nohw);
        std::fill(gcols.begin(), gcols.end(), 0.0f);
        detail::gemm_aTb_acc(ws.data(), gflat.data(), gcols.data(), ckk, Co,
                             static_cast<int>(nohw));
        std::vector<float> gxpad = scratch_acquire(static_cast<size_t>(N) * Ci * Hp * Wp);
        std::fill(gxpad.begin(), gxpad.end(), 0.0f);
        parallel_for(N, [&](std::int64_t n) {
          detail::col2im_acc(gcols.data() + n * ohw, Ci, Hp, Wp, k, stride, OH, OW,
                             gxpad.data() + n * Ci * Hp * Wp, nohw);
        }, 1);
        auto& gx = tp.acc(xn);
        parallel_for(static_cast<std::int64_t>(N) * Ci, [&](std::int64_t nc) {
          detail::unpad_plane_acc(gxpad.data() + nc * Hp * Wp, sxi.h, sxi.w,
                                  gx.data() + nc * sxi.h * sxi.w, p, pad);
        }, 1);
        scratch_release(std::move(gcols));
        scratch_release(std::move(gxpad));
      }
      scratch_release(std::move(xpadb));
      scratch_release(std::move(colsb));
      scratch_release(std::move(gflat));
    });
    y.set_node(id);
  }
  return y;
}

// --------------------------------------------------------------- groupnorm

// Normalizes each (sample, group) slice to zero mean / unit variance, then
// applies the per-channel affine. gamma/beta shaped (1, C, 1, 1).
inline Tensor group_norm(Tape* tape, const Tensor& x, int groups, const Tensor& gamma,
                         const Tensor& beta, float eps = 1e-5f) {
  const Shape4& s = x.shape();
  require_shape(groups >= 1 && s.c % groups == 0,
                "group_norm: groups " + std::to_string(groups) + " must divide channels " +
                    std::to_string(s.c));
  require_shape(gamma.shape() == Shape4{1, s.c, 1, 1} && beta.shape() == Shape4{1, s.c, 1, 1},
                "group_norm: affine params must be (1,C,1,1)");
  const int cg = s.c / groups;
  const std::int64_t plane = static_cast<std::int64_t>(s.h) * s.w;
  const std::int64_t m = cg * plane;

  std::vector<float> xhat(static_cast<size_t>(s.numel()));
  std::vector<float> inv_std(static_cast<size_t>(s.n) * groups);
  std::vector<float> out(static_cast<size_t>(s.numel()));
  const float* px = x.data();
  const float* pg = gamma.data();
  const float* pb = beta.data();

  parallel_for(static_cast<std::int64_t>(s.n) * groups, [&](std::int64_t ng) {
    std::int64_t n = ng / groups, gidx = ng % groups;
    const float* base = px + (n * s.c + gidx * cg) * plane;
    double mean = 0.0;
    for (std::int64_t i = 0; i < m; ++i) mean += base[i];
    mean /= static_cast<double>(m);
    double var = 0.0;
    for (std::int64_t i = 0; i < m; ++i) {
      double d = base[i] - mean;
      var += d * d;
    }
    var /= static_cast<double>(m);
    float is = static_cast<float>(1.0 / std::sqrt(var + eps));
    inv_std[static_cast<size_t>(ng)] = is;
    float mu = static_cast<float>(mean);
    float* xh = xhat.data() + (n * s.c + gidx * cg) * plane;
    float* o = out.data() + (n * s.c + gidx * cg) * plane;
    for (int c = 0; c < cg; ++c) {
      float ga = pg[gidx * cg + c];
      float be = pb[gidx * cg + c];
      for (std::int64_t i = 0; i < plane; ++i) {
        float v = (base[c * plane + i] - mu) * is;
        xh[c * plane + i] = v;
        o[c * plane + i] = ga * v + be;
      }
    }
  }, 1);

  Tensor y = Tensor::from(s, std::move(out));
  DGDF_CHECK_FINITE(y);
  if (tape && (x.tracked() || gamma.tracked() || beta.tracked())) {
    int xn = x.node(), gn = gamma.node(), bn = beta.node();
    auto xhat_keep = std::make_shared<std::vector<float>>(std::move(xhat));
    auto istd_keep = std::make_shared<std::vector<float>>(std::move(inv_std));
    Tensor gs = gamma;
    int id = tape->add_node(s);
    tape->set_back(id, [=](Tape& tp, const std::vector<float>& g) {
      const std::vector<float>& xh = *xhat_keep;
      const std::vector<float>& istd = *istd_keep;
      if (gn >= 0 || bn >= 0) {
        float* ggm = gn >= 0 ? tp.acc(gn).data() : nullptr;
        float* gbt = bn >= 0 ? tp.acc(bn).data() : nullptr;
        parallel_for(s.c, [&](std::int64_t c) {
          double dg = 0.0, db = 0.0;
          for (int n = 0; n < s.n; ++n) {
            const float* grow = g.data() + (static_cast<std::int64_t>(n) * s.c + c) * plane;
            const float* xrow = xh.data() + (static_cast<std::int64_t>(n) * s.c + c) * plane;
            for (std::int64_t i = 0; i < plane; ++i) {
              dg += static_cast<double>(grow[i]) * xrow[i];
              db += grow[i];
            }
          }
          if (ggm) ggm[c] += static_cast<float>(dg);
          if (gbt) gbt[c] += static_cast<float>(db);
        }, 1);
      }
      if (xn >= 0) {
        auto& gx = tp.acc(xn);
        const float* pgm = gs.data();
        parallel_for(static_cast<std::int64_t>(s.n) * groups, [&](std::int64_t ng) {
          std::int64_t n = ng / groups, gidx = ng % groups;
          std::int64_t off = (n * s.c + gidx * cg) * plane;
          const float* grow = g.data() + off;
          const float* xrow = xh.data() + off;
          double sum_dy = 0.0, sum_dyx = 0.0;
          for (int c = 0; c < cg; ++c) {
            float ga = pgm[gidx * cg + c];
            for (std::int64_t i = 0; i < plane; ++i) {
              double dyh = static_cast<double>(grow[c * plane + i]) * ga;
              sum_dy += dyh;
              sum_dyx += dyh * xrow[c * plane + i];
            }
          }
          double mean_dy = sum_dy / static_cast<double>(m);
          double mean_dyx = sum_dyx / static_cast<double>(m);
          float is = istd[static_cast<size_t>(ng)];
          float* gxrow = gx.data() + off;
          for (int c = 0; c < cg; ++c) {
            float ga = pgm[gidx * cg + c];
            for (std::int64_t i = 0; i < plane; ++i) {
              double dyh = static_cast<double>(grow[c * plane + i]) * ga;
              gxrow[c * plane + i] += static_cast<float>(
                  is * (dyh - mean_dy - xrow[c * plane + i] * mean_dyx));
            }
          }
        }, 1);
      }
    });
    y.set_node(id);
  }
  return y;
}

// ------------------------------------------------------------------ linear

// x (N, F_in, 1, 1), W (F_out, F_in, 1, 1), b (1, F_out, 1, 1).
inline Tensor linear(Tape* tape, const Tensor& x, const Tensor& W, const Tensor& b) {
  const Shape4& sx = x.shape();
  const Shape4& sw = W.shape();
  require_shape(sx.h == 1 && sx.w == 1 && sw.h == 1 && sw.w == 1,
                "linear: expects flat tensors, got " + sx.str() + " and " + sw.str());
  require_shape(sx.c == sw.c, "linear: in features " + std::to_string(sx.c) + " != " +
                                  std::to_string(sw.c));
  require_shape(b.shape() == Shape4{1, sw.n, 1, 1}, "linear: bias shape " + b.shape().str());
  const int N = sx.n, Fi = sx.c, Fo = sw.n;
  Shape4 so{N, Fo, 1, 1};
  std::vector<float> out(static_cast<size_t>(so.numel()), 0.0f);
  detail::gemm_abT_acc(x.data(), W.data(), out.data(), N, Fi, Fo);
  const float* pb = b.data();
  for (int n = 0; n < N; ++n)
    for (int f = 0; f < Fo; ++f) out[static_cast<size_t>(n) * Fo + f] += pb[f];
  Tensor y = Tensor::from(so, std::move(out));
  DGDF_CHECK_FINITE(y);
  if (tape && (x.tracked() || W.tracked() || b.tracked())) {
    int xn = x.node(), wn = W.node(), bn = b.node();
    Tensor xs = x, ws = W;
    int id = tape->add_node(so);
    tape->set_back(id, [=](Tape& tp, const std::vector<float>& g) {
      if (xn >= 0) {
        auto& gx = tp.acc(xn);
        detail::gemm_acc(g.data(), ws.data(), gx.data(), N, Fo, Fi);
      }
      if (wn >= 0) {
        auto& gw = tp.acc(wn);
        detail::gemm_aTb_acc(g.data(), xs.data(), gw.data(), Fo, N, Fi);
      }
      if (bn >= 0) {
        auto& gb = tp.acc(bn);
        for (int f = 0; f < Fo; ++f) {
          double s = 0.0;
          for (int n = 0; n < N; ++n) s += g[static_cast<size_t>(n) * Fo + f];
          gb[static_cast<size_t>(f)] += static_cast<float>(s);
        }
      }
    });
    y.set_node(id);
  }
  return y;
}

// -------------------------------------------------------------- reductions

inline Tensor sum(Tape* tape, const Tensor& x) {
  double s = parallel_sum_f64(x.numel(), [&](std::int64_t i) {
    return static_cast<double>(x.data()[i]);
  });
  Tensor y = Tensor::scalar(static_cast<float>(s));
  if (tape && x.tracked()) {
    int xn = x.node();
    int id = tape->add_node(y.shape());
    tape->set_back(id, [xn](Tape& tp, const std::vector<float>& g) {
      auto& gx = tp.acc(xn);
      for (auto& v : gx) v += g[0];
    });
    y.set_node(id);
  }
  return y;
}

// Scalar head sum(x * w) with constant weights; smooth everywhere, which
// keeps finite-difference probes clean.
inline Tensor weighted_sum(Tape* tape, const Tensor& x, const Tensor& w) {
  require_shape(x.shape() == w.shape(), "weighted_sum: shape mismatch");
  const float* px = x.data();
  const float* pw = w.data();
  double s = parallel_sum_f64(x.numel(), [&](std::int64_t i) {
    return static_cast<double>(px[i]) * pw[i];
  });
  Tensor y = Tensor::scalar(static_cast<float>(s));
  if (tape && x.tracked()) {
    int xn = x.node();
    Tensor wsave = w;
    int id = tape->add_node(y.shape());
    tape->set_back(id, [xn, wsave](Tape& tp, const std::vector<float>& g) {
      auto& gx = tp.acc(xn);
      const float* pw = wsave.data();
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += g[0] * pw[i];
    });
    y.set_node(id);
  }
  return y;
}

// Mean absolute difference; subgradient 0 at ties.
inline Tensor l1_loss(Tape* tape, const Tensor& pred, const Tensor& target) {
  require_shape(pred.shape() == target.shape(),
                "l1_loss: shape mismatch " + pred.shape().str() + " vs " + target.shape().str());
  const float* pp = pred.data();
  const float* pt = target.data();
  const std::int64_t n = pred.numel();
  double s = parallel_sum_f64(n, [&](std::int64_t i) {
    return std::abs(static_cast<double>(pp[i]) - pt[i]);
  });
  Tensor y = Tensor::scalar(static_cast<float>(s / static_cast<double>(n)));
  if (tape && (pred.tracked() || target.tracked())) {
    int pn = pred.node(), tn = target.node();
    Tensor ps = pred, ts = target;
    int id = tape->add_node(y.shape());
    tape->set_back(id, [pn, tn, ps, ts, n](Tape& tp, const std::vector<float>& g) {
      const float* pp = ps.data();
      const float* pt = ts.data();
      float scale = g[0] / static_cast<float>(n);
      if (pn >= 0) {
        auto& gp = tp.acc(pn);
        parallel_for(n, [&](std::int64_t i) {
          float d = pp[i] - pt[i];
          gp[static_cast<size_t>(i)] += d > 0.0f ? scale : (d < 0.0f ? -scale : 0.0f);
        }, 16384);
      }
      if (tn >= 0) {
        auto& gt = tp.acc(tn);
        parallel_for(n, [&](std::int64_t i) {
          float d = pp[i] - pt[i];
          gt[static_cast<size_t>(i)] -= d > 0.0f ? scale : (d < 0.0f ? -scale : 0.0f);
        }, 16384);
      }
    });
    y.set_node(id);
  }
  return y;
}

// ----------------------------------------------------------- time embedding

// Interleaved sin/cos of t at geometrically spaced angular frequencies from 1
// down to 1/10000, the usual transformer convention. dim must be even.
inline std::vector<float> sinusoidal_time_embedding(int t, int dim) {
  require(dim > 0 && dim % 2 == 0, "time embedding dim must be even and positive");
  require(t >= 0, "time embedding t must be >= 0");
  const int half = dim / 2;
  std::vector<float> e(static_cast<size_t>(dim));
  for (int i = 0; i < half; ++i) {
    double omega = half > 1 ? std::exp(-std::log(10000.0) * i / (half - 1)) : 1.0;
    double a = omega * static_cast<double>(t);
    e[static_cast<size_t>(2 * i)] = static_cast<float>(std::sin(a));
    e[static_cast<size_t>(2 * i + 1)] = static_cast<float>(std::cos(a));
  }
  return e;
}

inline Tensor make_time_embedding(std::span<const int> ts, int dim) {
  std::vector<float> data;
  data.reserve(ts.size() * static_cast<size_t>(dim));
  for (int t : ts) {
    auto e = sinusoidal_time_embedding(t, dim);
    data.insert(data.end(), e.begin(), e.end());
  }
  return Tensor::from(Shape4{static_cast<int>(ts.size()), dim, 1, 1}, std::move(data));
}

}  // namespace dgdf
