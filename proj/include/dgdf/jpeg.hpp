#pragma once

// In-memory JPEG degradation: 8x8 float DCT, Annex-K quantization tables
// scaled by the conventional quality formula, 4:4:4 sampling, JFIF YCbCr.
// Only the lossy transform is modeled; no entropy coding or file format.

#include <array>
#include <cmath>
#include <cstdint>

#include "dgdf/image.hpp"

namespace dgdf {
namespace jpeg_detail {

inline constexpr std::array<int, 64> kLumaQ = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
    14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
    18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

inline constexpr std::array<int, 64> kChromaQ = {
    17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99, 47, 66, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99};

inline std::array<int, 64> scaled_table(const std::array<int, 64>& base, int quality) {
  int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
  std::array<int, 64> out{};
  for (int i = 0; i < 64; ++i) {
    int q = (base[static_cast<size_t>(i)] * scale + 50) / 100;
    out[static_cast<size_t>(i)] = std::min(255, std::max(1, q));
  }
  return out;
}

struct DctBasis {
  // c[u][x] = 0.5 * C(u) * cos((2x+1) u pi / 16)
  double c[8][8];
  DctBasis() {
    for (int u = 0; u < 8; ++u)
      for (int x = 0; x < 8; ++x)
        c[u][x] = 0.5 * (u == 0 ? 1.0 / std::sqrt(2.0) : 1.0) *
                  std::cos((2 * x + 1) * u * 3.14159265358979323846 / 16.0);
  }
};

inline const DctBasis& basis() {
  static const DctBasis b;
  return b;
}

// forward DCT, quantize, dequantize, inverse DCT of one 8x8 block in place
inline void lossy_block(double* blk, const std::array<int, 64>& q) {
  const auto& B = basis();
  double tmp[8][8], coef[8][8];
  // rows then columns
  for (int u = 0; u < 8; ++u)
    for (int y = 0; y < 8; ++y) {
      double s = 0.0;
      for (int x = 0; x < 8; ++x) s += B.c[u][x] * blk[y * 8 + x];
      tmp[u][y] = s;
    }
  for (int u = 0; u < 8; ++u)
    for (int v = 0; v < 8; ++v) {
      double s = 0.0;
      for (int y = 0; y < 8; ++y) s += B.c[v][y] * tmp[u][y];
      int qv = q[static_cast<size_t>(v * 8 + u)];
      coef[u][v] = static_cast<double>(std::lround(s / qv)) * qv;
    }
  // inverse: f(x,y) = sum_u sum_v c[u][x] c[v][y] F(u,v)
  for (int x = 0; x < 8; ++x)
    for (int v = 0; v < 8; ++v) {
      double s = 0.0;
      for (int u = 0; u < 8; ++u) s += B.c[u][x] * coef[u][v];
      tmp[x][v] = s;
    }
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      double s = 0.0;
      for (int v = 0; v < 8; ++v) s += B.c[v][y] * tmp[x][v];
      blk[y * 8 + x] = s;
    }
}

}  // namespace jpeg_detail

inline Image jpeg_roundtrip(const Image& img, int quality) {
  require(quality >= 1 && quality <= 100, "jpeg_roundtrip: quality must be in 1..100");
  require_shape(img.c == 3, "jpeg_roundtrip: expects 3 channels");
  using namespace jpeg_detail;
  const auto qy = scaled_table(kLumaQ, quality);
  const auto qc = scaled_table(kChromaQ, quality);

  const int W = img.w, H = img.h;
  const int Wp = (W + 7) / 8 * 8, Hp = (H + 7) / 8 * 8;

  // 8-bit quantized RGB -> YCbCr planes, edge-replicated to block multiples
  std::vector<double> Y(static_cast<size_t>(Wp) * Hp), Cb(Y.size()), Cr(Y.size());
  for (int y = 0; y < Hp; ++y) {
    int sy = std::min(y, H - 1);
    for (int x = 0; x < Wp; ++x) {
      int sx = std::min(x, W - 1);
      double r = std::lround(std::min(1.0f, std::max(0.0f, img.at(0, sy, sx))) * 255.0);
      double g = std::lround(std::min(1.0f, std::max(0.0f, img.at(1, sy, sx))) * 255.0);
      double b = std::lround(std::min(1.0f, std::max(0.0f, img.at(2, sy, sx))) * 255.0);
      size_t i = static_cast<size_t>(y) * Wp + x;
      Y[i] = 0.299 * r + 0.587 * g + 0.114 * b - 128.0;
      Cb[i] = -0.168735892 * r - 0.331264108 * g + 0.5 * b;
      Cr[i] = 0.5 * r - 0.418687589 * g - 0.081312411 * b;
    }
  }

  auto process = [&](std::vector<double>& plane, const std::array<int, 64>& q) {
    double blk[64];
    for (int by = 0; by < Hp; by += 8)
      for (int bx = 0; bx < Wp; bx += 8) {
        for (int y = 0; y < 8; ++y)
          for (int x = 0; x < 8; ++x)
            blk[y * 8 + x] = plane[static_cast<size_t>(by + y) * Wp + bx + x];
        lossy_block(blk, q);
        for (int y = 0; y < 8; ++y)
          for (int x = 0; x < 8; ++x)
            plane[static_cast<size_t>(by + y) * Wp + bx + x] = blk[y * 8 + x];
      }
  };
  process(Y, qy);
  process(Cb, qc);
  process(Cr, qc);

  Image out(W, H, 3);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      size_t i = static_cast<size_t>(y) * Wp + x;
      double yy = Y[i] + 128.0;
      double r = yy + 1.402 * Cr[i];
      double g = yy - 0.344136286 * Cb[i] - 0.714136286 * Cr[i];
      double b = yy + 1.772 * Cb[i];
      auto to01 = [](double v) {
        double q8 = std::lround(std::min(255.0, std::max(0.0, v)));
        return static_cast<float>(q8 / 255.0);
      };
      out.at(0, y, x) = to01(r);
      out.at(1, y, x) = to01(g);
      out.at(2, y, x) = to01(b);
    }
  return out;
}

}  // namespace dgdf
