#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "dgdf/tensor.hpp"

namespace dgdf {

// Planar float image in [0,1], channel-major layout [c][y][x].
struct Image {
  int w = 0, h = 0, c = 0;
  std::vector<float> px;

  Image() = default;
  Image(int width, int height, int channels, float fill = 0.0f)
      : w(width), h(height), c(channels),
        px(static_cast<size_t>(width) * height * channels, fill) {}

  std::int64_t numel() const { return static_cast<std::int64_t>(w) * h * c; }
  bool empty() const { return px.empty(); }

  float at(int ch, int y, int x) const {
    return px[(static_cast<size_t>(ch) * h + y) * w + x];
  }
  float& at(int ch, int y, int x) {
    return px[(static_cast<size_t>(ch) * h + y) * w + x];
  }
  const float* plane(int ch) const { return px.data() + static_cast<size_t>(ch) * h * w; }
  float* plane(int ch) { return px.data() + static_cast<size_t>(ch) * h * w; }

  void clamp01() {
    for (auto& v : px) v = std::min(1.0f, std::max(0.0f, v));
  }
};

inline Image clamp01(Image img) {
  img.clamp01();
  return img;
}

// Luma (Rec. 601 weights) as a single-channel image.
inline Image to_luma(const Image& img) {
  if (img.c == 1) return img;
  require_shape(img.c == 3, "to_luma: expected 1 or 3 channels");
  Image out(img.w, img.h, 1);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      out.at(0, y, x) = 0.299f * img.at(0, y, x) + 0.587f * img.at(1, y, x) +
                        0.114f * img.at(2, y, x);
  return out;
}

// ---------------------------------------------------- model-range mapping
// Images live in [0,1]; the diffusion model works in [-1,1].

inline Tensor image_to_model(const Image& img) {
  std::vector<float> v(img.px.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = 2.0f * img.px[i] - 1.0f;
  return Tensor::from(Shape4{1, img.c, img.h, img.w}, std::move(v));
}

inline Tensor images_to_model(const std::vector<Image>& imgs) {
  require(!imgs.empty(), "images_to_model: empty batch");
  const Image& first = imgs[0];
  std::vector<float> v;
  v.reserve(imgs.size() * first.px.size());
  for (const auto& img : imgs) {
    require_shape(img.w == first.w && img.h == first.h && img.c == first.c,
                  "images_to_model: heterogeneous batch");
    for (float p : img.px) v.push_back(2.0f * p - 1.0f);
  }
  return Tensor::from(Shape4{static_cast<int>(imgs.size()), first.c, first.h, first.w},
                      std::move(v));
}

inline Image model_to_image(const Tensor& t, int batch_index = 0) {
  const Shape4& s = t.shape();
  Image img(s.w, s.h, s.c);
  const float* src = t.data() + static_cast<std::int64_t>(batch_index) * s.c * s.h * s.w;
  for (size_t i = 0; i < img.px.size(); ++i)
    img.px[i] = std::min(1.0f, std::max(0.0f, 0.5f * (src[i] + 1.0f)));
  return img;
}

inline double mse(const Image& a, const Image& b) {
  require_shape(a.w == b.w && a.h == b.h && a.c == b.c, "mse: shape mismatch");
  double s = 0.0;
  for (size_t i = 0; i < a.px.size(); ++i) {
    double d = static_cast<double>(a.px[i]) - b.px[i];
    s += d * d;
  }
  return s / static_cast<double>(a.px.size());
}

}  // namespace dgdf
