#pragma once

// PSNR, SSIM and a Frechet distribution distance over pluggable feature
// extractors. Absolute distance values depend on the extractor and are not
// comparable across feature choices; trends are.

#include <cmath>
#include <vector>

#include "dgdf/degrade.hpp"
#include "dgdf/image.hpp"
#include "dgdf/unet.hpp"

namespace dgdf {

// 10*log10(max^2 / MSE), capped at 99 dB (identical-input convention).
inline double psnr(const Image& a, const Image& b, double max_val = 1.0) {
  double m = mse(a, b);
  if (m <= 0.0) return 99.0;
  return std::min(99.0, 10.0 * std::log10(max_val * max_val / m));
}

// Mean local SSIM on luma; 11x11 Gaussian window (sigma 1.5), K1=0.01,
// K2=0.03, L=1, valid window positions only.
inline double ssim(const Image& a, const Image& b) {
  require_shape(a.w == b.w && a.h == b.h, "ssim: size mismatch");
  constexpr int kWin = 11;
  require_shape(a.w >= kWin && a.h >= kWin, "ssim: image smaller than the 11x11 window");
  Image la = to_luma(a), lb = to_luma(b);

  static const auto window = [] {
    std::array<double, kWin * kWin> w{};
    const double sigma = 1.5;
    double total = 0.0;
    for (int y = 0; y < kWin; ++y)
      for (int x = 0; x < kWin; ++x) {
        double dy = y - kWin / 2, dx = x - kWin / 2;
        w[static_cast<size_t>(y * kWin + x)] = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
        total += w[static_cast<size_t>(y * kWin + x)];
      }
    for (auto& v : w) v /= total;
    return w;
  }();

  constexpr double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
  double total = 0.0;
  std::int64_t count = 0;
  for (int oy = 0; oy + kWin <= a.h; ++oy)
    for (int ox = 0; ox + kWin <= a.w; ++ox) {
      double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
      for (int y = 0; y < kWin; ++y)
        for (int x = 0; x < kWin; ++x) {
          double w = window[static_cast<size_t>(y * kWin + x)];
          double va = la.at(0, oy + y, ox + x);
          double vb = lb.at(0, oy + y, ox + x);
          mx += w * va;
          my += w * vb;
          sxx += w * va * va;
          syy += w * vb * vb;
          sxy += w * va * vb;
        }
      double vx = sxx - mx * mx, vy = syy - my * my, cxy = sxy - mx * my;
      double val = ((2 * mx * my + C1) * (2 * cxy + C2)) /
                   ((mx * mx + my * my + C1) * (vx + vy + C2));
      total += val;
      ++count;
    }
  return total / static_cast<double>(count);
}

// ------------------------------------------------------------ feature stats

struct FeatureStats {
  int d = 0;
  std::int64_t sample_count = 0;
  std::vector<double> mean;  // d
  std::vector<double> cov;   // d*d, symmetric

  bool undersampled() const { return sample_count < d; }
};

struct PatchStatsConfig {
  int patch_size = 16;
  int stride = 16;
  int orient_bins = 4;

  int features_per_patch() const { return 2 + orient_bins; }
  int patches(int w, int h) const {
    if (w < patch_size || h < patch_size) return 0;
    return ((w - patch_size) / stride + 1) * ((h - patch_size) / stride + 1);
  }
  int dim(int w, int h) const { return patches(w, h) * features_per_patch(); }
};

// Per-patch luma mean, luma std and a magnitude-weighted orientation
// histogram of gradients; the fixed-dimension stand-in for a learned
// embedding.
inline std::vector<double> patch_stats_features(const Image& img, const PatchStatsConfig& cfg) {
  require(cfg.patch_size >= 2 && cfg.stride >= 1 && cfg.orient_bins >= 1,
          "patch stats: bad config");
  require_shape(img.w >= cfg.patch_size && img.h >= cfg.patch_size,
                "patch stats: image smaller than patch");
  Image luma = to_luma(img);
  std::vector<double> out;
  out.reserve(static_cast<size_t>(cfg.dim(img.w, img.h)));
  const double pi = 3.14159265358979323846;
  for (int py = 0; py + cfg.patch_size <= img.h; py += cfg.stride)
    for (int px = 0; px + cfg.patch_size <= img.w; px += cfg.stride) {
      double mean = 0.0;
      const int P = cfg.patch_size;
      for (int y = 0; y < P; ++y)
        for (int x = 0; x < P; ++x) mean += luma.at(0, py + y, px + x);
      mean /= P * P;
      double var = 0.0;
      for (int y = 0; y < P; ++y)
        for (int x = 0; x < P; ++x) {
          double d = luma.at(0, py + y, px + x) - mean;
          var += d * d;
        }
      var /= P * P;
      out.push_back(mean);
      out.push_back(std::sqrt(var));
      std::vector<double> hist(static_cast<size_t>(cfg.orient_bins), 0.0);
      for (int y = 0; y < P - 1; ++y)
        for (int x = 0; x < P - 1; ++x) {
          double gx = luma.at(0, py + y, px + x + 1) - luma.at(0, py + y, px + x);
          double gy = luma.at(0, py + y + 1, px + x) - luma.at(0, py + y, px + x);
          double mag = std::sqrt(gx * gx + gy * gy);
          if (mag <= 0.0) continue;
          double ang = std::atan2(gy, gx);
          if (ang < 0) ang += pi;  // unsigned orientation in [0, pi)
          if (ang >= pi) ang -= pi;
          int bin = std::min(cfg.orient_bins - 1,
                             static_cast<int>(ang / pi * cfg.orient_bins));
          hist[static_cast<size_t>(bin)] += mag;
        }
      for (double hv : hist) out.push_back(hv / ((P - 1) * (P - 1)));
    }
  return out;
}

struct ExtractorKind {
  enum class Type { patch_stats, denoiser };
  Type type = Type::patch_stats;
  PatchStatsConfig patch;
  const UNet* model = nullptr;  // denoiser kind only
  int denoiser_t = 50;

  int dim(int w, int h) const {
    if (type == Type::patch_stats) return patch.dim(w, h);
    require(model != nullptr, "denoiser extractor needs a model");
    int c_last = model->config().channels_at(model->config().levels() - 1);
    return 2 * c_last;
  }
};

inline std::vector<double> extract_features_one(const Image& img, const ExtractorKind& kind);

inline std::vector<std::vector<double>> extract_features(const std::vector<Image>& images,
                                                         const ExtractorKind& kind) {
  require(!images.empty(), "extract_features: empty image set");
  std::vector<std::vector<double>> rows(images.size());
  parallel_for(static_cast<std::int64_t>(images.size()), [&](std::int64_t i) {
    rows[static_cast<size_t>(i)] = extract_features_one(images[static_cast<size_t>(i)], kind);
  }, 1);
  for (const auto& r : rows)
    require_shape(r.size() == rows[0].size(), "extract_features: inconsistent dims");
  return rows;
}

// Unbiased covariance fit; requires at least two samples.
inline FeatureStats fit_stats(const std::vector<std::vector<double>>& rows) {
  require(rows.size() >= 2, "fit_stats: need at least 2 samples");
  FeatureStats s;
  s.d = static_cast<int>(rows[0].size());
  s.sample_count = static_cast<std::int64_t>(rows.size());
  s.mean.assign(static_cast<size_t>(s.d), 0.0);
  for (const auto& r : rows)
    for (int j = 0; j < s.d; ++j) s.mean[static_cast<size_t>(j)] += r[static_cast<size_t>(j)];
  for (auto& m : s.mean) m /= static_cast<double>(rows.size());
  s.cov.assign(static_cast<size_t>(s.d) * s.d, 0.0);
  for (const auto& r : rows)
    for (int i = 0; i < s.d; ++i) {
      double di = r[static_cast<size_t>(i)] - s.mean[static_cast<size_t>(i)];
      for (int j = i; j < s.d; ++j) {
        double dj = r[static_cast<size_t>(j)] - s.mean[static_cast<size_t>(j)];
        s.cov[static_cast<size_t>(i) * s.d + j] += di * dj;
      }
    }
  const double denom = static_cast<double>(rows.size()- 1);
  for (int i = 0; i < s.d; ++i)
    for (int j = i; j < s.d; ++j) {
      double v = s.cov[static_cast<size_t>(i) * s.d + j] / denom;
      s.cov[static_cast<size_t>(i) * s.d + j] = v;
      s.cov[static_cast<size_t>(j) * s.d + i] = v;
    }
  return s;
}

// --------------------------------------------------------------- eigen/sqrt

namespace eigen_detail {

// Cyclic Jacobi for symmetric matrices; A is destroyed, eigenvalues land on
// the diagonal.
inline void jacobi(std::vector<double>& A, int d, std::vector<double>& evals) {
  double frob2 = 0.0;
  for (double v : A) frob2 += v * v;
  const double stop = std::max(1e-300, 1e-30 * frob2);
  const int max_sweeps = 100;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < d; ++p)
      for (int q = p + 1; q < d; ++q) off += A[static_cast<size_t>(p) * d + q] * A[static_cast<size_t>(p) * d + q];
    if (off < stop) break;
    for (int p = 0; p < d; ++p)
      for (int q = p + 1; q < d; ++q) {
        double apq = A[static_cast<size_t>(p) * d + q];
        if (std::abs(apq) < 1e-300) continue;
        double app = A[static_cast<size_t>(p) * d + p];
        double aqq = A[static_cast<size_t>(q) * d + q];
        double theta = (aqq - app) / (2.0 * apq);
        double t = (theta >= 0 ? 1.0 : -1.0) /
                   (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        for (int k = 0; k < d; ++k) {
          double akp = A[static_cast<size_t>(k) * d + p];
          double akq = A[static_cast<size_t>(k) * d + q];
          A[static_cast<size_t>(k) * d + p] = c * akp - s * akq;
          A[static_cast<size_t>(k) * d + q] = s * akp + c * akq;
        }
        for (int k = 0; k < d; ++k) {
          double apk = A[static_cast<size_t>(p) * d + k];
          double aqk = A[static_cast<size_t>(q) * d + k];
          A[static_cast<size_t>(p) * d + k] = c * apk - s * aqk;
          A[static_cast<size_t>(q) * d + k] = s * apk + c * aqk;
        }
      }
  }
  evals.resize(static_cast<size_t>(d));
  for (int i = 0; i < d; ++i) evals[static_cast<size_t>(i)] = A[static_cast<size_t>(i) * d + i];
}

// eigendecomposition with vectors: V columns are eigenvectors
inline void jacobi_full(std::vector<double> A, int d, std::vector<double>& evals,
                        std::vector<double>& V) {
  V.assign(static_cast<size_t>(d) * d, 0.0);
  for (int i = 0; i < d; ++i) V[static_cast<size_t>(i) * d + i] = 1.0;
  double frob2 = 0.0;
  for (double v : A) frob2 += v * v;
  const double stop = std::max(1e-300, 1e-30 * frob2);
  const int max_sweeps = 100;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < d; ++p)
      for (int q = p + 1; q < d; ++q) off += A[static_cast<size_t>(p) * d + q] * A[static_cast<size_t>(p) * d + q];
    if (off < stop) break;
    for (int p = 0; p < d; ++p)
      for (int q = p + 1; q < d; ++q) {
        double apq = A[static_cast<size_t>(p) * d + q];
        if (std::abs(apq) < 1e-300) continue;
        double app = A[static_cast<size_t>(p) * d + p];
        double aqq = A[static_cast<size_t>(q) * d + q];
        double theta = (aqq - app) / (2.0 * apq);
        double t = (theta >= 0 ? 1.0 : -1.0) /
                   (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        for (int k = 0; k < d; ++k) {
          double akp = A[static_cast<size_t>(k) * d + p];
          double akq = A[static_cast<size_t>(k) * d + q];
          A[static_cast<size_t>(k) * d + p] = c * akp - s * akq;
          A[static_cast<size_t>(k) * d + q] = s * akp + c * akq;
        }
        for (int k = 0; k < d; ++k) {
          double apk = A[static_cast<size_t>(p) * d + k];
          double aqk = A[static_cast<size_t>(q) * d + k];
          A[static_cast<size_t>(p) * d + k] = c * apk - s * aqk;
          A[static_cast<size_t>(q) * d + k] = s * apk + c * aqk;
        }
        for (int k = 0; k < d; ++k) {
          double vkp = V[static_cast<size_t>(k) * d + p];
          double vkq = V[static_cast<size_t>(k) * d + q];
          V[static_cast<size_t>(k) * d + p] = c * vkp - s * vkq;
          V[static_cast<size_t>(k) * d + q] = s * vkp + c * vkq;
        }
      }
  }
  evals.resize(static_cast<size_t>(d));
  for (int i = 0; i < d; ++i) evals[static_cast<size_t>(i)] = A[static_cast<size_t>(i) * d + i];
}

inline std::vector<double> matmul(const std::vector<double>& A, const std::vector<double>& B,
                                  int d) {
  std::vector<double> C(static_cast<size_t>(d) * d, 0.0);
  for (int i = 0; i < d; ++i)
    for (int k = 0; k < d; ++k) {
      double a = A[static_cast<size_t>(i) * d + k];
      if (a == 0.0) continue;
      for (int j = 0; j < d; ++j) C[static_cast<size_t>(i) * d + j] += a * B[static_cast<size_t>(k) * d + j];
    }
  return C;
}

// symmetric PSD square root via eigendecomposition
inline std::vector<double> sqrtm_psd(const std::vector<double>& M, int d) {
  std::vector<double> evals, V;
  jacobi_full(M, d, evals, V);
  for (double& l : evals) {
    if (l < -1e-8) throw value_error("frechet_distance: matrix not PSD after clamping");
    l = l < 0.0 ? 0.0 : std::sqrt(l);
  }
  // V diag(sqrt(l)) V^T
  std::vector<double> S(static_cast<size_t>(d) * d, 0.0);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      double acc = 0.0;
      for (int k = 0; k < d; ++k)
        acc += V[static_cast<size_t>(i) * d + k] * evals[static_cast<size_t>(k)] *
               V[static_cast<size_t>(j) * d + k];
      S[static_cast<size_t>(i) * d + j] = acc;
    }
  return S;
}

}  // namespace eigen_detail

// ||mu1-mu2||^2 + Tr(C1 + C2 - 2 (C1 C2)^(1/2)); the cross term is computed
// as Tr sqrt(S1 C2 S1) with S1 = C1^(1/2). Covariances are regularized by
// 1e-6 I before the square roots.
inline double frechet_distance(const FeatureStats& s1, const FeatureStats& s2) {
  require_shape(s1.d == s2.d, "frechet_distance: dimension mismatch");
  const int d = s1.d;
  require(d >= 1, "frechet_distance: empty stats");
  // symmetry tolerance on inputs
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j) {
      require(std::abs(s1.cov[static_cast<size_t>(i) * d + j] - s1.cov[static_cast<size_t>(j) * d + i]) < 1e-9,
              "frechet_distance: covariance 1 not symmetric");
      require(std::abs(s2.cov[static_cast<size_t>(i) * d + j] - s2.cov[static_cast<size_t>(j) * d + i]) < 1e-9,
              "frechet_distance: covariance 2 not symmetric");
    }
  std::vector<double> c1 = s1.cov, c2 = s2.cov;
  for (int i = 0; i < d; ++i) {
    c1[static_cast<size_t>(i) * d + i] += 1e-6;
    c2[static_cast<size_t>(i) * d + i] += 1e-6;
  }
  double mean_term = 0.0;
  for (int i = 0; i < d; ++i) {
    double dm = s1.mean[static_cast<size_t>(i)] - s2.mean[static_cast<size_t>(i)];
    mean_term += dm * dm;
  }
  using namespace eigen_detail;
  std::vector<double> S1 = sqrtm_psd(c1, d);
  std::vector<double> inner = matmul(matmul(S1, c2, d), S1, d);
  // symmetrize against round-off before the second decomposition
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j) {
      double v = 0.5 * (inner[static_cast<size_t>(i) * d + j] + inner[static_cast<size_t>(j) * d + i]);
      inner[static_cast<size_t>(i) * d + j] = v;
      inner[static_cast<size_t>(j) * d + i] = v;
    }
  std::vector<double> evals;
  jacobi(inner, d, evals);
  double tr_sqrt = 0.0;
  for (double l : evals) {
    if (l < -1e-8) throw value_error("frechet_distance: inner matrix not PSD after clamping");
    tr_sqrt += l < 0.0 ? 0.0 : std::sqrt(l);
  }
  double tr1 = 0.0, tr2 = 0.0;
  for (int i = 0; i < d; ++i) {
    tr1 += c1[static_cast<size_t>(i) * d + i];
    tr2 += c2[static_cast<size_t>(i) * d + i];
  }
  double fd = mean_term + tr1 + tr2 - 2.0 * tr_sqrt;
  return fd < 0.0 ? 0.0 : fd;
}

// ---------------------------------------------------------- extractor impl

inline std::vector<double> extract_features_one(const Image& img, const ExtractorKind& kind) {
  if (kind.type == ExtractorKind::Type::patch_stats) return patch_stats_features(img, kind.patch);
  require(kind.model != nullptr, "denoiser extractor needs a model");
  // channel mean/std of the deepest feature map at a fixed mid-chain t
  Tensor x = image_to_model(img);
  std::vector<int> ts{kind.denoiser_t};
  Tensor out = kind.model->bottleneck(x, ts);
  const Shape4& s = out.shape();
  std::vector<double> feat;
  feat.reserve(static_cast<size_t>(2 * s.c));
  const std::int64_t plane = static_cast<std::int64_t>(s.h) * s.w;
  for (int c = 0; c < s.c; ++c) {
    const float* p = out.data() + static_cast<std::int64_t>(c) * plane;
    double mean = 0.0;
    for (std::int64_t i = 0; i < plane; ++i) mean += p[i];
    mean /= static_cast<double>(plane);
    double var = 0.0;
    for (std::int64_t i = 0; i < plane; ++i) var += (p[i] - mean) * (p[i] - mean);
    var /= static_cast<double>(plane);
    feat.push_back(mean);
    feat.push_back(std::sqrt(var));
  }
  return feat;
}

}  // namespace dgdf
