#pragma once

// Dataset manifests, patch cropping, procedural clean textures and the toy
// degraded-image corpus that stands in for a crawled real-LQ dataset. The
// corpus "heavy" profile deliberately uses parameter ranges disjoint from
// the synthesis pipelines on three axes (blur sigma, noise sigma and JPEG
// quality), so distribution-gap experiments against it are non-circular.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dgdf/degrade.hpp"
#include "dgdf/png.hpp"
#include "dgdf/serde.hpp"

namespace dgdf {

struct ManifestEntry {
  std::string path;  // relative to root
  int width = 0, height = 0;
  std::string split = "train";
};

struct DatasetManifest {
  std::string root;
  std::uint64_t master_seed = 0;
  std::vector<ManifestEntry> entries;
};

inline void save_manifest(const DatasetManifest& m, const std::string& path) {
  ojson j;
  j["root"] = m.root;
  j["master_seed"] = u64_str(m.master_seed);
  j["entries"] = ojson::array();
  for (const auto& e : m.entries) {
    ojson je;
    je["path"] = e.path;
    je["width"] = e.width;
    je["height"] = e.height;
    je["split"] = e.split;
    j["entries"].push_back(je);
  }
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw io_error("cannot write manifest: " + path);
  f << j.dump(2) << "\n";
}

inline DatasetManifest load_manifest(const std::string& path, bool verify_decode = false) {
  std::ifstream f(path);
  if (!f) throw io_error("cannot open manifest: " + path);
  ojson j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    throw io_error("manifest parse error: " + std::string(e.what()));
  }
  DatasetManifest m;
  m.root = j.at("root").get<std::string>();
  m.master_seed = u64_parse(j.at("master_seed").get<std::string>());
  std::vector<std::string> seen;
  for (const auto& je : j.at("entries")) {
    ManifestEntry e;
    e.path = je.at("path").get<std::string>();
    e.width = je.at("width").get<int>();
    e.height = je.at("height").get<int>();
    e.split = je.at("split").get<std::string>();
    for (const auto& s : seen)
      if (s == e.path) throw io_error("manifest: duplicate path " + e.path);
    seen.push_back(e.path);
    std::filesystem::path full = std::filesystem::path(m.root) / e.path;
    if (!std::filesystem::exists(full))
      throw io_error("manifest: missing file " + full.string());
    if (verify_decode) load_image(full.string());
    m.entries.push_back(std::move(e));
  }
  return m;
}

inline std::vector<Image> load_manifest_images(const DatasetManifest& m) {
  std::vector<Image> out(m.entries.size());
  parallel_for(static_cast<std::int64_t>(m.entries.size()), [&](std::int64_t i) {
    std::filesystem::path full =
        std::filesystem::path(m.root) / m.entries[static_cast<size_t>(i)].path;
    out[static_cast<size_t>(i)] = load_image(full.string());
  }, 1);
  return out;
}

// All PNGs directly inside a directory, sorted by filename.
inline std::vector<std::string> list_pngs(const std::string& dir) {
  std::vector<std::string> files;
  if (!std::filesystem::is_directory(dir)) throw io_error("not a directory: " + dir);
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".png")
      files.push_back(entry.path().string());
  std::sort(files.begin(), files.end());
  return files;
}

inline std::vector<Image> load_image_dir(const std::string& dir) {
  auto files = list_pngs(dir);
  require(!files.empty(), "no .png files in " + dir);
  std::vector<Image> out(files.size());
  parallel_for(static_cast<std::int64_t>(files.size()), [&](std::int64_t i) {
    out[static_cast<size_t>(i)] = load_image(files[static_cast<size_t>(i)]);
  }, 1);
  return out;
}

// ------------------------------------------------------------ random crop

inline Image random_crop(const Image& img, int size, Rng& rng) {
  require(size >= 1, "random_crop: bad size");
  require_shape(img.w >= size && img.h >= size,
                "random_crop: image " + std::to_string(img.w) + "x" + std::to_string(img.h) +
                    " smaller than crop " + std::to_string(size));
  int x0 = static_cast<int>(rand_uniform_int(rng, 0, img.w - size));
  int y0 = static_cast<int>(rand_uniform_int(rng, 0, img.h - size));
  Image out(size, size, img.c);
  for (int c = 0; c < img.c; ++c)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) out.at(c, y, x) = img.at(c, y0 + y, x0 + x);
  return out;
}

// ------------------------------------------------------ procedural textures

// Clean synthetic source image: smooth gradients, solid shapes, stripes and
// a touch of sinusoidal texture. Gives pipelines edges and flat regions to
// degrade.
inline Image procedural_texture(Rng& rng, int size) {
  Image img(size, size, 3);
  // bilinear background from random corner colors
  float corners[4][3];
  for (auto& corner : corners)
    for (float& v : corner) v = 0.15f + 0.7f * rng.next_float();
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      float fx = static_cast<float>(x) / (size - 1);
      float fy = static_cast<float>(y) / (size - 1);
      for (int c = 0; c < 3; ++c) {
        float top = corners[0][c] * (1 - fx) + corners[1][c] * fx;
        float bot = corners[2][c] * (1 - fx) + corners[3][c] * fx;
        img.at(c, y, x) = top * (1 - fy) + bot * fy;
      }
    }
  // sinusoidal texture component
  {
    float ax = 2.0f + 10.0f * rng.next_float();
    float ay = 2.0f + 10.0f * rng.next_float();
    float phase = 6.28318f * rng.next_float();
    float amp = 0.04f + 0.08f * rng.next_float();
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        float v = amp * std::sin(ax * x / static_cast<float>(size) * 6.28318f +
                                 ay * y / static_cast<float>(size) + phase);
        for (int c = 0; c < 3; ++c) img.at(c, y, x) += v;
      }
  }
  // solid shapes: rectangles, disks, stripes
  int shapes = 3 + static_cast<int>(rng.next_int(0, 3));
  for (int s = 0; s < shapes; ++s) {
    float col[3] = {rng.next_float(), rng.next_float(), rng.next_float()};
    int shape_type = static_cast<int>(rng.next_int(0, 2));
    if (shape_type == 0) {
      int x0 = static_cast<int>(rng.next_int(0, size - 2));
      int y0 = static_cast<int>(rng.next_int(0, size - 2));
      int x1 = static_cast<int>(rng.next_int(x0 + 1, size - 1));
      int y1 = static_cast<int>(rng.next_int(y0 + 1, size - 1));
      for (int c = 0; c < 3; ++c)
        for (int y = y0; y <= y1; ++y)
          for (int x = x0; x <= x1; ++x) img.at(c, y, x) = col[c];
    } else if (shape_type == 1) {
      int cx = static_cast<int>(rng.next_int(0, size - 1));
      int cy = static_cast<int>(rng.next_int(0, size - 1));
      int rad = 2 + static_cast<int>(rng.next_int(0, size / 4));
      for (int y = std::max(0, cy - rad); y <= std::min(size - 1, cy + rad); ++y)
        for (int x = std::max(0, cx - rad); x <= std::min(size - 1, cx + rad); ++x)
          if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= rad * rad)
            for (int c = 0; c < 3; ++c) img.at(c, y, x) = col[c];
    } else {
      // diagonal stripes
      int period = 3 + static_cast<int>(rng.next_int(0, 6));
      int dir = static_cast<int>(rng.next_int(0, 1));
      float blend = 0.5f + 0.5f * rng.next_float();
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          int k = dir ? (x + y) : (x - y + size);
          if ((k / period) % 2 == 0)
            for (int c = 0; c < 3; ++c)
              img.at(c, y, x) = (1 - blend) * img.at(c, y, x) + blend * col[c];
        }
    }
  }
  // micro-texture
  const Rng snap = rng;
  for (size_t i = 0; i < img.px.size(); ++i)
    img.px[i] += 0.01f * static_cast<float>(snap.normal_at(static_cast<std::uint64_t>(i)));
  rng.skip(2 * static_cast<std::uint64_t>(img.px.size()));
  img.clamp01();
  return img;
}

inline std::vector<Image> procedural_clean_set(std::uint64_t seed, int count, int size) {
  std::vector<Image> out(static_cast<size_t>(count));
  parallel_for(count, [&](std::int64_t i) {
    Rng rng(seed, 0x10000000ull + static_cast<std::uint64_t>(i));
    out[static_cast<size_t>(i)] = procedural_texture(rng, size);
  }, 1);
  return out;
}

// ------------------------------------------------------------- toy corpus

// Held-out heavy profile for the target corpus: much stronger blur than any
// synthesis pipeline produces — the dominant, provably disjoint axes — plus
// a moderate noise floor and near-lossless compression that give the corpus
// a concrete texture signature without pulling it back toward the synthesis
// families. Disjoint from DegradationRanges defaults on three axes:
//   blur sigma  [3.5, 6.0] vs synthesis [0.2, 3.0]
//   kernel size {23..31}   vs synthesis {7..21}
//   jpeg qual   [96, 100]  vs synthesis [30, 95]
inline DegradationRanges heavy_corpus_ranges(int clean_size, int lq_size) {
  DegradationRanges r;
  r.blur_sigma_min = 3.5;
  r.blur_sigma_max = 6.0;
  r.kernel_min = 23;
  r.kernel_max = 31;
  r.noise_min = 4.0 / 255.0;
  r.noise_max = 8.0 / 255.0;
  r.jpeg_min = 96;
  r.jpeg_max = 100;
  r.hq_size = clean_size;
  r.lq_size = lq_size;
  return r;
}

struct ToyDidOptions {
  int count = 500;
  int clean_size = 64;
  int lq_size = 32;
  std::string severity = "heavy";  // "heavy" or "none"
  std::uint64_t seed = 0;
};

struct ToyDidResult {
  DatasetManifest lq_manifest;
  DatasetManifest clean_manifest;
};

// Builds the toy degraded-image corpus: procedural clean sources (or a
// provided clean set) degraded by the held-out heavy family. severity
// "none" copies the clean set through unchanged as a degenerate control.
inline ToyDidResult make_toy_did(const std::vector<Image>& clean_input,
                                 const std::string& out_dir, const ToyDidOptions& opt) {
  require(opt.severity == "heavy" || opt.severity == "none",
          "make_toy_did: unknown severity profile " + opt.severity);
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "clean");
  fs::create_directories(fs::path(out_dir) / "lq");

  std::vector<Image> clean = clean_input;
  if (clean.empty()) clean = procedural_clean_set(opt.seed, opt.count, opt.clean_size);
  const int n = static_cast<int>(clean.size());
  for (const auto& img : clean)
    require_shape(img.w == opt.clean_size && img.h == opt.clean_size,
                  "make_toy_did: clean images must be " + std::to_string(opt.clean_size) +
                      " square");

  DegradationRanges ranges = heavy_corpus_ranges(opt.clean_size, opt.lq_size);
  std::vector<Image> lq(static_cast<size_t>(n));
  std::vector<DegradationSample> samples(static_cast<size_t>(n));
  parallel_for(n, [&](std::int64_t i) {
    if (opt.severity == "none") {
      lq[static_cast<size_t>(i)] = clean[static_cast<size_t>(i)];
      return;
    }
    Rng rng(opt.seed, 0x20000000ull + static_cast<std::uint64_t>(i));
    samples[static_cast<size_t>(i)] = sample_pipeline(DegKind::classical, rng, ranges);
    lq[static_cast<size_t>(i)] = apply(clean[static_cast<size_t>(i)], samples[static_cast<size_t>(i)]);
  }, 1);

  ToyDidResult res;
  res.lq_manifest.root = out_dir;
  res.lq_manifest.master_seed = opt.seed;
  res.clean_manifest.root = out_dir;
  res.clean_manifest.master_seed = opt.seed;
  char name[32];
  for (int i = 0; i < n; ++i) {
    std::snprintf(name, sizeof(name), "clean/%05d.png", i);
    save_image(clean[static_cast<size_t>(i)], (fs::path(out_dir) / name).string());
    res.clean_manifest.entries.push_back(
        ManifestEntry{name, clean[static_cast<size_t>(i)].w, clean[static_cast<size_t>(i)].h, "clean"});
    std::snprintf(name, sizeof(name), "lq/%05d.png", i);
    save_image(lq[static_cast<size_t>(i)], (fs::path(out_dir) / name).string());
    res.lq_manifest.entries.push_back(
        ManifestEntry{name, lq[static_cast<size_t>(i)].w, lq[static_cast<size_t>(i)].h, "train"});
  }
  save_manifest(res.lq_manifest, (fs::path(out_dir) / "manifest.json").string());
  save_manifest(res.clean_manifest, (fs::path(out_dir) / "clean_manifest.json").string());
  return res;
}

}  // namespace dgdf
