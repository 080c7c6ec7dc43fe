#pragma once

// Sweep machinery: Frechet-distance-vs-t and PSNR-vs-t curves per pipeline
// kind. Common random numbers across the t grid (fixed degradation sample
// and fixed jump noise per image) so the curves are comparable point to
// point.

#include <fstream>
#include <string>
#include <vector>

#include "dgdf/synthesis.hpp"

namespace dgdf {

struct SweepRow {
  DegKind kind = DegKind::bicubic;
  int t = 0;
  double frechet = 0.0;
  double psnr_mean = 0.0;
  double psnr_std = 0.0;
  int n = 0;
};

inline std::vector<SweepRow> sweep_curves(const std::vector<Image>& hq_set,
                                          const FeatureStats& real_lq_stats,
                                          const NoisePredictor& model,
                                          const NoiseSchedule& sched,
                                          const std::vector<DegKind>& kinds,
                                          const std::vector<int>& t_grid,
                                          const DegradationRanges& ranges,
                                          const ExtractorKind& extractor, std::uint64_t seed,
                                          bool deterministic_reverse = false,
                                          int reverse_batch = 16) {
  require(!hq_set.empty(), "sweep_curves: empty HQ set");
  require(hq_set.size() >= 2, "sweep_curves: need at least 2 images for covariance fits");
  const int n = static_cast<int>(hq_set.size());
  std::vector<SweepRow> rows;

  for (size_t ki = 0; ki < kinds.size(); ++ki) {
    const DegKind kind = kinds[ki];
    const std::uint64_t base = static_cast<std::uint64_t>(ki) * 0x100000ull;

    // fixed degradation and jump noise per image, shared across the t grid
    std::vector<Tensor> x_models(static_cast<size_t>(n));
    std::vector<Image> initial(static_cast<size_t>(n));
    std::vector<Tensor> jump_eps(static_cast<size_t>(n));
    std::vector<Image> hq_refs(static_cast<size_t>(n));
    parallel_for(n, [&](std::int64_t i) {
      Rng deg_rng(seed, base + 2 * static_cast<std::uint64_t>(i));
      DegradationSample s = sample_pipeline(kind, deg_rng, ranges);
      Image x = apply(hq_set[static_cast<size_t>(i)], s);
      hq_refs[static_cast<size_t>(i)] =
          clamp01(resize_to(hq_set[static_cast<size_t>(i)], x.w, x.h, Filter::bicubic));
      x_models[static_cast<size_t>(i)] = image_to_model(x);
      Rng eps_rng(seed, base + 2 * static_cast<std::uint64_t>(i) + 1);
      jump_eps[static_cast<size_t>(i)] = randn(eps_rng, x_models[static_cast<size_t>(i)].shape());
      initial[static_cast<size_t>(i)] = std::move(x);
    }, 1);

    for (int t : t_grid) {
      std::vector<Image> lqs(static_cast<size_t>(n));
      if (t == 0) {
        for (int i = 0; i < n; ++i) lqs[static_cast<size_t>(i)] = initial[static_cast<size_t>(i)];
      } else {
        for (int lo = 0; lo < n; lo += reverse_batch) {
          int hi = std::min(n, lo + reverse_batch);
          std::vector<Image> batch_imgs;
          std::vector<float> data;
          const Shape4 one = x_models[0].shape();
          Shape4 bs{hi - lo, one.c, one.h, one.w};
          data.reserve(static_cast<size_t>(bs.numel()));
          for (int i = lo; i < hi; ++i) {
            Tensor x_t = forward_diffuse(x_models[static_cast<size_t>(i)], t,
                                         jump_eps[static_cast<size_t>(i)], sched);
            data.insert(data.end(), x_t.vec().begin(), x_t.vec().end());
          }
          Tensor batch = Tensor::from(bs, std::move(data));
          Rng rev_rng(seed, base + 0x80000ull + static_cast<std::uint64_t>(t) * 131 +
                                static_cast<std::uint64_t>(lo));
          Tensor rec = reverse_chain(batch, t, model, rev_rng, sched, deterministic_reverse);
          for (int i = lo; i < hi; ++i)
            lqs[static_cast<size_t>(i)] = model_to_image(rec, i - lo);
        }
      }
      SweepRow row;
      row.kind = kind;
      row.t = t;
      row.n = n;
      double sum = 0.0, sum2 = 0.0;
      for (int i = 0; i < n; ++i) {
        double p = psnr(hq_refs[static_cast<size_t>(i)], lqs[static_cast<size_t>(i)]);
        sum += p;
        sum2 += p * p;
      }
      row.psnr_mean = sum / n;
      row.psnr_std = std::sqrt(std::max(0.0, sum2 / n - row.psnr_mean * row.psnr_mean));
      row.frechet = frechet_distance(fit_stats(extract_features(lqs, extractor)), real_lq_stats);
      rows.push_back(row);
    }
  }
  return rows;
}

inline void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw io_error("cannot write sweep csv: " + path);
  f << "pipeline_kind,t,frechet,psnr_mean,psnr_std,n\n";
  char line[256];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%s,%d,%.6f,%.4f,%.4f,%d\n", kind_name(r.kind), r.t,
                  r.frechet, r.psnr_mean, r.psnr_std, r.n);
    f << line;
  }
}

struct SweepCsvRow {
  std::string kind;
  int t = 0;
  double frechet = 0.0;
  double psnr_mean = 0.0;
  double psnr_std = 0.0;
  int n = 0;
  bool has_frechet = false, has_psnr = false;
};

// Parses the sweep CSV format (used for plot tooling and format tests);
// empty numeric cells are permitted and flagged.
inline std::vector<SweepCsvRow> read_sweep_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw io_error("cannot open sweep csv: " + path);
  std::string line;
  do {
    if (!std::getline(f, line)) throw io_error("sweep csv: empty file " + path);
  } while (line.empty() || line[0] == '#');
  require(line.rfind("pipeline_kind,t,frechet,psnr_mean,psnr_std,n", 0) == 0,
          "sweep csv: unexpected header in " + path);
  std::vector<SweepCsvRow> rows;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    size_t start = 0;
    while (true) {
      size_t comma = line.find(',', start);
      cells.push_back(line.substr(start, comma == std::string::npos ? std::string::npos
                                                                    : comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    require(cells.size() == 6, "sweep csv: bad row: " + line);
    SweepCsvRow r;
    r.kind = cells[0];
    r.t = std::stoi(cells[1]);
    if (!cells[2].empty()) {
      r.frechet = std::stod(cells[2]);
      r.has_frechet = true;
    }
    if (!cells[3].empty()) {
      r.psnr_mean = std::stod(cells[3]);
      r.has_psnr = true;
    }
    if (!cells[4].empty()) r.psnr_std = std::stod(cells[4]);
    if (!cells[5].empty()) r.n = std::stoi(cells[5]);
    rows.push_back(std::move(r));
  }
  return rows;
}

// Spearman rank correlation between t and a response, for trend checks.
inline double spearman_rho(const std::vector<double>& xs, const std::vector<double>& ys) {
  require(xs.size() == ys.size() && xs.size() >= 2, "spearman: bad inputs");
  auto ranks = [](const std::vector<double>& v) {
    std::vector<size_t> idx(v.size());
    for (size_t i = 0; i < v.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    size_t i = 0;
    while (i < idx.size()) {
      size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
      for (size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  std::vector<double> rx = ranks(xs), ry = ranks(ys);
  double mx = 0, my = 0;
  for (size_t i = 0; i < rx.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= static_cast<double>(rx.size());
  my /= static_cast<double>(rx.size());
  double num = 0, dx = 0, dy = 0;
  for (size_t i = 0; i < rx.size(); ++i) {
    num += (rx[i] - mx) * (ry[i] - my);
    dx += (rx[i] - mx) * (rx[i] - mx);
    dy += (ry[i] - my) * (ry[i] - my);
  }
  if (dx == 0 || dy == 0) return 0.0;
  return num / std::sqrt(dx * dy);
}

}  // namespace dgdf
