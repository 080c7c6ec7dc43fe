#pragma once

// End-to-end training-pair generator: handcrafted degradation, closed-form
// jump to x_t, learned reverse denoising, structural-consistency guard, and
// a provenance manifest that makes every LQ exactly reconstructible.

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "dgdf/checkpoint.hpp"
#include "dgdf/dataset.hpp"
#include "dgdf/diffusion.hpp"
#include "dgdf/metrics.hpp"
#include "dgdf/serde.hpp"

namespace dgdf {

struct SynthesisConfig {
  DegKind kind = DegKind::highorder;
  int t_min = 0;
  int t_max = 500;  // face profile; the natural-image profile uses 250
  double psnr_guard_db = 24.0;
  bool guard_enabled = true;
  int max_retries = 3;  // halve t on each guard failure
  bool deterministic_reverse = false;
  DegradationRanges ranges;
};

struct GuardResult {
  bool pass = false;
  double measured_db = 0.0;
};

// PSNR of the LQ against the HQ bicubic-resized to LQ resolution (clamped:
// the Keys kernel overshoots on strong edges, and PSNR assumes [0,1]).
inline GuardResult structure_guard(const Image& hq, const Image& lq, double guard_db) {
  Image ref = clamp01(resize_to(hq, lq.w, lq.h, Filter::bicubic));
  GuardResult g;
  g.measured_db = psnr(ref, lq);
  g.pass = g.measured_db >= guard_db;
  return g;
}

struct PairMeta {
  int index = 0;
  std::string hq_path, lq_path;
  bool accepted = false;
  std::string reject_reason;
  int t_drawn = 0, t_used = 0;
  int retries = 0;
  double guard_psnr_db = 0.0;
  DegradationSample degradation;
  std::uint64_t master_seed = 0;
  std::uint64_t deg_stream = 0, noise_stream = 0;
  std::uint64_t noise_counter = 0;  // rng position of the accepted attempt
};

struct SynthesisResult {
  Image lq;
  PairMeta meta;
};

// Streams are derived from (master seed, image index); the noise counter of
// the final attempt is recorded so the jump and reverse noise can be
// replayed from the manifest alone.
inline SynthesisResult synthesize_lq(const Image& hq, const NoisePredictor& model,
                                     const NoiseSchedule& sched, const SynthesisConfig& cfg,
                                     std::uint64_t master_seed, int image_index) {
  require(cfg.t_min >= 0 && cfg.t_min <= cfg.t_max && cfg.t_max <= sched.T,
          "synthesize_lq: need 0 <= t_min <= t_max <= T");
  SynthesisResult out;
  PairMeta& meta = out.meta;
  meta.index = image_index;
  meta.master_seed = master_seed;
  meta.deg_stream = 2 * static_cast<std::uint64_t>(image_index);
  meta.noise_stream = meta.deg_stream + 1;

  Rng deg_rng(master_seed, meta.deg_stream);
  Rng noise_rng(master_seed, meta.noise_stream);

  meta.degradation = sample_pipeline(cfg.kind, deg_rng, cfg.ranges);
  Image x = apply(hq, meta.degradation);

  meta.t_drawn = static_cast<int>(rand_uniform_int(noise_rng, cfg.t_min, cfg.t_max));
  int t = meta.t_drawn;
  Tensor x_model = image_to_model(x);
  for (int attempt = 0;; ++attempt) {
    meta.t_used = t;
    meta.retries = attempt;
    meta.noise_counter = noise_rng.counter();
    Image lq;
    if (t == 0) {
      lq = x;
    } else {
      DiffusedSample z = diffuse_from_initial_lq(x_model, t, noise_rng, sched);
      Tensor r = reverse_chain(z.x_t, t, model, noise_rng, sched, cfg.deterministic_reverse);
      lq = model_to_image(r);
    }
    GuardResult g = structure_guard(hq, lq, cfg.psnr_guard_db);
    meta.guard_psnr_db = g.measured_db;
    if (!cfg.guard_enabled || g.pass) {
      meta.accepted = true;
      out.lq = std::move(lq);
      return out;
    }
    if (attempt >= cfg.max_retries || t == 0) {
      meta.accepted = false;
      meta.reject_reason = "structure guard below " + std::to_string(cfg.psnr_guard_db) +
                           " dB after " + std::to_string(attempt) + " retries";
      out.lq = std::move(lq);  // last attempt, for inspection
      return out;
    }
    t /= 2;
  }
}

// Exact reconstruction of an accepted pair from its manifest record.
inline Image resynthesize_lq(const Image& hq, const PairMeta& meta, const NoisePredictor& model,
                             const NoiseSchedule& sched, bool deterministic_reverse) {
  Image x = apply(hq, meta.degradation);
  if (meta.t_used == 0) return x;
  Rng noise_rng(meta.master_seed, meta.noise_stream, meta.noise_counter);
  Tensor x_model = image_to_model(x);
  DiffusedSample z = diffuse_from_initial_lq(x_model, meta.t_used, noise_rng, sched);
  Tensor r = reverse_chain(z.x_t, meta.t_used, model, noise_rng, sched, deterministic_reverse);
  return model_to_image(r);
}

struct PairManifest {
  std::string version = DGDF_VERSION_STRING;
  std::uint64_t master_seed = 0;
  std::string checkpoint_hash;
  SynthesisConfig config;
  std::vector<PairMeta> pairs;
};

inline ojson pair_meta_to_json(const PairMeta& m) {
  ojson j;
  j["index"] = m.index;
  j["hq_path"] = m.hq_path;
  j["lq_path"] = m.lq_path;
  j["accepted"] = m.accepted;
  j["reject_reason"] = m.reject_reason;
  j["t_drawn"] = m.t_drawn;
  j["t_used"] = m.t_used;
  j["retries"] = m.retries;
  j["guard_psnr_db"] = m.guard_psnr_db;
  j["master_seed"] = u64_str(m.master_seed);
  j["deg_stream"] = u64_str(m.deg_stream);
  j["noise_stream"] = u64_str(m.noise_stream);
  j["noise_counter"] = u64_str(m.noise_counter);
  j["degradation"] = sample_to_json(m.degradation);
  return j;
}

inline PairMeta pair_meta_from_json(const ojson& j) {
  PairMeta m;
  m.index = j.at("index").get<int>();
  m.hq_path = j.at("hq_path").get<std::string>();
  m.lq_path = j.at("lq_path").get<std::string>();
  m.accepted = j.at("accepted").get<bool>();
  m.reject_reason = j.at("reject_reason").get<std::string>();
  m.t_drawn = j.at("t_drawn").get<int>();
  m.t_used = j.at("t_used").get<int>();
  m.retries = j.at("retries").get<int>();
  m.guard_psnr_db = j.at("guard_psnr_db").get<double>();
  m.master_seed = u64_parse(j.at("master_seed").get<std::string>());
  m.deg_stream = u64_parse(j.at("deg_stream").get<std::string>());
  m.noise_stream = u64_parse(j.at("noise_stream").get<std::string>());
  m.noise_counter = u64_parse(j.at("noise_counter").get<std::string>());
  m.degradation = sample_from_json(j.at("degradation"));
  return m;
}

inline ojson synthesis_config_to_json(const SynthesisConfig& c) {
  ojson j;
  j["kind"] = kind_name(c.kind);
  j["t_min"] = c.t_min;
  j["t_max"] = c.t_max;
  j["psnr_guard_db"] = c.psnr_guard_db;
  j["guard_enabled"] = c.guard_enabled;
  j["max_retries"] = c.max_retries;
  j["deterministic_reverse"] = c.deterministic_reverse;
  j["ranges"] = ranges_to_json(c.ranges);
  return j;
}

inline SynthesisConfig synthesis_config_from_json(const ojson& j) {
  SynthesisConfig c;
  c.kind = kind_from_name(j.at("kind").get<std::string>());
  c.t_min = j.at("t_min").get<int>();
  c.t_max = j.at("t_max").get<int>();
  c.psnr_guard_db = j.at("psnr_guard_db").get<double>();
  c.guard_enabled = j.at("guard_enabled").get<bool>();
  c.max_retries = j.at("max_retries").get<int>();
  c.deterministic_reverse = j.at("deterministic_reverse").get<bool>();
  c.ranges = ranges_from_json(j.at("ranges"));
  return c;
}

inline void save_pair_manifest(const PairManifest& m, const std::string& path) {
  ojson j;
  j["version"] = m.version;
  j["master_seed"] = u64_str(m.master_seed);
  j["checkpoint_hash"] = m.checkpoint_hash;
  j["config"] = synthesis_config_to_json(m.config);
  j["pairs"] = ojson::array();
  for (const auto& p : m.pairs) j["pairs"].push_back(pair_meta_to_json(p));
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw io_error("cannot write pair manifest: " + path);
  f << j.dump(2) << "\n";
}

inline PairManifest load_pair_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw io_error("cannot open pair manifest: " + path);
  ojson j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    throw io_error("pair manifest parse error: " + std::string(e.what()));
  }
  PairManifest m;
  m.version = j.at("version").get<std::string>();
  m.master_seed = u64_parse(j.at("master_seed").get<std::string>());
  m.checkpoint_hash = j.at("checkpoint_hash").get<std::string>();
  m.config = synthesis_config_from_json(j.at("config"));
  for (const auto& p : j.at("pairs")) m.pairs.push_back(pair_meta_from_json(p));
  return m;
}

// One pair (or rejection record) per HQ image; per-image RNG streams, so the
// manifest is identical for any parallelism level. With out_dir non-empty,
// HQ/LQ PNGs land in a mirrored hq/ lq/ layout.
inline PairManifest batch_synthesize(const std::vector<Image>& hqs, const NoisePredictor& model,
                                     const NoiseSchedule& sched, const SynthesisConfig& cfg,
                                     std::uint64_t master_seed, int parallelism,
                                     const std::string& out_dir = "",
                                     const std::string& checkpoint_hash = "") {
  require(!hqs.empty(), "batch_synthesize: empty HQ set");
  namespace fs = std::filesystem;
  if (!out_dir.empty()) {
    fs::create_directories(fs::path(out_dir) / "hq");
    fs::create_directories(fs::path(out_dir) / "lq");
  }
  PairManifest manifest;
  manifest.master_seed = master_seed;
  manifest.checkpoint_hash = checkpoint_hash;
  manifest.config = cfg;
  manifest.pairs.resize(hqs.size());
  std::vector<Image> lqs(hqs.size());

  auto run_one = [&](std::int64_t i) {
    try {
      SynthesisResult res = synthesize_lq(hqs[static_cast<size_t>(i)], model, sched, cfg,
                                          master_seed, static_cast<int>(i));
      manifest.pairs[static_cast<size_t>(i)] = std::move(res.meta);
      lqs[static_cast<size_t>(i)] = std::move(res.lq);
    } catch (const std::exception& e) {
      PairMeta m;
      m.index = static_cast<int>(i);
      m.master_seed = master_seed;
      m.accepted = false;
      m.reject_reason = std::string("error: ") + e.what();
      manifest.pairs[static_cast<size_t>(i)] = std::move(m);
    }
  };
  if (parallelism <= 1) {
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(hqs.size()); ++i) run_one(i);
  } else {
    parallel_for(static_cast<std::int64_t>(hqs.size()), run_one, 1);
  }

  char name[32];
  for (size_t i = 0; i < hqs.size(); ++i) {
    PairMeta& m = manifest.pairs[i];
    if (!out_dir.empty() && m.accepted) {
      std::snprintf(name, sizeof(name), "hq/%05d.png", static_cast<int>(i));
      m.hq_path = name;
      save_image(hqs[i], (fs::path(out_dir) / name).string());
      std::snprintf(name, sizeof(name), "lq/%05d.png", static_cast<int>(i));
      m.lq_path = name;
      save_image(lqs[i], (fs::path(out_dir) / name).string());
    }
  }
  if (!out_dir.empty())
    save_pair_manifest(manifest, (fs::path(out_dir) / "pairs.json").string());
  return manifest;
}

}  // namespace dgdf
