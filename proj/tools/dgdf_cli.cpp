// dgdf command line: toy-corpus generation, denoiser training, handcrafted
// degradation, pair synthesis, curve sweeps and distribution evaluation.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "dgdf/checkpoint.hpp"
#include "dgdf/dataset.hpp"
#include "dgdf/metrics.hpp"
#include "dgdf/sweep.hpp"
#include "dgdf/synthesis.hpp"
#include "dgdf/training.hpp"

namespace fs = std::filesystem;
using namespace dgdf;

namespace {

// Every run leaves a record next to its outputs: resolved options, seed and
// version, enough to reproduce the invocation.
void write_run_record(const std::string& dir_or_file, const std::string& command,
                      const ojson& options) {
  fs::path base(dir_or_file);
  fs::path target = fs::is_directory(base) ? base / "run.json"
                                           : base.parent_path().empty()
                                                 ? fs::path(command + ".run.json")
                                                 : base.parent_path() / (base.filename().string() + ".run.json");
  ojson j;
  j["command"] = command;
  j["version"] = DGDF_VERSION_STRING;
  j["options"] = options;
  auto now = std::chrono::system_clock::now().time_since_epoch();
  j["unix_time"] = std::chrono::duration_cast<std::chrono::seconds>(now).count();
  std::ofstream f(target);
  if (f) f << j.dump(2) << "\n";
}

std::vector<int> parse_int_list(const std::string& csv) {
  std::vector<int> out;
  size_t start = 0;
  while (start <= csv.size()) {
    size_t comma = csv.find(',', start);
    std::string cell = csv.substr(start, comma == std::string::npos ? std::string::npos
                                                                    : comma - start);
    if (!cell.empty()) out.push_back(std::stoi(cell));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  require(!out.empty(), "empty integer list");
  return out;
}

std::vector<Image> load_hq_images(const std::string& dir) {
  auto imgs = load_image_dir(dir);
  for (const auto& img : imgs)
    require_shape(img.w == img.h && img.w == imgs[0].w,
                  "HQ inputs must be square images of one size");
  return imgs;
}

ExtractorKind make_extractor(const std::string& name, int patch_size, int stride,
                             const UNet* model, int denoiser_t) {
  ExtractorKind ex;
  if (name == "patch") {
    ex.type = ExtractorKind::Type::patch_stats;
    ex.patch.patch_size = patch_size;
    ex.patch.stride = stride;
  } else if (name == "denoiser") {
    require(model != nullptr, "denoiser extractor needs --ckpt");
    ex.type = ExtractorKind::Type::denoiser;
    ex.model = model;
    ex.denoiser_t = denoiser_t;
  } else {
    throw value_error("unknown extractor: " + name);
  }
  return ex;
}

FeatureStats corpus_stats(const std::string& corpus, const ExtractorKind& ex) {
  std::vector<Image> imgs;
  if (fs::is_directory(corpus)) {
    imgs = load_image_dir(corpus);
  } else {
    imgs = load_manifest_images(load_manifest(corpus));
  }
  FeatureStats s = fit_stats(extract_features(imgs, ex));
  if (s.undersampled())
    std::cerr << "warning: " << s.sample_count << " corpus samples for " << s.d
              << "-dimensional features; covariance is undersampled\n";
  return s;
}

// ------------------------------------------------------------- subcommands

int cmd_make_toy_did(const std::string& out, int count, int clean_size, int lq_size,
                     const std::string& severity, std::uint64_t seed,
                     const std::string& clean_src) {
  ToyDidOptions opt;
  opt.count = count;
  opt.clean_size = clean_size;
  opt.lq_size = lq_size;
  opt.severity = severity;
  opt.seed = seed;
  std::vector<Image> clean;
  if (!clean_src.empty()) clean = load_image_dir(clean_src);
  fs::create_directories(out);
  ToyDidResult res = make_toy_did(clean, out, opt);
  ojson rec;
  rec["out"] = out;
  rec["count"] = static_cast<int>(res.lq_manifest.entries.size());
  rec["clean_size"] = clean_size;
  rec["lq_size"] = lq_size;
  rec["severity"] = severity;
  rec["seed"] = u64_str(seed);
  write_run_record(out, "make-toy-did", rec);
  std::printf("wrote %zu corpus images under %s\n", res.lq_manifest.entries.size(),
              out.c_str());
  return 0;
}

int cmd_train(const std::string& manifest_path, const std::string& out_ckpt, TrainOptions opt,
              const std::string& loss_log_path) {
  DatasetManifest manifest = load_manifest(manifest_path);
  std::vector<Image> corpus = load_manifest_images(manifest);
  std::printf("training on %zu corpus images, %d iters, batch %d, lr %g\n", corpus.size(),
              opt.iters, opt.batch, opt.lr);
  auto t0 = std::chrono::steady_clock::now();
  TrainResult res = train_denoiser(corpus, opt, [&](int iter, double loss) {
    auto dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("iter %6d  loss %.4f  (%.1fs)\n", iter, loss, dt);
    std::fflush(stdout);
  });
  if (!out_ckpt.empty()) {
    if (!fs::path(out_ckpt).parent_path().empty())
      fs::create_directories(fs::path(out_ckpt).parent_path());
    save_checkpoint(out_ckpt, res.model, opt.t_total, opt.beta_start, opt.beta_end,
                    static_cast<std::uint64_t>(opt.iters));
  }
  std::string log_path = loss_log_path.empty() ? out_ckpt + ".loss.csv" : loss_log_path;
  {
    std::ofstream f(log_path, std::ios::trunc);
    f << "iter,smoothed_loss\n";
    for (const auto& [iter, loss] : res.loss_log) f << iter << "," << loss << "\n";
  }
  ojson rec;
  rec["manifest"] = manifest_path;
  rec["checkpoint"] = out_ckpt;
  rec["iters"] = opt.iters;
  rec["batch"] = opt.batch;
  rec["lr"] = opt.lr;
  rec["ema"] = opt.ema_decay;
  rec["patch"] = opt.patch;
  rec["t_total"] = opt.t_total;
  rec["seed"] = u64_str(opt.seed);
  write_run_record(out_ckpt, "train", rec);
  std::printf("checkpoint written to %s\n", out_ckpt.c_str());
  return 0;
}

int cmd_degrade(const std::string& kind_name_str, const std::string& in_dir,
                const std::string& out_dir, double scale, int lq_size, std::uint64_t seed) {
  DegKind kind = kind_from_name(kind_name_str);
  std::vector<Image> imgs = load_hq_images(in_dir);
  DegradationRanges ranges;
  ranges.hq_size = imgs[0].w;
  ranges.lq_size = lq_size > 0
                       ? lq_size
                       : std::max(1, static_cast<int>(std::lround(imgs[0].w / scale)));
  fs::create_directories(out_dir);
  ojson samples = ojson::array();
  char name[32];
  for (size_t i = 0; i < imgs.size(); ++i) {
    Rng rng(seed, static_cast<std::uint64_t>(i));
    DegradationSample s = sample_pipeline(kind, rng, ranges);
    Image lq = apply(imgs[i], s);
    std::snprintf(name, sizeof(name), "%05d.png", static_cast<int>(i));
    save_image(lq, (fs::path(out_dir) / name).string());
    ojson js = sample_to_json(s);
    js["output"] = name;
    samples.push_back(js);
  }
  {
    std::ofstream f(fs::path(out_dir) / "degrade.json");
    ojson j;
    j["kind"] = kind_name_str;
    j["seed"] = u64_str(seed);
    j["samples"] = samples;
    f << j.dump(2) << "\n";
  }
  ojson rec;
  rec["kind"] = kind_name_str;
  rec["in"] = in_dir;
  rec["out"] = out_dir;
  rec["lq_size"] = ranges.lq_size;
  rec["seed"] = u64_str(seed);
  write_run_record(out_dir, "degrade", rec);
  std::printf("degraded %zu images -> %s\n", imgs.size(), out_dir.c_str());
  return 0;
}

int cmd_synth(const std::string& ckpt_path, const std::string& hq_dir,
              const std::string& out_dir, SynthesisConfig cfg, std::uint64_t seed,
              int parallelism, const std::string& from_manifest, bool use_ema) {
  CheckpointData ckpt = load_checkpoint(ckpt_path);
  NoiseSchedule sched = linear_schedule(ckpt.T, ckpt.beta_start, ckpt.beta_end);
  NoisePredictor model = ckpt.model.predictor(use_ema);
  std::vector<Image> hqs = load_hq_images(hq_dir);
  cfg.ranges.hq_size = hqs[0].w;
  fs::create_directories(out_dir);

  if (!from_manifest.empty()) {
    PairManifest m = load_pair_manifest(from_manifest);
    fs::create_directories(fs::path(out_dir) / "lq");
    int rebuilt = 0;
    for (const auto& meta : m.pairs) {
      if (!meta.accepted) continue;
      require(meta.index < static_cast<int>(hqs.size()),
              "manifest index beyond the HQ set");
      Image lq = resynthesize_lq(hqs[static_cast<size_t>(meta.index)], meta, model, sched,
                                 m.config.deterministic_reverse);
      char name[32];
      std::snprintf(name, sizeof(name), "lq/%05d.png", meta.index);
      save_image(lq, (fs::path(out_dir) / name).string());
      ++rebuilt;
    }
    std::printf("re-synthesized %d LQ images from manifest\n", rebuilt);
    return 0;
  }

  PairManifest m = batch_synthesize(hqs, model, sched, cfg, seed, parallelism, out_dir,
                                    file_hash_hex(ckpt_path));
  int accepted = 0;
  for (const auto& p : m.pairs) accepted += p.accepted ? 1 : 0;
  ojson rec;
  rec["ckpt"] = ckpt_path;
  rec["hq"] = hq_dir;
  rec["out"] = out_dir;
  rec["seed"] = u64_str(seed);
  rec["config"] = synthesis_config_to_json(cfg);
  write_run_record(out_dir, "synth", rec);
  std::printf("%d/%zu pairs accepted; manifest at %s/pairs.json\n", accepted, m.pairs.size(),
              out_dir.c_str());
  return 0;
}

int cmd_sweep(const std::string& ckpt_path, const std::string& hq_dir,
              const std::string& corpus, const std::string& out_csv,
              const std::string& kinds_str, const std::string& t_grid_str, int per_kind,
              std::uint64_t seed, const std::string& extractor_name, int patch_size,
              int stride, int denoiser_t, bool deterministic) {
  CheckpointData ckpt = load_checkpoint(ckpt_path);
  NoiseSchedule sched = linear_schedule(ckpt.T, ckpt.beta_start, ckpt.beta_end);
  UNet ema_model = ckpt.model.ema_copy();
  NoisePredictor model = ckpt.model.predictor(true);

  std::vector<DegKind> kinds;
  if (kinds_str == "all") {
    kinds = {DegKind::bicubic, DegKind::classical, DegKind::shuffle, DegKind::highorder};
  } else {
    size_t start = 0;
    while (start <= kinds_str.size()) {
      size_t comma = kinds_str.find(',', start);
      std::string cell = kinds_str.substr(start, comma == std::string::npos
                                                     ? std::string::npos
                                                     : comma - start);
      if (!cell.empty()) kinds.push_back(kind_from_name(cell));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
  }
  std::vector<int> t_grid = parse_int_list(t_grid_str);

  std::vector<Image> hqs = load_hq_images(hq_dir);
  if (per_kind > 0 && per_kind < static_cast<int>(hqs.size()))
    hqs.resize(static_cast<size_t>(per_kind));

  DegradationRanges ranges;
  ranges.hq_size = hqs[0].w;
  // LQ resolution comes from the corpus images
  ExtractorKind ex = make_extractor(extractor_name, patch_size, stride, &ema_model, denoiser_t);
  FeatureStats ref;
  {
    std::vector<Image> corpus_imgs = fs::is_directory(corpus)
                                         ? load_image_dir(corpus)
                                         : load_manifest_images(load_manifest(corpus));
    require(!corpus_imgs.empty(), "empty corpus");
    ranges.lq_size = corpus_imgs[0].w;
    ref = fit_stats(extract_features(corpus_imgs, ex));
    if (ref.undersampled())
      std::cerr << "warning: corpus undersampled for " << ref.d << "-dim features\n";
  }

  auto rows = sweep_curves(hqs, ref, model, sched, kinds, t_grid, ranges, ex, seed,
                           deterministic);
  if (!fs::path(out_csv).parent_path().empty())
    fs::create_directories(fs::path(out_csv).parent_path());
  write_sweep_csv(rows, out_csv);
  ojson rec;
  rec["ckpt"] = ckpt_path;
  rec["hq"] = hq_dir;
  rec["corpus"] = corpus;
  rec["out"] = out_csv;
  rec["t_grid"] = t_grid_str;
  rec["kinds"] = kinds_str;
  rec["n"] = static_cast<int>(hqs.size());
  rec["seed"] = u64_str(seed);
  write_run_record(out_csv, "sweep", rec);
  std::printf("wrote %zu sweep rows to %s\n", rows.size(), out_csv.c_str());
  return 0;
}

int cmd_eval(const std::string& candidate, const std::string& corpus,
             const std::string& extractor_name, int patch_size, int stride,
             const std::string& ckpt_path, int denoiser_t) {
  UNet model;
  bool have_model = false;
  if (!ckpt_path.empty()) {
    model = load_checkpoint(ckpt_path).model.ema_copy();
    have_model = true;
  }
  ExtractorKind ex = make_extractor(extractor_name, patch_size, stride,
                                    have_model ? &model : nullptr, denoiser_t);
  FeatureStats ref = corpus_stats(corpus, ex);
  std::vector<Image> cand = fs::is_directory(candidate)
                                ? load_image_dir(candidate)
                                : load_manifest_images(load_manifest(candidate));
  FeatureStats cs = fit_stats(extract_features(cand, ex));
  double fd = frechet_distance(cs, ref);
  std::printf("frechet_distance=%.6f (n_candidate=%lld, n_corpus=%lld, d=%d)\n", fd,
              static_cast<long long>(cs.sample_count), static_cast<long long>(ref.sample_count),
              ref.d);
  ojson rec;
  rec["candidate"] = candidate;
  rec["corpus"] = corpus;
  rec["extractor"] = extractor_name;
  rec["frechet_distance"] = fd;
  write_run_record("eval", "eval", rec);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"diffusion-based degraded training-pair synthesis"};
  app.set_config("--config", "", "key=value config file; flags override");
  app.set_version_flag("--version", std::string(DGDF_VERSION_STRING));
  int threads = 0;
  app.add_option("--threads", threads, "worker threads (default: hardware)");
  app.require_subcommand(1);

  // make-toy-did
  auto* did = app.add_subcommand("make-toy-did", "build the toy degraded-image corpus");
  std::string did_out, did_severity = "heavy", did_clean_src;
  int did_count = 500, did_clean_size = 64, did_lq_size = 32;
  std::uint64_t did_seed = 0;
  did->add_option("--out", did_out, "output directory")->required();
  did->add_option("--count", did_count, "number of corpus images");
  did->add_option("--clean-size", did_clean_size, "clean source resolution");
  did->add_option("--lq-size", did_lq_size, "corpus LQ resolution");
  did->add_option("--severity", did_severity, "heavy|none");
  did->add_option("--seed", did_seed, "master seed");
  did->add_option("--clean-src", did_clean_src, "use PNGs from this dir instead of textures");

  // train
  auto* train = app.add_subcommand("train", "train the denoiser on an LQ corpus");
  std::string train_manifest, train_out = "model.ckpt", train_loss_log, train_mults = "1,2,4";
  TrainOptions topt;
  train->add_option("--manifest", train_manifest, "corpus manifest.json")->required();
  train->add_option("--out", train_out, "output checkpoint path");
  train->add_option("--iters", topt.iters, "optimizer steps");
  train->add_option("--batch", topt.batch, "batch size");
  train->add_option("--lr", topt.lr, "learning rate");
  train->add_option("--ema", topt.ema_decay, "EMA decay");
  train->add_option("--patch", topt.patch, "training patch size");
  train->add_option("--t-total", topt.t_total, "diffusion steps T");
  train->add_option("--beta-start", topt.beta_start, "schedule start");
  train->add_option("--beta-end", topt.beta_end, "schedule end");
  train->add_option("--seed", topt.seed, "master seed");
  train->add_option("--base-channels", topt.net.base_channels, "UNet base width");
  train->add_option("--mults", train_mults, "channel multipliers, e.g. 1,2,4");
  train->add_option("--res-blocks", topt.net.res_blocks_per_level, "res blocks per level");
  train->add_option("--time-dim", topt.net.time_embed_dim, "time embedding dim");
  train->add_option("--groups", topt.net.norm_groups, "groupnorm groups");
  train->add_option("--loss-log", train_loss_log, "loss log csv path");

  // degrade
  auto* degrade = app.add_subcommand("degrade", "apply a handcrafted pipeline only");
  std::string dg_kind = "bicubic", dg_in, dg_out;
  double dg_scale = 4.0;
  int dg_lq_size = 0;
  std::uint64_t dg_seed = 0;
  degrade->add_option("--kind", dg_kind, "bicubic|classical|shuffle|highorder");
  degrade->add_option("--in", dg_in, "input HQ directory")->required();
  degrade->add_option("--out", dg_out, "output directory")->required();
  degrade->add_option("--scale", dg_scale, "downscale factor (ignored with --lq-size)");
  degrade->add_option("--lq-size", dg_lq_size, "explicit LQ resolution");
  degrade->add_option("--seed", dg_seed, "master seed");

  // synth
  auto* synth = app.add_subcommand("synth", "full HQ->LQ pair synthesis");
  std::string sy_ckpt, sy_hq, sy_out, sy_profile = "face", sy_kind = "highorder",
              sy_from_manifest;
  SynthesisConfig sy_cfg;
  std::uint64_t sy_seed = 0;
  int sy_parallelism = 1, sy_tmax = -1;
  bool sy_guard_off = false, sy_live_weights = false;
  synth->add_option("--ckpt", sy_ckpt, "trained checkpoint")->required();
  synth->add_option("--hq", sy_hq, "HQ input directory")->required();
  synth->add_option("--out", sy_out, "output directory")->required();
  synth->add_option("--kind", sy_kind, "degradation kind");
  synth->add_option("--profile", sy_profile, "face (t_max 500) or natural (t_max 250)");
  synth->add_option("--t-min", sy_cfg.t_min, "minimum diffusion step");
  synth->add_option("--t-max", sy_tmax, "maximum diffusion step (overrides profile)");
  synth->add_option("--guard-db", sy_cfg.psnr_guard_db, "structure guard threshold");
  synth->add_flag("--no-guard", sy_guard_off, "disable the structure guard");
  synth->add_option("--max-retries", sy_cfg.max_retries, "guard retries (halve t)");
  synth->add_flag("--deterministic-reverse", sy_cfg.deterministic_reverse,
                  "disable posterior noise");
  synth->add_option("--lq-size", sy_cfg.ranges.lq_size, "LQ resolution");
  synth->add_option("--seed", sy_seed, "master seed");
  synth->add_option("--parallelism", sy_parallelism, "images in flight");
  synth->add_flag("--live-weights", sy_live_weights, "sample with live instead of EMA weights");
  synth->add_option("--from-manifest", sy_from_manifest,
                    "re-synthesize LQs from an existing pairs.json");

  // sweep
  auto* sweep = app.add_subcommand("sweep", "distance and PSNR versus diffusion step");
  std::string sw_ckpt, sw_hq, sw_corpus, sw_out = "curves.csv", sw_kinds = "all",
              sw_grid = "0,25,50,100,150,200", sw_extractor = "patch";
  int sw_per_kind = 0, sw_patch = 16, sw_stride = 16, sw_denoiser_t = 50;
  std::uint64_t sw_seed = 0;
  bool sw_deterministic = false;
  sweep->add_option("--ckpt", sw_ckpt, "trained checkpoint")->required();
  sweep->add_option("--hq", sw_hq, "HQ input directory")->required();
  sweep->add_option("--corpus", sw_corpus, "real-LQ corpus manifest or dir")->required();
  sweep->add_option("--out", sw_out, "output csv");
  sweep->add_option("--kinds", sw_kinds, "all or comma list");
  sweep->add_option("--t-grid", sw_grid, "comma list of t values");
  sweep->add_option("--per-kind", sw_per_kind, "HQ images per kind (0 = all)");
  sweep->add_option("--seed", sw_seed, "master seed");
  sweep->add_option("--extractor", sw_extractor, "patch|denoiser");
  sweep->add_option("--patch-size", sw_patch, "patch extractor patch size");
  sweep->add_option("--stride", sw_stride, "patch extractor stride");
  sweep->add_option("--denoiser-t", sw_denoiser_t, "denoiser extractor step");
  sweep->add_flag("--deterministic-reverse", sw_deterministic, "disable posterior noise");

  // eval
  auto* eval = app.add_subcommand("eval", "Frechet distance of an LQ set against a corpus");
  std::string ev_candidate, ev_corpus, ev_extractor = "patch", ev_ckpt;
  int ev_patch = 16, ev_stride = 16, ev_denoiser_t = 50;
  eval->add_option("--candidate", ev_candidate, "candidate LQ dir or manifest")->required();
  eval->add_option("--corpus", ev_corpus, "reference corpus dir or manifest")->required();
  eval->add_option("--extractor", ev_extractor, "patch|denoiser");
  eval->add_option("--patch-size", ev_patch, "patch extractor patch size");
  eval->add_option("--stride", ev_stride, "patch extractor stride");
  eval->add_option("--ckpt", ev_ckpt, "checkpoint for the denoiser extractor");
  eval->add_option("--denoiser-t", ev_denoiser_t, "denoiser extractor step");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;  // bad flags -> usage text, exit 1
  }

  try {
    if (threads > 0) set_num_threads(threads);
    if (did->parsed())
      return cmd_make_toy_did(did_out, did_count, did_clean_size, did_lq_size, did_severity,
                              did_seed, did_clean_src);
    if (train->parsed()) {
      topt.net.channel_mults = parse_int_list(train_mults);
      return cmd_train(train_manifest, train_out, topt, train_loss_log);
    }
    if (degrade->parsed())
      return cmd_degrade(dg_kind, dg_in, dg_out, dg_scale, dg_lq_size, dg_seed);
    if (synth->parsed()) {
      sy_cfg.kind = kind_from_name(sy_kind);
      if (sy_tmax >= 0) {
        sy_cfg.t_max = sy_tmax;
      } else if (sy_profile == "face") {
        sy_cfg.t_max = 500;
      } else if (sy_profile == "natural") {
        sy_cfg.t_max = 250;
      } else {
        throw value_error("unknown profile: " + sy_profile);
      }
      sy_cfg.guard_enabled = !sy_guard_off;
      return cmd_synth(sy_ckpt, sy_hq, sy_out, sy_cfg, sy_seed, sy_parallelism,
                       sy_from_manifest, !sy_live_weights);
    }
    if (sweep->parsed())
      return cmd_sweep(sw_ckpt, sw_hq, sw_corpus, sw_out, sw_kinds, sw_grid, sw_per_kind,
                       sw_seed, sw_extractor, sw_patch, sw_stride, sw_denoiser_t,
                       sw_deterministic);
    if (eval->parsed())
      return cmd_eval(ev_candidate, ev_corpus, ev_extractor, ev_patch, ev_stride, ev_ckpt,
                      ev_denoiser_t);
  } catch (const dgdf::error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
