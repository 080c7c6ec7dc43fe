#pragma once

// Binary model checkpoints: "DGDF" magic, format version, schedule
// parameters, network config, then live and EMA tensors in name-sorted
// order, f32 little-endian. Writes are atomic (temp file + rename).

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dgdf/unet.hpp"

namespace dgdf {

namespace ckpt_detail {

inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}
inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}
inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}
inline void put_f64(std::vector<std::uint8_t>& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}
inline void put_f32(std::vector<std::uint8_t>& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

struct Reader {
  const std::uint8_t* p;
  size_t n, pos = 0;
  void need(size_t k) const {
    if (pos + k > n) throw io_error("checkpoint: truncated file");
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>(p[pos] | (p[pos + 1] << 8));
    pos += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[pos + static_cast<size_t>(i)]) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[pos + static_cast<size_t>(i)]) << (8 * i);
    pos += 8;
    return v;
  }
  double f64() {
    std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  float f32() {
    std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string str(size_t k) {
    need(k);
    std::string s(reinterpret_cast<const char*>(p + pos), k);
    pos += k;
    return s;
  }
};

inline void put_tensor(std::vector<std::uint8_t>& out, const std::string& name,
                       const Tensor& t) {
  put_u16(out, static_cast<std::uint16_t>(name.size()));
  out.insert(out.end(), name.begin(), name.end());
  const Shape4& s = t.shape();
  put_u32(out, static_cast<std::uint32_t>(s.n));
  put_u32(out, static_cast<std::uint32_t>(s.c));
  put_u32(out, static_cast<std::uint32_t>(s.h));
  put_u32(out, static_cast<std::uint32_t>(s.w));
  for (std::int64_t i = 0; i < t.numel(); ++i) put_f32(out, t.data()[i]);
}

}  // namespace ckpt_detail

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointData {
  std::uint32_t version = kCheckpointVersion;
  int T = 1000;
  double beta_start = 1e-4, beta_end = 0.02;
  std::uint64_t step = 0;
  UNet model;  // with EMA shadow restored
};

inline std::vector<std::uint8_t> encode_checkpoint(const UNet& model, int T, double beta_start,
                                                   double beta_end, std::uint64_t step) {
  using namespace ckpt_detail;
  std::vector<std::uint8_t> out = {'D', 'G', 'D', 'F'};
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(T));
  put_f64(out, beta_start);
  put_f64(out, beta_end);
  const UNetConfig& c = model.config();
  put_u32(out, static_cast<std::uint32_t>(c.in_channels));
  put_u32(out, static_cast<std::uint32_t>(c.base_channels));
  put_u32(out, static_cast<std::uint32_t>(c.channel_mults.size()));
  for (int m : c.channel_mults) put_u32(out, static_cast<std::uint32_t>(m));
  put_u32(out, static_cast<std::uint32_t>(c.res_blocks_per_level));
  put_u32(out, static_cast<std::uint32_t>(c.time_embed_dim));
  put_u32(out, static_cast<std::uint32_t>(c.norm_groups));
  put_u64(out, step);

  UNet ema = model.ema_copy();
  std::vector<std::pair<std::string, const Tensor*>> table;
  const auto& names = model.parameter_names();
  for (size_t i = 0; i < names.size(); ++i) {
    table.emplace_back(names[i], &model.parameters()[i]);
    table.emplace_back("ema/" + names[i], &ema.parameters()[i]);
  }
  std::sort(table.begin(), table.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  put_u32(out, static_cast<std::uint32_t>(table.size()));
  for (const auto& [name, tensor] : table) put_tensor(out, name, *tensor);
  return out;
}

inline void save_checkpoint(const std::string& path, const UNet& model, int T,
                            double beta_start, double beta_end, std::uint64_t step) {
  auto bytes = encode_checkpoint(model, T, beta_start, beta_end, step);
  std::filesystem::path target(path);
  std::filesystem::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw io_error("checkpoint: cannot open " + tmp.string());
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw io_error("checkpoint: short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, target);
}

inline CheckpointData decode_checkpoint(const std::uint8_t* data, size_t n) {
  using namespace ckpt_detail;
  Reader r{data, n};
  if (r.str(4) != "DGDF") throw io_error("checkpoint: bad magic");
  CheckpointData out;
  out.version = r.u32();
  if (out.version != kCheckpointVersion)
    throw io_error("checkpoint: unsupported format version " + std::to_string(out.version) +
                   " (expected " + std::to_string(kCheckpointVersion) + ")");
  out.T = static_cast<int>(r.u32());
  out.beta_start = r.f64();
  out.beta_end = r.f64();
  UNetConfig cfg;
  cfg.in_channels = static_cast<int>(r.u32());
  cfg.base_channels = static_cast<int>(r.u32());
  std::uint32_t nm = r.u32();
  cfg.channel_mults.clear();
  for (std::uint32_t i = 0; i < nm; ++i) cfg.channel_mults.push_back(static_cast<int>(r.u32()));
  cfg.res_blocks_per_level = static_cast<int>(r.u32());
  cfg.time_embed_dim = static_cast<int>(r.u32());
  cfg.norm_groups = static_cast<int>(r.u32());
  out.step = r.u64();

  Rng dummy(0, 0);
  out.model = UNet::init(cfg, dummy);

  std::uint32_t count = r.u32();
  std::vector<Tensor> ema_tensors(out.model.parameters().size());
  std::vector<bool> have_live(ema_tensors.size(), false), have_ema(ema_tensors.size(), false);
  const auto& names = out.model.parameter_names();
  auto index_of = [&](const std::string& name) -> int {
    for (size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return static_cast<int>(i);
    return -1;
  };
  for (std::uint32_t k = 0; k < count; ++k) {
    std::uint16_t len = r.u16();
    std::string name = r.str(len);
    Shape4 s;
    s.n = static_cast<int>(r.u32());
    s.c = static_cast<int>(r.u32());
    s.h = static_cast<int>(r.u32());
    s.w = static_cast<int>(r.u32());
    std::vector<float> v(static_cast<size_t>(s.numel()));
    for (auto& f : v) f = r.f32();
    Tensor t = Tensor::from(s, std::move(v));
    bool is_ema = name.rfind("ema/", 0) == 0;
    std::string base = is_ema ? name.substr(4) : name;
    int idx = index_of(base);
    if (idx < 0) throw io_error("checkpoint: unknown tensor " + name);
    if (is_ema) {
      ema_tensors[static_cast<size_t>(idx)] = std::move(t);
      have_ema[static_cast<size_t>(idx)] = true;
    } else {
      out.model.set_param(base, std::move(t));
      have_live[static_cast<size_t>(idx)] = true;
    }
  }
  for (size_t i = 0; i < names.size(); ++i)
    if (!have_live[i] || !have_ema[i])
      throw io_error("checkpoint: missing tensor for parameter " + names[i]);
  out.model.set_ema_from_tensors(ema_tensors);
  return out;
}

inline CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error("checkpoint: cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes.data(), bytes.size());
}

// FNV-1a over the file bytes; recorded in pair manifests for provenance.
inline std::string file_hash_hex(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open for hashing: " + path);
  std::uint64_t h = 14695981039346656037ull;
  char buf[4096];
  while (f.read(buf, sizeof(buf)) || f.gcount() > 0) {
    for (std::streamsize i = 0; i < f.gcount(); ++i) {
      h ^= static_cast<std::uint8_t>(buf[i]);
      h *= 1099511628211ull;
    }
    if (!f) break;
  }
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
  return std::string(hex);
}

}  // namespace dgdf
