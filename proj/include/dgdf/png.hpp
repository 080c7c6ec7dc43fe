#pragma once

// Self-contained PNG reader/writer. The writer emits unfiltered rows inside
// stored (uncompressed) deflate blocks, which every reader accepts and keeps
// output bytes a pure function of the pixels. The reader implements full
// inflate (stored, fixed and dynamic Huffman) plus all five row filters, for
// 8-bit gray / gray+alpha / RGB / RGBA, non-interlaced.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "dgdf/image.hpp"

namespace dgdf {
namespace png_detail {

inline std::uint32_t crc32(const std::uint8_t* data, size_t n, std::uint32_t crc = 0) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  crc ^= 0xFFFFFFFFu;
  for (size_t i = 0; i < n; ++i) crc = table[(crc ^ data[i]) & 0xFF] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}

inline std::uint32_t adler32(const std::uint8_t* data, size_t n) {
  std::uint32_t a = 1, b = 0;
  for (size_t i = 0; i < n; ++i) {
    a = (a + data[i]) % 65521u;
    b = (b + a) % 65521u;
  }
  return (b << 16) | a;
}

inline void put_u32be(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

inline void put_chunk(std::vector<std::uint8_t>& out, const char type[4],
                      const std::vector<std::uint8_t>& payload) {
  put_u32be(out, static_cast<std::uint32_t>(payload.size()));
  size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  put_u32be(out, crc32(out.data() + start, out.size() - start));
}

// ------------------------------------------------------------- inflate

struct BitReader {
  const std::uint8_t* data;
  size_t size, pos = 0;
  std::uint32_t bitbuf = 0;
  int nbits = 0;

  std::uint32_t bits(int n) {
    while (nbits < n) {
      if (pos >= size) throw io_error("png: truncated deflate stream");
      bitbuf |= static_cast<std::uint32_t>(data[pos++]) << nbits;
      nbits += 8;
    }
    std::uint32_t v = bitbuf & ((1u << n) - 1u);
    bitbuf >>= n;
    nbits -= n;
    return v;
  }
  void align_byte() {
    bitbuf = 0;
    nbits = 0;
  }
};

// Canonical Huffman decoder built from code lengths.
struct Huffman {
  // first_code[len], first_symbol_index[len], symbols ordered by (len, symbol)
  std::array<int, 16> count{};
  std::array<int, 16> first_code{};
  std::array<int, 16> first_index{};
  std::vector<int> symbols;

  void build(const std::vector<int>& lengths) {
    count.fill(0);
    for (int l : lengths)
      if (l > 0) count[static_cast<size_t>(l)]++;
    int code = 0, index = 0;
    for (int l = 1; l <= 15; ++l) {
      code = (code + count[static_cast<size_t>(l - 1)]) << 1;
      first_code[static_cast<size_t>(l)] = code;
      first_index[static_cast<size_t>(l)] = index;
      index += count[static_cast<size_t>(l)];
    }
    symbols.assign(static_cast<size_t>(index), 0);
    std::array<int, 16> next{};
    for (int l = 1; l <= 15; ++l) next[static_cast<size_t>(l)] = first_index[static_cast<size_t>(l)];
    for (size_t s = 0; s < lengths.size(); ++s)
      if (lengths[s] > 0) symbols[static_cast<size_t>(next[static_cast<size_t>(lengths[s])]++)] = static_cast<int>(s);
  }

  int decode(BitReader& br) const {
    int code = 0;
    for (int l = 1; l <= 15; ++l) {
      code = (code << 1) | static_cast<int>(br.bits(1));
      int cnt = count[static_cast<size_t>(l)];
      int fc = first_code[static_cast<size_t>(l)];
      if (code - fc < cnt)
        return symbols[static_cast<size_t>(first_index[static_cast<size_t>(l)] + code - fc)];
    }
    throw io_error("png: invalid huffman code");
  }
};

inline std::vector<std::uint8_t> inflate(const std::uint8_t* src, size_t n,
                                         size_t expected_hint = 0) {
  static const int len_base[29] = {3,  4,  5,  6,  7,  8,  9,  10, 11,  13,  15,  17,  19, 23, 27,
                                   31, 35, 43, 51, 59, 67, 83, 99, 115, 131, 163, 195, 227, 258};
  static const int len_extra[29] = {0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2,
                                    2, 3, 3, 3, 3, 4, 4, 4, 4, 5, 5, 5, 5, 0};
  static const int dist_base[30] = {1,    2,    3,    4,    5,    7,     9,     13,   17,   25,
                                    33,   49,   65,   97,   129,  193,   257,   385,  513,  769,
                                    1025, 1537, 2049, 3073, 4097, 6145,  8193,  12289, 16385, 24577};
  static const int dist_extra[30] = {0, 0, 0, 0, 1, 1, 2, 2,  3,  3,  4,  4,  5,  5,  6,
                                     6, 7, 7, 8, 8, 9, 9, 10, 10, 11, 11, 12, 12, 13, 13};

  BitReader br{src, n};
  std::vector<std::uint8_t> out;
  if (expected_hint) out.reserve(expected_hint);
  bool final_block = false;
  while (!final_block) {
    final_block = br.bits(1) != 0;
    std::uint32_t btype = br.bits(2);
    if (btype == 0) {
      br.align_byte();
      if (br.pos + 4 > br.size) throw io_error("png: truncated stored block");
      std::uint32_t len = br.data[br.pos] | (br.data[br.pos + 1] << 8);
      std::uint32_t nlen = br.data[br.pos + 2] | (br.data[br.pos + 3] << 8);
      br.pos += 4;
      if ((len ^ 0xFFFFu) != nlen) throw io_error("png: stored block LEN/NLEN mismatch");
      if (br.pos + len > br.size) throw io_error("png: truncated stored block data");
      out.insert(out.end(), br.data + br.pos, br.data + br.pos + len);
      br.pos += len;
    } else if (btype == 1 || btype == 2) {
      Huffman litlen, dist;
      if (btype == 1) {
        std::vector<int> ll(288);
        for (int i = 0; i < 144; ++i) ll[static_cast<size_t>(i)] = 8;
        for (int i = 144; i < 256; ++i) ll[static_cast<size_t>(i)] = 9;
        for (int i = 256; i < 280; ++i) ll[static_cast<size_t>(i)] = 7;
        for (int i = 280; i < 288; ++i) ll[static_cast<size_t>(i)] = 8;
        litlen.build(ll);
        dist.build(std::vector<int>(30, 5));
      } else {
        int hlit = static_cast<int>(br.bits(5)) + 257;
        int hdist = static_cast<int>(br.bits(5)) + 1;
        int hclen = static_cast<int>(br.bits(4)) + 4;
        static const int order[19] = {16, 17, 18, 0, 8,  7, 9,  6, 10, 5,
                                      11, 4,  12, 3, 13, 2, 14, 1, 15};
        std::vector<int> cl_lengths(19, 0);
        for (int i = 0; i < hclen; ++i)
          cl_lengths[static_cast<size_t>(order[i])] = static_cast<int>(br.bits(3));
        Huffman cl;
        cl.build(cl_lengths);
        std::vector<int> lengths;
        lengths.reserve(static_cast<size_t>(hlit + hdist));
        while (static_cast<int>(lengths.size()) < hlit + hdist) {
          int sym = cl.decode(br);
          if (sym < 16) {
            lengths.push_back(sym);
          } else if (sym == 16) {
            if (lengths.empty()) throw io_error("png: repeat with no previous length");
            int rep = 3 + static_cast<int>(br.bits(2));
            lengths.insert(lengths.end(), static_cast<size_t>(rep), lengths.back());
          } else if (sym == 17) {
            int rep = 3 + static_cast<int>(br.bits(3));
            lengths.insert(lengths.end(), static_cast<size_t>(rep), 0);
          } else {
            int rep = 11 + static_cast<int>(br.bits(7));
            lengths.insert(lengths.end(), static_cast<size_t>(rep), 0);
          }
        }
        litlen.build(std::vector<int>(lengths.begin(), lengths.begin() + hlit));
        dist.build(std::vector<int>(lengths.begin() + hlit, lengths.end()));
      }
      for (;;) {
        int sym = litlen.decode(br);
        if (sym < 256) {
          out.push_back(static_cast<std::uint8_t>(sym));
        } else if (sym == 256) {
          break;
        } else {
          sym -= 257;
          if (sym >= 29) throw io_error("png: bad length symbol");
          int length = len_base[sym] + static_cast<int>(br.bits(len_extra[sym]));
          int dsym = dist.decode(br);
          if (dsym >= 30) throw io_error("png: bad distance symbol");
          int distance = dist_base[dsym] + static_cast<int>(br.bits(dist_extra[dsym]));
          if (static_cast<size_t>(distance) > out.size())
            throw io_error("png: match distance beyond output");
          size_t from = out.size() - static_cast<size_t>(distance);
          for (int i = 0; i < length; ++i) out.push_back(out[from + static_cast<size_t>(i)]);
        }
      }
    } else {
      throw io_error("png: reserved deflate block type");
    }
  }
  return out;
}

inline int paeth(int a, int b, int c) {
  int p = a + b - c;
  int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace png_detail

// ----------------------------------------------------------------- encode

inline std::vector<std::uint8_t> encode_png(const Image& img) {
  require(img.c == 3, "encode_png: only 3-channel images are written");
  require(img.w > 0 && img.h > 0, "encode_png: empty image");
  using namespace png_detail;

  // filter byte 0 + interleaved RGB rows; round half to even
  const size_t stride = static_cast<size_t>(img.w) * 3 + 1;
  std::vector<std::uint8_t> raw(stride * static_cast<size_t>(img.h));
  for (int y = 0; y < img.h; ++y) {
    std::uint8_t* row = raw.data() + stride * static_cast<size_t>(y);
    row[0] = 0;
    for (int x = 0; x < img.w; ++x)
      for (int ch = 0; ch < 3; ++ch) {
        float v = std::min(1.0f, std::max(0.0f, img.at(ch, y, x)));
        row[1 + 3 * x + ch] =
            static_cast<std::uint8_t>(std::nearbyint(v * 255.0f));  // ties to even
      }
  }

  // zlib wrapper around stored deflate blocks
  std::vector<std::uint8_t> z;
  z.reserve(raw.size() + raw.size() / 65535 * 5 + 16);
  z.push_back(0x78);
  z.push_back(0x01);
  size_t off = 0;
  while (off < raw.size()) {
    size_t block = std::min<size_t>(65535, raw.size() - off);
    bool last = off + block == raw.size();
    z.push_back(last ? 1 : 0);
    z.push_back(static_cast<std::uint8_t>(block & 0xFF));
    z.push_back(static_cast<std::uint8_t>(block >> 8));
    z.push_back(static_cast<std::uint8_t>(~block & 0xFF));
    z.push_back(static_cast<std::uint8_t>((~block >> 8) & 0xFF));
    z.insert(z.end(), raw.begin() + static_cast<std::ptrdiff_t>(off),
             raw.begin() + static_cast<std::ptrdiff_t>(off + block));
    off += block;
  }
  put_u32be(z, adler32(raw.data(), raw.size()));

  std::vector<std::uint8_t> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
  std::vector<std::uint8_t> ihdr;
  put_u32be(ihdr, static_cast<std::uint32_t>(img.w));
  put_u32be(ihdr, static_cast<std::uint32_t>(img.h));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(2);   // color type RGB
  ihdr.push_back(0);   // compression
  ihdr.push_back(0);   // filter method
  ihdr.push_back(0);   // no interlace
  put_chunk(out, "IHDR", ihdr);
  put_chunk(out, "IDAT", z);
  put_chunk(out, "IEND", {});
  return out;
}

// ----------------------------------------------------------------- decode

inline Image decode_png(const std::uint8_t* data, size_t n) {
  using namespace png_detail;
  static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
  if (n < 8 || std::memcmp(data, sig, 8) != 0) throw io_error("png: bad signature");

  size_t pos = 8;
  int width = 0, height = 0, bit_depth = 0, color_type = 0;
  std::vector<std::uint8_t> idat;
  bool saw_ihdr = false, saw_iend = false;
  while (pos + 8 <= n && !saw_iend) {
    std::uint32_t len = (static_cast<std::uint32_t>(data[pos]) << 24) |
                        (static_cast<std::uint32_t>(data[pos + 1]) << 16) |
                        (static_cast<std::uint32_t>(data[pos + 2]) << 8) | data[pos + 3];
    if (pos + 12 + len > n) throw io_error("png: truncated chunk");
    const char* type = reinterpret_cast<const char*>(data + pos + 4);
    const std::uint8_t* payload = data + pos + 8;
    std::uint32_t expect = (static_cast<std::uint32_t>(data[pos + 8 + len]) << 24) |
                           (static_cast<std::uint32_t>(data[pos + 9 + len]) << 16) |
                           (static_cast<std::uint32_t>(data[pos + 10 + len]) << 8) |
                           data[pos + 11 + len];
    if (crc32(data + pos + 4, 4 + len) != expect) throw io_error("png: chunk CRC mismatch");

    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) throw io_error("png: bad IHDR length");
      width = (payload[0] << 24) | (payload[1] << 16) | (payload[2] << 8) | payload[3];
      height = (payload[4] << 24) | (payload[5] << 16) | (payload[6] << 8) | payload[7];
      bit_depth = payload[8];
      color_type = payload[9];
      if (payload[12] != 0) throw io_error("png: interlaced images not supported");
      if (bit_depth != 8) throw io_error("png: only 8-bit depth supported");
      if (color_type != 0 && color_type != 2 && color_type != 4 && color_type != 6)
        throw io_error("png: unsupported color type " + std::to_string(color_type));
      saw_ihdr = true;
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), payload, payload + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      saw_iend = true;
    }
    pos += 12 + len;
  }
  if (!saw_ihdr || idat.empty()) throw io_error("png: missing IHDR or IDAT");
  if (width <= 0 || height <= 0) throw io_error("png: bad dimensions");

  if (idat.size() < 6) throw io_error("png: zlib stream too short");
  if ((idat[0] & 0x0F) != 8) throw io_error("png: unsupported zlib method");
  if (((idat[0] << 8) | idat[1]) % 31 != 0) throw io_error("png: bad zlib header check");
  if (idat[1] & 0x20) throw io_error("png: preset dictionary not supported");

  const int ch = color_type == 0 ? 1 : color_type == 2 ? 3 : color_type == 4 ? 2 : 4;
  const size_t stride = static_cast<size_t>(width) * static_cast<size_t>(ch) + 1;
  std::vector<std::uint8_t> raw = inflate(idat.data() + 2, idat.size() - 6,
                                          stride * static_cast<size_t>(height));
  if (raw.size() != stride * static_cast<size_t>(height))
    throw io_error("png: decompressed size mismatch");

  // undo row filters in place
  const int bpp = ch;
  for (int y = 0; y < height; ++y) {
    std::uint8_t* row = raw.data() + stride * static_cast<size_t>(y) + 1;
    const std::uint8_t* prev =
        y > 0 ? raw.data() + stride * static_cast<size_t>(y - 1) + 1 : nullptr;
    int filter = raw[stride * static_cast<size_t>(y)];
    const int rb = width * ch;
    switch (filter) {
      case 0:
        break;
      case 1:
        for (int i = bpp; i < rb; ++i) row[i] = static_cast<std::uint8_t>(row[i] + row[i - bpp]);
        break;
      case 2:
        if (prev)
          for (int i = 0; i < rb; ++i) row[i] = static_cast<std::uint8_t>(row[i] + prev[i]);
        break;
      case 3:
        for (int i = 0; i < rb; ++i) {
          int a = i >= bpp ? row[i - bpp] : 0;
          int b = prev ? prev[i] : 0;
          row[i] = static_cast<std::uint8_t>(row[i] + ((a + b) >> 1));
        }
        break;
      case 4:
        for (int i = 0; i < rb; ++i) {
          int a = i >= bpp ? row[i - bpp] : 0;
          int b = prev ? prev[i] : 0;
          int c = (prev && i >= bpp) ? prev[i - bpp] : 0;
          row[i] = static_cast<std::uint8_t>(row[i] + paeth(a, b, c));
        }
        break;
      default:
        throw io_error("png: unknown filter type " + std::to_string(filter));
    }
  }

  // to 3-channel float; gray replicates, alpha is dropped
  Image img(width, height, 3);
  for (int y = 0; y < height; ++y) {
    const std::uint8_t* row = raw.data() + stride * static_cast<size_t>(y) + 1;
    for (int x = 0; x < width; ++x) {
      const std::uint8_t* p = row + x * ch;
      float r, g, b;
      if (ch <= 2) {
        r = g = b = static_cast<float>(p[0]) / 255.0f;
      } else {
        r = static_cast<float>(p[0]) / 255.0f;
        g = static_cast<float>(p[1]) / 255.0f;
        b = static_cast<float>(p[2]) / 255.0f;
      }
      img.at(0, y, x) = r;
      img.at(1, y, x) = g;
      img.at(2, y, x) = b;
    }
  }
  return img;
}

inline void save_image(const Image& img, const std::string& path) {
  auto bytes = encode_png(img);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw io_error("cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw io_error("short write: " + path);
}

inline Image load_image(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  try {
    return decode_png(bytes.data(), bytes.size());
  } catch (const io_error& e) {
    throw io_error(path + ": " + e.what());
  }
}

}  // namespace dgdf
