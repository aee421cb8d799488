#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <zlib.h>

#include "biaslab/core.hpp"

namespace biaslab {

// Row-major 8-bit RGB raster.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // 3 * width * height

  static Image filled(int w, int h, std::uint8_t r, std::uint8_t g,
                      std::uint8_t b) {
    Image img;
    img.width = w;
    img.height = h;
    img.rgb.resize(static_cast<std::size_t>(w) * h * 3);
    for (std::size_t i = 0; i < img.rgb.size(); i += 3) {
      img.rgb[i] = r;
      img.rgb[i + 1] = g;
      img.rgb[i + 2] = b;
    }
    return img;
  }

  std::uint8_t* pixel(int x, int y) {
    return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }
  const std::uint8_t* pixel(int x, int y) const {
    return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }
  bool empty() const { return rgb.empty(); }
};

inline std::uint64_t content_hash(const Image& img) {
  std::uint64_t h = fnv1a64(&img.width, sizeof(img.width));
  h = fnv1a64(&img.height, sizeof(img.height), h);
  return fnv1a64(img.rgb.data(), img.rgb.size(), h);
}

// ---------------------------------------------------------------------------
// PNG container over zlib. 8-bit RGB out; 8-bit gray/RGB/RGBA in.

namespace png_detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>((v >> 24) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>(v & 0xff));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
         (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

inline void put_chunk(std::string& out, const char type[5],
                      const std::string& payload) {
  put_u32(out, static_cast<std::uint32_t>(payload.size()));
  const std::size_t crc_start = out.size();
  out.append(type, 4);
  out += payload;
  const auto crc = crc32(
      0, reinterpret_cast<const Bytef*>(out.data() + crc_start),
      static_cast<uInt>(out.size() - crc_start));
  put_u32(out, static_cast<std::uint32_t>(crc));
}

inline int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a);
  const int pb = std::abs(p - b);
  const int pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace png_detail

inline std::string encode_png(const Image& img) {
  if (img.width <= 0 || img.height <= 0 ||
      img.rgb.size() != static_cast<std::size_t>(img.width) * img.height * 3) {
    throw Error("encode_png: malformed image");
  }
  using namespace png_detail;

  // Filter type 0 on every scanline; the content is flat synthetic patches
  // and deflate handles those fine.
  const std::size_t stride = static_cast<std::size_t>(img.width) * 3;
  std::string raw;
  raw.reserve((stride + 1) * img.height);
  for (int y = 0; y < img.height; ++y) {
    raw.push_back('\0');
    raw.append(reinterpret_cast<const char*>(img.rgb.data() + y * stride),
               stride);
  }

  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::string compressed(bound, '\0');
  if (compress2(reinterpret_cast<Bytef*>(compressed.data()), &bound,
                reinterpret_cast<const Bytef*>(raw.data()),
                static_cast<uLong>(raw.size()), 6) != Z_OK) {
    throw Error("encode_png: deflate failed");
  }
  compressed.resize(bound);

  std::string ihdr;
  put_u32(ihdr, static_cast<std::uint32_t>(img.width));
  put_u32(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(2);   // color type: truecolor
  ihdr.push_back(0);   // compression
  ihdr.push_back(0);   // filter
  ihdr.push_back(0);   // interlace

  std::string out("\x89PNG\r\n\x1a\n", 8);
  put_chunk(out, "IHDR", ihdr);
  put_chunk(out, "IDAT", compressed);
  put_chunk(out, "IEND", "");
  return out;
}

inline Image decode_png(std::string_view bytes) {
  using namespace png_detail;
  if (bytes.size() < 8 ||
      std::memcmp(bytes.data(), "\x89PNG\r\n\x1a\n", 8) != 0) {
    throw ParseError("decode_png: not a PNG", 0);
  }
  const auto* data = reinterpret_cast<const unsigned char*>(bytes.data());
  std::size_t pos = 8;

  int width = 0;
  int height = 0;
  int channels = 0;
  std::string idat;

  while (pos + 8 <= bytes.size()) {
    const std::uint32_t len = get_u32(data + pos);
    if (pos + 12 + len > bytes.size()) {
      throw ParseError("decode_png: truncated chunk",
                       static_cast<std::int64_t>(pos));
    }
    const char* type = bytes.data() + pos + 4;
    const unsigned char* payload = data + pos + 8;
    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) throw ParseError("decode_png: bad IHDR");
      width = static_cast<int>(get_u32(payload));
      height = static_cast<int>(get_u32(payload + 4));
      const int depth = payload[8];
      const int color = payload[9];
      if (depth != 8 || payload[12] != 0) {
        throw ParseError("decode_png: only 8-bit non-interlaced supported");
      }
      switch (color) {
        case 0: channels = 1; break;
        case 2: channels = 3; break;
        case 6: channels = 4; break;
        default:
          throw ParseError("decode_png: unsupported color type " +
                           std::to_string(color));
      }
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.append(reinterpret_cast<const char*>(payload), len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      break;
    }
    pos += 12 + len;
  }
  if (width <= 0 || height <= 0 || channels == 0 || idat.empty()) {
    throw ParseError("decode_png: missing IHDR or IDAT");
  }

  const std::size_t stride = static_cast<std::size_t>(width) * channels;
  const std::size_t raw_size = (stride + 1) * height;
  std::vector<unsigned char> raw(raw_size);
  uLongf out_len = static_cast<uLongf>(raw_size);
  if (uncompress(raw.data(), &out_len,
                 reinterpret_cast<const Bytef*>(idat.data()),
                 static_cast<uLong>(idat.size())) != Z_OK ||
      out_len != raw_size) {
    throw ParseError("decode_png: inflate failed");
  }

  // Undo per-scanline filters.
  std::vector<unsigned char> flat(stride * height, 0);
  const int bpp = channels;
  for (int y = 0; y < height; ++y) {
    const unsigned char filter = raw[y * (stride + 1)];
    const unsigned char* src = raw.data() + y * (stride + 1) + 1;
    unsigned char* dst = flat.data() + y * stride;
    const unsigned char* prev = y > 0 ? flat.data() + (y - 1) * stride : nullptr;
    for (std::size_t x = 0; x < stride; ++x) {
      const int a = x >= static_cast<std::size_t>(bpp) ? dst[x - bpp] : 0;
      const int b = prev ? prev[x] : 0;
      const int c =
          (prev && x >= static_cast<std::size_t>(bpp)) ? prev[x - bpp] : 0;
      int v = src[x];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += paeth(a, b, c); break;
        default:
          throw ParseError("decode_png: unknown filter " +
                           std::to_string(filter));
      }
      dst[x] = static_cast<unsigned char>(v & 0xff);
    }
  }

  Image img;
  img.width = width;
  img.height = height;
  img.rgb.resize(static_cast<std::size_t>(width) * height * 3);
  for (std::size_t i = 0; i < static_cast<std::size_t>(width) * height; ++i) {
    const unsigned char* px = flat.data() + i * channels;
    if (channels == 1) {
      img.rgb[i * 3] = img.rgb[i * 3 + 1] = img.rgb[i * 3 + 2] = px[0];
    } else {
      img.rgb[i * 3] = px[0];
      img.rgb[i * 3 + 1] = px[1];
      img.rgb[i * 3 + 2] = px[2];
    }
  }
  return img;
}

inline void write_png(const Image& img, const std::filesystem::path& path) {
  atomic_write_file(path, encode_png(img));
}

inline Image read_png(const std::filesystem::path& path) {
  return decode_png(read_file(path));
}

}  // namespace biaslab
