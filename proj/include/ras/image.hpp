#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "ras/errors.hpp"

namespace ras {

/// 8-bit RGB raster, row-major, 3 bytes per pixel.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> rgb;

  Image() = default;
  Image(int w, int h) : width(w), height(h), rgb(size_t(w) * h * 3, 0) {}

  bool operator==(const Image&) const = default;

  const uint8_t* px(int y, int x) const { return &rgb[(size_t(y) * width + x) * 3]; }
  void set_px(int y, int x, uint8_t r, uint8_t g, uint8_t b) {
    uint8_t* p = &rgb[(size_t(y) * width + x) * 3];
    p[0] = r;
    p[1] = g;
    p[2] = b;
  }
};

namespace detail {

inline uint32_t crc32(const uint8_t* data, size_t len, uint32_t crc = 0) {
  static const auto table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t n = 0; n < 256; ++n) {
      uint32_t c = n;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[n] = c;
    }
    return t;
  }();
  crc ^= 0xFFFFFFFFu;
  for (size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xFF] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}

inline uint32_t adler32(const std::vector<uint8_t>& data) {
  uint32_t a = 1, b = 0;
  for (uint8_t byte : data) {
    a = (a + byte) % 65521;
    b = (b + a) % 65521;
  }
  return (b << 16) | a;
}

inline void put_u32be(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(uint8_t(v >> 24));
  out.push_back(uint8_t(v >> 16));
  out.push_back(uint8_t(v >> 8));
  out.push_back(uint8_t(v));
}

inline void png_chunk(std::vector<uint8_t>& out, const char* type,
                      const std::vector<uint8_t>& payload) {
  put_u32be(out, uint32_t(payload.size()));
  std::vector<uint8_t> body(type, type + 4);
  body.insert(body.end(), payload.begin(), payload.end());
  out.insert(out.end(), body.begin(), body.end());
  put_u32be(out, crc32(body.data(), body.size()));
}

}  // namespace detail

/// Encode as PNG (truecolor, zlib stream of stored deflate blocks). No
/// external compression library, so the bytes are stable across environments.
inline std::vector<uint8_t> encode_png(const Image& img) {
  std::vector<uint8_t> raw;
  raw.reserve(size_t(img.height) * (size_t(img.width) * 3 + 1));
  for (int y = 0; y < img.height; ++y) {
    raw.push_back(0);  // filter: none
    raw.insert(raw.end(), img.rgb.begin() + size_t(y) * img.width * 3,
               img.rgb.begin() + size_t(y + 1) * img.width * 3);
  }

  std::vector<uint8_t> idat;
  idat.push_back(0x78);
  idat.push_back(0x01);
  size_t pos = 0;
  do {
    size_t n = std::min<size_t>(raw.size() - pos, 65535);
    bool final = pos + n == raw.size();
    idat.push_back(final ? 1 : 0);
    idat.push_back(uint8_t(n & 0xFF));
    idat.push_back(uint8_t(n >> 8));
    idat.push_back(uint8_t(~n & 0xFF));
    idat.push_back(uint8_t((~n >> 8) & 0xFF));
    idat.insert(idat.end(), raw.begin() + pos, raw.begin() + pos + n);
    pos += n;
  } while (pos < raw.size());
  detail::put_u32be(idat, detail::adler32(raw));

  std::vector<uint8_t> out = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  std::vector<uint8_t> ihdr;
  detail::put_u32be(ihdr, uint32_t(img.width));
  detail::put_u32be(ihdr, uint32_t(img.height));
  ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});  // 8-bit, truecolor
  detail::png_chunk(out, "IHDR", ihdr);
  detail::png_chunk(out, "IDAT", idat);
  detail::png_chunk(out, "IEND", {});
  return out;
}

inline void write_png(const std::string& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot open " + path + " for writing");
  auto bytes = encode_png(img);
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) fail(ErrorCode::IoError, "short write to " + path);
}

}  // namespace ras
