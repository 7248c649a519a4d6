#include "fusseg/png.hpp"

#include <array>
#include <cstring>
#include <fstream>

#include "fusseg/common.hpp"

namespace fusseg::png {

namespace {

uint32_t crc32(std::span<const uint8_t> data) {
  static const auto table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t n = 0; n < 256; ++n) {
      uint32_t c = n;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[n] = c;
    }
    return t;
  }();
  uint32_t c = 0xFFFFFFFFu;
  for (uint8_t b : data) c = table[(c ^ b) & 0xFF] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

uint32_t adler32(std::span<const uint8_t> data) {
  uint32_t a = 1, b = 0;
  for (uint8_t x : data) {
    a = (a + x) % 65521u;
    b = (b + a) % 65521u;
  }
  return (b << 16) | a;
}

void put_u32_be(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

void put_chunk(std::vector<uint8_t>& out, const char type[4], std::span<const uint8_t> payload) {
  put_u32_be(out, static_cast<uint32_t>(payload.size()));
  std::vector<uint8_t> body(payload.size() + 4);
  std::memcpy(body.data(), type, 4);
  std::memcpy(body.data() + 4, payload.data(), payload.size());
  out.insert(out.end(), body.begin(), body.end());
  put_u32_be(out, crc32(body));
}

} // namespace

std::vector<uint8_t> encode_rgb(const RgbImage& img) {
  require(img.h >= 1 && img.w >= 1, "png: empty image");
  require(img.rgb.size() == static_cast<size_t>(img.h) * img.w * 3, "png: buffer size mismatch");

  std::vector<uint8_t> out{0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};

  std::vector<uint8_t> ihdr;
  put_u32_be(ihdr, static_cast<uint32_t>(img.w));
  put_u32_be(ihdr, static_cast<uint32_t>(img.h));
  ihdr.push_back(8); // bit depth
  ihdr.push_back(2); // color type: truecolor
  ihdr.push_back(0); // compression
  ihdr.push_back(0); // filter
  ihdr.push_back(0); // interlace
  put_chunk(out, "IHDR", ihdr);

  // Raw scanlines, each prefixed with filter type 0.
  const size_t stride = static_cast<size_t>(img.w) * 3;
  std::vector<uint8_t> raw;
  raw.reserve(static_cast<size_t>(img.h) * (stride + 1));
  for (int i = 0; i < img.h; ++i) {
    raw.push_back(0);
    raw.insert(raw.end(), img.rgb.begin() + i * stride, img.rgb.begin() + (i + 1) * stride);
  }

  // zlib stream with stored deflate blocks (max 65535 bytes each).
  std::vector<uint8_t> z{0x78, 0x01};
  size_t pos = 0;
  while (pos < raw.size()) {
    const size_t chunk = std::min<size_t>(65535, raw.size() - pos);
    const bool last = pos + chunk == raw.size();
    z.push_back(last ? 1 : 0);
    z.push_back(static_cast<uint8_t>(chunk & 0xFF));
    z.push_back(static_cast<uint8_t>(chunk >> 8));
    z.push_back(static_cast<uint8_t>(~chunk & 0xFF));
    z.push_back(static_cast<uint8_t>((~chunk >> 8) & 0xFF));
    z.insert(z.end(), raw.begin() + pos, raw.begin() + pos + chunk);
    pos += chunk;
  }
  put_u32_be(z, adler32(raw));
  put_chunk(out, "IDAT", z);
  put_chunk(out, "IEND", {});
  return out;
}

void write_rgb(const std::filesystem::path& path, const RgbImage& img) {
  const auto bytes = encode_rgb(img);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("png: cannot open for writing: " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("png: write failed: " + path.string());
}

} // namespace fusseg::png
