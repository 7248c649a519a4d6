#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace fusseg::png {

struct RgbImage {
  int h = 0, w = 0;
  std::vector<uint8_t> rgb; // interleaved, row-major, 3 bytes per pixel

  RgbImage() = default;
  RgbImage(int h_, int w_) : h(h_), w(w_), rgb(static_cast<size_t>(h_) * w_ * 3, 0) {}
  uint8_t* pixel(int i, int j) { return rgb.data() + (static_cast<size_t>(i) * w + j) * 3; }
  const uint8_t* pixel(int i, int j) const { return rgb.data() + (static_cast<size_t>(i) * w + j) * 3; }
};

// Minimal deterministic PNG writer: 8-bit RGB, zlib stream with stored
// (uncompressed) deflate blocks. Byte-identical output for identical input.
void write_rgb(const std::filesystem::path& path, const RgbImage& img);
std::vector<uint8_t> encode_rgb(const RgbImage& img);

} // namespace fusseg::png
