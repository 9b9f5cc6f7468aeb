#pragma once

// Binary PGM (P5) and PPM (P6) with 8-bit samples.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace s3ta {

struct RasterImage {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 or 3
  std::vector<std::uint8_t> data;  // row-major, interleaved
};

std::string encode_pnm(const RasterImage& image);
/// Throws FormatError on malformed headers or short pixel data.
RasterImage decode_pnm(const std::string& bytes);

void write_pnm(const std::string& path, const RasterImage& image);
RasterImage read_pnm(const std::string& path);

/// round(255 * v) with v clamped to [0, 1].
std::uint8_t to_byte(float v);
/// An HWC float image in [0, 1] as a raster.
RasterImage to_raster(std::span<const float> pixels, int height, int width, int channels);

}  // namespace s3ta
