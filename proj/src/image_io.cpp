#include "s3ta/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "s3ta/errors.hpp"
#include "s3ta/file_io.hpp"

namespace s3ta {
namespace {

// Reads one header token, skipping whitespace and '#' comments.
int header_int(const std::string& bytes, std::size_t& pos) {
  for (;;) {
    while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (pos < bytes.size() && bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  const std::size_t start = pos;
  long value = 0;
  while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
    value = value * 10 + (bytes[pos] - '0');
    if (value > 1 << 20) throw FormatError("header value too large", start);
    ++pos;
  }
  if (pos == start) throw FormatError("expected a number in the image header", start);
  return static_cast<int>(value);
}

}  // namespace

std::string encode_pnm(const RasterImage& image) {
  if (image.channels != 1 && image.channels != 3) throw InvalidArgument("PNM images have 1 or 3 channels");
  if (image.data.size() != static_cast<std::size_t>(image.width) * image.height * image.channels)
    throw InvalidArgument("raster data size does not match its shape");
  std::string out = (image.channels == 1 ? "P5\n" : "P6\n") + std::to_string(image.width) + " " +
                    std::to_string(image.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(image.data.data()), image.data.size());
  return out;
}

RasterImage decode_pnm(const std::string& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
    throw FormatError("not a binary PGM/PPM file", 0);
  RasterImage img;
  img.channels = bytes[1] == '5' ? 1 : 3;
  std::size_t pos = 2;
  img.width = header_int(bytes, pos);
  img.height = header_int(bytes, pos);
  const int maxval = header_int(bytes, pos);
  if (img.width < 1 || img.height < 1) throw FormatError("empty image", pos);
  if (maxval != 255) throw FormatError("only 8-bit images (maxval 255) are supported", pos);
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
    throw FormatError("missing whitespace after the header", pos);
  ++pos;
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height * img.channels;
  if (bytes.size() - pos < n) throw FormatError("pixel data is truncated", bytes.size());
  img.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                  bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
  return img;
}

void write_pnm(const std::string& path, const RasterImage& image) { write_file_atomic(path, encode_pnm(image)); }

RasterImage read_pnm(const std::string& path) { return decode_pnm(read_file(path)); }

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(static_cast<double>(v), 0.0, 1.0)));
}

RasterImage to_raster(std::span<const float> pixels, int height, int width, int channels) {
  if (pixels.size() != static_cast<std::size_t>(height) * width * channels)
    throw InvalidArgument("pixel buffer does not match the image shape");
  RasterImage img{width, height, channels, {}};
  img.data.resize(pixels.size());
  std::transform(pixels.begin(), pixels.end(), img.data.begin(), to_byte);
  return img;
}

}  // namespace s3ta
