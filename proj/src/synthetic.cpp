#include <algorithm>
#include <cmath>
#include <numbers>

#include "s3ta/dataset.hpp"
#include "s3ta/errors.hpp"
#include "s3ta/image_io.hpp"
#include "s3ta/rng.hpp"

namespace s3ta {

ImageBatch make_synthetic(std::size_t count, std::uint64_t seed, int height, int width, int channels,
                          int num_classes) {
  if (height < 1 || width < 1 || channels < 1) throw InvalidArgument("image dimensions must be positive");
  if (num_classes < 2 || num_classes > 256) throw InvalidArgument("num_classes must lie in [2, 256]");
  constexpr double pi = std::numbers::pi;
  ImageBatch out(height, width, channels, count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng = make_rng(seed, {i});
    const int label = static_cast<int>(i % num_classes);
    out.labels[i] = label;
    const double angle = pi * label / num_classes + std::normal_distribution<double>(0.0, 0.05)(rng);
    const double freq = 2.0 + label % 3;
    const double phase = std::uniform_real_distribution<double>(0.0, 2.0 * pi)(rng);
    const double contrast = std::uniform_real_distribution<double>(0.5, 1.0)(rng);
    std::normal_distribution<double> noise(0.0, 0.08);
    const double ca = std::cos(angle), sa = std::sin(angle);
    auto img = out.image(i);
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const double t = (x * ca + y * sa) / width;
        const double wave = std::sin(2.0 * pi * freq * t + phase);
        for (int c = 0; c < channels; ++c) {
          // Per-class tint: channel gains cycle with the label.
          const double gain = 0.4 + 0.6 * std::abs(std::cos(pi * (label + c * 3) / num_classes));
          const double v = 0.5 + 0.5 * contrast * gain * wave + noise(rng);
          // Quantized to bytes so the set survives the record format unchanged.
          img[(static_cast<std::size_t>(y) * width + x) * channels + c] = to_byte(static_cast<float>(v)) / 255.0f;
        }
      }
    }
  }
  return out;
}

}  // namespace s3ta
