#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace s3ta {

/// Pixels are (batch, height, width, channels) with intensities in [0, 1].
struct ImageBatch {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> pixels;
  std::vector<int> labels;

  ImageBatch() = default;
  ImageBatch(int h, int w, int c, std::size_t count)
      : height(h), width(w), channels(c), pixels(count * h * w * c, 0.0f), labels(count, 0) {}

  std::size_t size() const { return labels.size(); }
  std::size_t image_size() const { return static_cast<std::size_t>(height) * width * channels; }
  std::span<const float> image(std::size_t i) const {
    return {pixels.data() + i * image_size(), image_size()};
  }
  std::span<float> image(std::size_t i) { return {pixels.data() + i * image_size(), image_size()}; }

  /// Checks shape consistency, pixel range and label range.
  void validate(int num_classes) const;
};

}  // namespace s3ta
