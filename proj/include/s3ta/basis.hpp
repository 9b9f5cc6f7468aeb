#pragma once

#include <vector>

namespace s3ta {

/// Fixed Fourier positional tensor, (height, width, channels) with
/// channels = (2F)^2. Channel p*2F + q holds f_p(u) * f_q(v) where
/// u = (x + 0.5) / width, v = (y + 0.5) / height, f_{2i} = cos(pi (i+1) t)
/// and f_{2i+1} = sin(pi (i+1) t).
struct SpatialBasis {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> values;

  double at(int y, int x, int c) const {
    return values[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

SpatialBasis build_spatial_basis(int height, int width, int frequencies);

}  // namespace s3ta
