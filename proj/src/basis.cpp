#include "s3ta/basis.hpp"

#include <cmath>
#include <numbers>

#include "s3ta/errors.hpp"

namespace s3ta {
namespace {

double fourier(int index, double t) {
  const double freq = std::numbers::pi * (index / 2 + 1);
  return index % 2 == 0 ? std::cos(freq * t) : std::sin(freq * t);
}

}  // namespace

SpatialBasis build_spatial_basis(int height, int width, int frequencies) {
  if (height < 1 || width < 1 || frequencies < 1)
    throw InvalidArgument("spatial basis dimensions must be positive");
  const int n = 2 * frequencies;
  SpatialBasis basis{height, width, n * n, {}};
  basis.values.resize(static_cast<std::size_t>(height) * width * n * n);
  std::vector<double> fu(n), fv(n);
  for (int y = 0; y < height; ++y) {
    const double v = (y + 0.5) / height;
    for (int i = 0; i < n; ++i) fv[i] = fourier(i, v);
    for (int x = 0; x < width; ++x) {
      const double u = (x + 0.5) / width;
      for (int i = 0; i < n; ++i) fu[i] = fourier(i, u);
      double* out = &basis.values[(static_cast<std::size_t>(y) * width + x) * n * n];
      for (int p = 0; p < n; ++p)
        for (int q = 0; q < n; ++q) out[p * n + q] = fu[p] * fv[q];
    }
  }
  return basis;
}

}  // namespace s3ta
