#include "cli/output.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>

#include "s3ta/errors.hpp"
#include "s3ta/file_io.hpp"

namespace s3ta::cli {

void OutputSet::add(std::string path, std::string contents) { files_.emplace_back(std::move(path), std::move(contents)); }

void OutputSet::commit() {
  namespace fs = std::filesystem;
  std::vector<std::string> staged;
  auto discard = [&] {
    std::error_code ec;
    for (const auto& s : staged) fs::remove(s, ec);
  };
  try {
    for (const auto& [path, contents] : files_) {
      const auto parent = fs::path(path).parent_path();
      if (!parent.empty()) ensure_directory(parent.string());
      const std::string tmp = path + ".staged";
      write_file_atomic(tmp, contents);
      staged.push_back(tmp);
    }
    for (std::size_t i = 0; i < files_.size(); ++i) {
      std::error_code ec;
      fs::rename(staged[i], files_[i].first, ec);
      if (ec) throw IoError("cannot move " + staged[i] + " into place: " + ec.message());
    }
  } catch (...) {
    discard();
    throw;
  }
  files_.clear();
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("SHA-256 computation failed");
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

std::string format_landscape(const LandscapeGrid& grid) {
  char buf[64];
  std::string out = "u\\v";
  for (double v : grid.v_axis) {
    std::snprintf(buf, sizeof buf, ",%.4f", v);
    out += buf;
  }
  out += "\n";
  for (std::size_t i = 0; i < grid.u_axis.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.4f", grid.u_axis[i]);
    out += buf;
    for (std::size_t j = 0; j < grid.v_axis.size(); ++j) {
      std::snprintf(buf, sizeof buf, ",%.6f", grid.loss_at(static_cast<int>(i), static_cast<int>(j)));
      out += buf;
    }
    out += "\n";
  }
  return out;
}

std::string format_footprint(const LandscapeGrid& grid) {
  std::string out = "u,v\n";
  char buf[64];
  for (const auto& [u, v] : grid.footprint) {
    std::snprintf(buf, sizeof buf, "%.6f,%.6f\n", u, v);
    out += buf;
  }
  return out;
}

RasterImage render_heatmap(const LandscapeGrid& grid, int cell) {
  const int nu = static_cast<int>(grid.u_axis.size());
  const int nv = static_cast<int>(grid.v_axis.size());
  const auto [lo_it, hi_it] = std::minmax_element(grid.losses.begin(), grid.losses.end());
  const double lo = *lo_it, span = std::max(*hi_it - lo, 1e-12);
  // Rows run from u = +1 at the top to u = -1 at the bottom, columns from v = -1 to +1.
  RasterImage img{nv * cell, nu * cell, 3, {}};
  img.data.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  for (int y = 0; y < img.height; ++y) {
    const int i = nu - 1 - y / cell;
    for (int x = 0; x < img.width; ++x) {
      const int j = x / cell;
      const double t = (grid.loss_at(i, j) - lo) / span;
      auto* px = &img.data[(static_cast<std::size_t>(y) * img.width + x) * 3];
      px[0] = static_cast<std::uint8_t>(std::lround(255.0 * t));
      px[1] = static_cast<std::uint8_t>(std::lround(255.0 * (1.0 - std::abs(2.0 * t - 1.0)) * 0.6));
      px[2] = static_cast<std::uint8_t>(std::lround(255.0 * (1.0 - t)));
    }
  }
  // Map axis units [-1, 1] to pixel centres of the first/last cells.
  auto to_px = [&](double a, int n_cells) { return (a + 1.0) / 2.0 * (n_cells - 1) * cell + cell / 2.0; };
  for (std::size_t p = 0; p + 1 < grid.footprint.size(); ++p) {
    const auto [u0, v0] = grid.footprint[p];
    const auto [u1, v1] = grid.footprint[p + 1];
    for (int s = 0; s <= 16; ++s) {
      const double f = s / 16.0;
      const double u = u0 + f * (u1 - u0), v = v0 + f * (v1 - v0);
      if (std::abs(u) > 1.0 || std::abs(v) > 1.0) continue;
      const int x = static_cast<int>(std::lround(to_px(v, nv)));
      const int y = img.height - 1 - static_cast<int>(std::lround(to_px(u, nu)));
      if (x < 0 || y < 0 || x >= img.width || y >= img.height) continue;
      auto* px = &img.data[(static_cast<std::size_t>(y) * img.width + x) * 3];
      px[0] = px[1] = px[2] = 255;
    }
  }
  return img;
}

}  // namespace s3ta::cli
