#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "s3ta/eval.hpp"
#include "s3ta/image_io.hpp"

namespace s3ta::cli {

/// Files produced by a command, held in memory until commit(). commit()
/// stages every file next to its destination and only then renames them
/// into place, so a failing command leaves no result files behind.
class OutputSet {
 public:
  void add(std::string path, std::string contents);
  void commit();
  const std::vector<std::pair<std::string, std::string>>& files() const { return files_; }

 private:
  std::vector<std::pair<std::string, std::string>> files_;
};

std::string sha256_hex(std::string_view bytes);

/// u values down the rows, v values across the columns; the first row and
/// column hold the axes in epsilon units.
std::string format_landscape(const LandscapeGrid& grid);
std::string format_footprint(const LandscapeGrid& grid);
/// Loss grid rendered with a blue-to-red ramp, `cell` pixels per grid cell,
/// with the footprint outline drawn in white.
RasterImage render_heatmap(const LandscapeGrid& grid, int cell = 12);

}  // namespace s3ta::cli
