#pragma once

#include "uda/imgproc.hpp"

#include <filesystem>
#include <vector>

namespace uda {

/// Per-pixel category map, row-major.
struct LabelMap {
  int width = 0;
  int height = 0;
  std::vector<int> labels;

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
  bool operator==(const LabelMap&) const = default;
};

// Binary netpbm, maxval 255 only. Errors are std::runtime_error naming the file.
void write_ppm(const std::filesystem::path& path, const RgbImage& img);
RgbImage read_ppm(const std::filesystem::path& path);

/// Category index stored as the gray level (P5).
void write_label_pgm(const std::filesystem::path& path, const LabelMap& labels);
LabelMap read_label_pgm(const std::filesystem::path& path);

}  // namespace uda
