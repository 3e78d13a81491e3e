#pragma once

#include "uda/regularizers.hpp"

#include <filesystem>

namespace uda {

// On disk a pseudo-label set is, per image, a label PGM (pl_NNNN.pgm) and a
// confidence raster (pl_NNNN.conf: "UDACONF1", u32 width, u32 height, then
// little-endian f32 per pixel), plus pseudo_labels.json listing the files and
// the per-category thresholds. Validity is recomputed from the thresholds on
// load. Confidences round-trip at f32 precision.
void save_pseudo_labels(const PseudoLabelSet& set, const std::filesystem::path& dir);
PseudoLabelSet load_pseudo_labels(const std::filesystem::path& dir);

}  // namespace uda
