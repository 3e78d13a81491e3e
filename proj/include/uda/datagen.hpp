#pragma once

// Synthetic two-domain segmentation benchmark.
//
// Scenes are random rectangles and ellipses over a background category.
// A DomainProfile turns a scene into an image: each category has a base Lab
// color, spread and optional stripe texture; the domain then applies a color
// cast, a lightness gamma and pixel noise. Image-level shift comes from the
// global profile terms, category-level shift from per-category palette
// differences between the two profiles.

#include "uda/imgproc.hpp"
#include "uda/netpbm.hpp"

#include <json.hpp>

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace uda {

struct CategoryAppearance {
  Eigen::Vector3d lab{50.0, 0.0, 0.0};
  double spread = 0.0;             // per-pixel Gaussian sigma on L, a, b
  double instance_spread = 0.0;    // per-shape Gaussian sigma on L, a, b
  double texture_amplitude = 0.0;  // stripe amplitude on L
  int texture_period = 4;          // stripe period in pixels (diagonal)
};

struct DomainProfile {
  double gamma_shift = 1.0;         // L/100 raised to this power
  Eigen::Vector2d color_cast{0, 0};  // added to (a, b)
  double noise_sigma = 0.0;          // RGB noise, 8-bit units
  double gamma_jitter = 0.0;         // per-image gamma multiplier exp(U(-j, j))
  double cast_jitter = 0.0;          // per-image (a, b) offset U(-j, j)
  std::vector<CategoryAppearance> palette;

  void validate() const;
};

struct SceneSpec {
  int num_categories = 5;
  int shapes_per_image = 6;
  int width = 32;
  int height = 32;
  int min_shape_size = 4;
  int max_shape_size = 14;

  void validate() const;
};

LabelMap generate_scene(const SceneSpec& spec, std::uint64_t seed);
RgbImage render_domain(const LabelMap& layout, const DomainProfile& profile, std::uint64_t seed);

struct BenchmarkSpec {
  SceneSpec scene;
  DomainProfile source;
  DomainProfile target;
  int source_train = 200;
  int target_train = 100;
  int target_eval = 50;
  std::uint64_t seed = 7;
};

BenchmarkSpec default_benchmark();

// ---------------------------------------------------------------------------
// Manifests and in-memory datasets.

struct DatasetManifest {
  std::string split;
  std::string domain;
  std::filesystem::path base_dir;         // directory holding the manifest
  std::vector<std::string> images;        // relative to base_dir
  std::optional<std::vector<std::string>> labels;
  nlohmann::ordered_json generation = nlohmann::ordered_json::object();

  std::size_t count() const { return images.size(); }
  bool labelled() const { return labels.has_value(); }
  std::filesystem::path image_path(std::size_t i) const { return base_dir / images[i]; }
  std::filesystem::path label_path(std::size_t i) const { return base_dir / labels->at(i); }
};

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
/// Validates schema and that every referenced file exists.
DatasetManifest read_manifest(const std::filesystem::path& path);

struct LabeledSet {
  std::vector<RgbImage> images;
  std::vector<LabelMap> labels;
};

/// Images only; there is no way to carry labels through this type.
struct UnlabeledSet {
  std::vector<RgbImage> images;
};

LabeledSet load_labeled(const DatasetManifest& manifest);
UnlabeledSet load_unlabeled(const DatasetManifest& manifest);

struct BenchmarkPaths {
  std::filesystem::path source_train;
  std::filesystem::path target_train;
  std::filesystem::path target_train_gt;
  std::filesystem::path target_eval;
};

BenchmarkPaths benchmark_paths(const std::filesystem::path& dir);

/// Writes every split, its manifest and benchmark.json under `dir`.
BenchmarkPaths generate_benchmark(const BenchmarkSpec& spec, const std::filesystem::path& dir);

/// In-memory splits, identical to what generate_benchmark writes.
struct BenchmarkData {
  LabeledSet source_train;
  UnlabeledSet target_train;
  LabeledSet target_train_gt;
  LabeledSet target_eval;
};
BenchmarkData generate_benchmark_data(const BenchmarkSpec& spec);

nlohmann::ordered_json to_json(const DomainProfile& profile);
nlohmann::ordered_json to_json(const SceneSpec& scene);
nlohmann::ordered_json to_json(const BenchmarkSpec& spec);
BenchmarkSpec benchmark_from_json(const nlohmann::json& j);

}  // namespace uda
