#include "uda/datagen.hpp"

#include "uda/random.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

namespace uda {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

void DomainProfile::validate() const {
  if (!(gamma_shift >= 0.3 && gamma_shift <= 3.0)) {
    throw std::invalid_argument("DomainProfile: gamma_shift must be in [0.3, 3]");
  }
  if (noise_sigma < 0 || gamma_jitter < 0 || cast_jitter < 0) {
    throw std::invalid_argument("DomainProfile: noise and jitter must be >= 0");
  }
  for (const auto& c : palette) {
    if (c.spread < 0 || c.instance_spread < 0 || c.texture_amplitude < 0 || c.texture_period < 2) {
      throw std::invalid_argument("DomainProfile: invalid category appearance");
    }
  }
}

void SceneSpec::validate() const {
  if (num_categories < 2) throw std::invalid_argument("SceneSpec: need at least 2 categories");
  if (width < 1 || height < 1 || shapes_per_image < 0) {
    throw std::invalid_argument("SceneSpec: invalid size or shape count");
  }
  if (min_shape_size < 1 || max_shape_size < min_shape_size) {
    throw std::invalid_argument("SceneSpec: invalid shape size range");
  }
}

LabelMap generate_scene(const SceneSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  LabelMap map{spec.width, spec.height, std::vector<int>(spec.width * spec.height, 0)};
  std::uniform_int_distribution<int> category(1, spec.num_categories - 1);
  std::uniform_int_distribution<int> size(spec.min_shape_size, spec.max_shape_size);
  std::uniform_int_distribution<int> cx(0, spec.width - 1), cy(0, spec.height - 1);
  std::bernoulli_distribution ellipse(0.5);
  for (int s = 0; s < spec.shapes_per_image; ++s) {
    const int c = category(rng);
    const int w = size(rng), h = size(rng);
    const int x0 = cx(rng), y0 = cy(rng);
    const bool round = ellipse(rng);
    const double rx = w / 2.0, ry = h / 2.0;
    for (int y = std::max(0, y0 - h / 2); y <= std::min(spec.height - 1, y0 + h / 2); ++y) {
      for (int x = std::max(0, x0 - w / 2); x <= std::min(spec.width - 1, x0 + w / 2); ++x) {
        if (round) {
          const double dx = (x - x0) / rx, dy = (y - y0) / ry;
          if (dx * dx + dy * dy > 1.0) continue;
        }
        map.labels[y * spec.width + x] = c;
      }
    }
  }
  return map;
}

RgbImage render_domain(const LabelMap& layout, const DomainProfile& profile, std::uint64_t seed) {
  profile.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double half) {
    return half > 0 ? std::uniform_real_distribution<double>(-half, half)(rng) : 0.0;
  };

  const double gamma = profile.gamma_shift * std::exp(uniform(profile.gamma_jitter));
  const Eigen::Vector2d cast =
      profile.color_cast + Eigen::Vector2d(uniform(profile.cast_jitter), uniform(profile.cast_jitter));
  std::vector<Eigen::Vector3d> offsets(profile.palette.size());
  for (std::size_t c = 0; c < profile.palette.size(); ++c) {
    const double s = profile.palette[c].instance_spread;
    offsets[c] = Eigen::Vector3d(s * unit(rng), s * unit(rng), s * unit(rng));
  }

  RgbImage img(layout.width, layout.height);
  for (int y = 0; y < layout.height; ++y) {
    for (int x = 0; x < layout.width; ++x) {
      const int c = layout.labels[y * layout.width + x];
      if (c < 0 || c >= static_cast<int>(profile.palette.size())) {
        throw std::invalid_argument("render_domain: category " + std::to_string(c) +
                                    " has no palette entry");
      }
      const CategoryAppearance& look = profile.palette[c];
      Eigen::Vector3d lab = look.lab + offsets[c];
      if (look.spread > 0) lab += look.spread * Eigen::Vector3d(unit(rng), unit(rng), unit(rng));
      if (look.texture_amplitude > 0) {
        const int phase = ((x + y) / std::max(1, look.texture_period / 2)) % 2;
        lab.x() += phase ? look.texture_amplitude : -look.texture_amplitude;
      }
      lab.y() += cast.x();
      lab.z() += cast.y();
      lab.x() = 100.0 * std::pow(std::clamp(lab.x(), 0.0, 100.0) / 100.0, gamma);
      auto rgb = lab_to_srgb(lab);
      std::uint8_t* px = img.pixel(x, y);
      for (int k = 0; k < 3; ++k) {
        double v = rgb[k];
        if (profile.noise_sigma > 0) v += profile.noise_sigma * unit(rng);
        px[k] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
      }
    }
  }
  return img;
}

BenchmarkSpec default_benchmark() {
  BenchmarkSpec spec;
  spec.scene = SceneSpec{};

  // Background, two well separated categories and a pair of close ones that
  // differ mostly by texture.
  std::vector<CategoryAppearance> source = {
      {{45, 0, 0}, 3.0, 2.0, 0.0, 4},
      {{55, -35, 35}, 3.0, 3.0, 0.0, 4},
      {{65, 0, -35}, 3.0, 3.0, 0.0, 4},
      {{48, 40, 25}, 3.0, 3.0, 0.0, 4},
      {{50, 34, 32}, 3.0, 3.0, 8.0, 4},
  };
  spec.source.palette = source;
  spec.source.noise_sigma = 2.0;

  std::vector<CategoryAppearance> target = source;
  target[1].lab += Eigen::Vector3d(-4, 8, -6);
  target[2].lab += Eigen::Vector3d(5, -6, 8);
  target[3].lab += Eigen::Vector3d(-3, -6, 4);
  target[4].lab += Eigen::Vector3d(3, 4, -4);
  spec.target.palette = target;
  spec.target.gamma_shift = 1.6;
  spec.target.color_cast = {10.0, -12.0};
  spec.target.noise_sigma = 3.0;
  spec.target.gamma_jitter = 0.15;
  spec.target.cast_jitter = 4.0;
  return spec;
}

// ---------------------------------------------------------------------------
// JSON

ordered_json to_json(const DomainProfile& p) {
  ordered_json palette = ordered_json::array();
  for (const auto& c : p.palette) {
    palette.push_back({{"lab", {c.lab.x(), c.lab.y(), c.lab.z()}},
                       {"spread", c.spread},
                       {"instance_spread", c.instance_spread},
                       {"texture_amplitude", c.texture_amplitude},
                       {"texture_period", c.texture_period}});
  }
  return {{"gamma_shift", p.gamma_shift},
          {"color_cast", {p.color_cast.x(), p.color_cast.y()}},
          {"noise_sigma", p.noise_sigma},
          {"gamma_jitter", p.gamma_jitter},
          {"cast_jitter", p.cast_jitter},
          {"palette", palette}};
}

ordered_json to_json(const SceneSpec& s) {
  return {{"num_categories", s.num_categories}, {"shapes_per_image", s.shapes_per_image},
          {"width", s.width},                   {"height", s.height},
          {"min_shape_size", s.min_shape_size}, {"max_shape_size", s.max_shape_size}};
}

ordered_json to_json(const BenchmarkSpec& spec) {
  return {{"seed", spec.seed},
          {"source_train", spec.source_train},
          {"target_train", spec.target_train},
          {"target_eval", spec.target_eval},
          {"scene", to_json(spec.scene)},
          {"source", to_json(spec.source)},
          {"target", to_json(spec.target)}};
}

namespace {

DomainProfile profile_from_json(const nlohmann::json& j, const DomainProfile& defaults) {
  DomainProfile p = defaults;
  p.gamma_shift = j.value("gamma_shift", p.gamma_shift);
  if (j.contains("color_cast")) p.color_cast = Eigen::Vector2d(j["color_cast"].at(0).get<double>(), j["color_cast"].at(1).get<double>());
  p.noise_sigma = j.value("noise_sigma", p.noise_sigma);
  p.gamma_jitter = j.value("gamma_jitter", p.gamma_jitter);
  p.cast_jitter = j.value("cast_jitter", p.cast_jitter);
  if (j.contains("palette")) {
    p.palette.clear();
    for (const auto& c : j["palette"]) {
      CategoryAppearance a;
      a.lab = Eigen::Vector3d(c.at("lab").at(0).get<double>(), c.at("lab").at(1).get<double>(),
                              c.at("lab").at(2).get<double>());
      a.spread = c.value("spread", 0.0);
      a.instance_spread = c.value("instance_spread", 0.0);
      a.texture_amplitude = c.value("texture_amplitude", 0.0);
      a.texture_period = c.value("texture_period", 4);
      p.palette.push_back(a);
    }
  }
  p.validate();
  return p;
}

}  // namespace

BenchmarkSpec benchmark_from_json(const nlohmann::json& j) {
  BenchmarkSpec spec = default_benchmark();
  spec.seed = j.value("seed", spec.seed);
  spec.source_train = j.value("source_train", spec.source_train);
  spec.target_train = j.value("target_train", spec.target_train);
  spec.target_eval = j.value("target_eval", spec.target_eval);
  if (j.contains("scene")) {
    const auto& s = j["scene"];
    spec.scene.num_categories = s.value("num_categories", spec.scene.num_categories);
    spec.scene.shapes_per_image = s.value("shapes_per_image", spec.scene.shapes_per_image);
    spec.scene.width = s.value("width", spec.scene.width);
    spec.scene.height = s.value("height", spec.scene.height);
    spec.scene.min_shape_size = s.value("min_shape_size", spec.scene.min_shape_size);
    spec.scene.max_shape_size = s.value("max_shape_size", spec.scene.max_shape_size);
  }
  if (j.contains("source")) spec.source = profile_from_json(j["source"], spec.source);
  if (j.contains("target")) spec.target = profile_from_json(j["target"], spec.target);
  spec.scene.validate();
  return spec;
}

// ---------------------------------------------------------------------------
// Manifests

void write_manifest(const fs::path& path, const DatasetManifest& m) {
  ordered_json j;
  j["version"] = 1;
  j["split"] = m.split;
  j["domain"] = m.domain;
  j["count"] = m.images.size();
  j["images"] = m.images;
  if (m.labels) j["labels"] = *m.labels;
  j["generation"] = m.generation;
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error(path.string() + ": cannot open for writing");
  os << j.dump(2) << "\n";
}

DatasetManifest read_manifest(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error(path.string() + ": cannot open manifest");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path.string() + ": malformed manifest: " + e.what());
  }
  if (!j.is_object() || !j.contains("version") || !j.contains("images")) {
    throw std::runtime_error(path.string() + ": manifest missing required keys");
  }
  if (j["version"] != 1) {
    throw std::runtime_error(path.string() + ": unknown manifest version " + j["version"].dump());
  }
  DatasetManifest m;
  m.split = j.value("split", "");
  m.domain = j.value("domain", "");
  m.base_dir = path.parent_path();
  m.images = j["images"].get<std::vector<std::string>>();
  if (j.contains("labels")) {
    m.labels = j["labels"].get<std::vector<std::string>>();
    if (m.labels->size() != m.images.size()) {
      throw std::runtime_error(path.string() + ": label count does not match image count");
    }
  }
  if (j.contains("count") && j["count"].get<std::size_t>() != m.images.size()) {
    throw std::runtime_error(path.string() + ": count does not match image list");
  }
  if (j.contains("generation")) m.generation = ordered_json::parse(j["generation"].dump());
  for (std::size_t i = 0; i < m.count(); ++i) {
    if (!fs::exists(m.image_path(i))) {
      throw std::runtime_error(path.string() + ": missing image file " + m.image_path(i).string());
    }
    if (m.labels && !fs::exists(m.label_path(i))) {
      throw std::runtime_error(path.string() + ": missing label file " + m.label_path(i).string());
    }
  }
  return m;
}

LabeledSet load_labeled(const DatasetManifest& m) {
  if (!m.labelled()) {
    throw std::runtime_error("manifest for split '" + m.split + "' carries no labels");
  }
  LabeledSet set;
  for (std::size_t i = 0; i < m.count(); ++i) {
    set.images.push_back(read_ppm(m.image_path(i)));
    set.labels.push_back(read_label_pgm(m.label_path(i)));
    if (set.labels.back().width != set.images.back().width ||
        set.labels.back().height != set.images.back().height) {
      throw std::runtime_error(m.label_path(i).string() + ": label size differs from image");
    }
  }
  return set;
}

UnlabeledSet load_unlabeled(const DatasetManifest& m) {
  UnlabeledSet set;
  for (std::size_t i = 0; i < m.count(); ++i) set.images.push_back(read_ppm(m.image_path(i)));
  return set;
}

// ---------------------------------------------------------------------------
// Benchmark generation

namespace {

enum SplitId : std::uint64_t { kSourceTrain = 1, kTargetTrain = 2, kTargetEval = 3 };

struct RenderedSplit {
  std::vector<RgbImage> images;
  std::vector<LabelMap> labels;
};

RenderedSplit render_split(const BenchmarkSpec& spec, SplitId id, int count,
                           const DomainProfile& profile) {
  RenderedSplit out;
  for (int i = 0; i < count; ++i) {
    const auto layout_seed = derive_seed({spec.seed, id, static_cast<std::uint64_t>(i), 0});
    const auto render_seed = derive_seed({spec.seed, id, static_cast<std::uint64_t>(i), 1});
    LabelMap layout = generate_scene(spec.scene, layout_seed);
    out.images.push_back(render_domain(layout, profile, render_seed));
    out.labels.push_back(std::move(layout));
  }
  return out;
}

std::string indexed(const char* prefix, std::size_t i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%04zu.%s", prefix, i, ext);
  return buf;
}

void write_split(const fs::path& dir, const std::string& name, const std::string& domain,
                 const RenderedSplit& split, bool with_labels, const ordered_json& generation,
                 const fs::path& manifest_path) {
  fs::create_directories(dir / name);
  DatasetManifest m;
  m.split = manifest_path.stem().string();
  m.domain = domain;
  m.base_dir = dir;
  m.generation = generation;
  if (with_labels) m.labels.emplace();
  for (std::size_t i = 0; i < split.images.size(); ++i) {
    const std::string img = name + "/" + indexed("img", i, "ppm");
    write_ppm(dir / img, split.images[i]);
    m.images.push_back(img);
    if (with_labels) {
      const std::string lbl = name + "/" + indexed("lbl", i, "pgm");
      write_label_pgm(dir / lbl, split.labels[i]);
      m.labels->push_back(lbl);
    }
  }
  write_manifest(manifest_path, m);
}

}  // namespace

BenchmarkPaths benchmark_paths(const fs::path& dir) {
  return {dir / "source_train.json", dir / "target_train.json", dir / "target_train_gt.json",
          dir / "target_eval.json"};
}

BenchmarkData generate_benchmark_data(const BenchmarkSpec& spec) {
  spec.scene.validate();
  auto src = render_split(spec, kSourceTrain, spec.source_train, spec.source);
  auto tgt = render_split(spec, kTargetTrain, spec.target_train, spec.target);
  auto eval = render_split(spec, kTargetEval, spec.target_eval, spec.target);
  BenchmarkData data;
  data.source_train = {std::move(src.images), std::move(src.labels)};
  data.target_train.images = tgt.images;
  data.target_train_gt = {std::move(tgt.images), std::move(tgt.labels)};
  data.target_eval = {std::move(eval.images), std::move(eval.labels)};
  return data;
}

BenchmarkPaths generate_benchmark(const BenchmarkSpec& spec, const fs::path& dir) {
  fs::create_directories(dir);
  const BenchmarkPaths paths = benchmark_paths(dir);
  const auto data = generate_benchmark_data(spec);
  auto generation = [&](const char* domain) {
    return ordered_json{{"seed", spec.seed},
                        {"scene", to_json(spec.scene)},
                        {"profile", to_json(std::string(domain) == "source" ? spec.source : spec.target)}};
  };
  write_split(dir, "source_train", "source",
              {data.source_train.images, data.source_train.labels}, true, generation("source"),
              paths.source_train);
  write_split(dir, "target_train", "target", {data.target_train.images, {}}, false,
              generation("target"), paths.target_train);
  write_split(dir, "target_train_gt", "target",
              {data.target_train_gt.images, data.target_train_gt.labels}, true,
              generation("target"), paths.target_train_gt);
  write_split(dir, "target_eval", "target", {data.target_eval.images, data.target_eval.labels},
              true, generation("target"), paths.target_eval);
  std::ofstream os(dir / "benchmark.json", std::ios::trunc);
  os << to_json(spec).dump(2) << "\n";
  return paths;
}

}  // namespace uda
