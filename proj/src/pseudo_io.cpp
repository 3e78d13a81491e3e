#include "uda/pseudo_io.hpp"

#include "uda/netpbm.hpp"

#include <json.hpp>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace uda {

namespace fs = std::filesystem;

namespace {

constexpr char kConfMagic[8] = {'U', 'D', 'A', 'C', 'O', 'N', 'F', '1'};

std::string stem_for(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "pl_%04zu", i);
  return buf;
}

void write_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is, const fs::path& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error(path.string() + ": truncated");
  return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_confidence(const fs::path& path, const PseudoLabelMap& m) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error(path.string() + ": cannot open for writing");
  os.write(kConfMagic, 8);
  write_u32(os, static_cast<std::uint32_t>(m.width));
  write_u32(os, static_cast<std::uint32_t>(m.height));
  for (double c : m.confidence) {
    const float f = static_cast<float>(c);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    write_u32(os, bits);
  }
}

std::vector<double> read_confidence(const fs::path& path, int width, int height) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error(path.string() + ": cannot open");
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kConfMagic, 8) != 0) {
    throw std::runtime_error(path.string() + ": bad confidence raster magic");
  }
  const auto w = read_u32(is, path), h = read_u32(is, path);
  if (static_cast<int>(w) != width || static_cast<int>(h) != height) {
    throw std::runtime_error(path.string() + ": raster size differs from label map");
  }
  std::vector<double> out(static_cast<std::size_t>(w) * h);
  for (auto& c : out) {
    const std::uint32_t bits = read_u32(is, path);
    float f;
    std::memcpy(&f, &bits, 4);
    c = f;
  }
  return out;
}

}  // namespace

void save_pseudo_labels(const PseudoLabelSet& set, const fs::path& dir) {
  fs::create_directories(dir);
  nlohmann::ordered_json j;
  j["version"] = 1;
  j["thresholds"] = set.thresholds;
  j["valid_fraction"] = set.valid_fraction();
  auto& images = j["images"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < set.maps.size(); ++i) {
    const auto& m = set.maps[i];
    const std::string stem = stem_for(i);
    write_label_pgm(dir / (stem + ".pgm"), LabelMap{m.width, m.height, m.labels});
    write_confidence(dir / (stem + ".conf"), m);
    images.push_back({{"labels", stem + ".pgm"}, {"confidence", stem + ".conf"}});
  }
  std::ofstream os(dir / "pseudo_labels.json", std::ios::trunc);
  os << j.dump(2) << "\n";
}

PseudoLabelSet load_pseudo_labels(const fs::path& dir) {
  std::ifstream is(dir / "pseudo_labels.json");
  if (!is) throw std::runtime_error((dir / "pseudo_labels.json").string() + ": cannot open");
  const auto j = nlohmann::json::parse(is);
  if (j.value("version", 0) != 1) throw std::runtime_error("pseudo_labels.json: unknown version");
  PseudoLabelSet set;
  set.thresholds = j.at("thresholds").get<std::vector<double>>();
  for (const auto& entry : j.at("images")) {
    LabelMap lm = read_label_pgm(dir / entry.at("labels").get<std::string>());
    PseudoLabelMap m{lm.height, lm.width, std::move(lm.labels), {}, {}};
    m.confidence = read_confidence(dir / entry.at("confidence").get<std::string>(), m.width, m.height);
    for (int label : m.labels) {
      if (label >= static_cast<int>(set.thresholds.size())) {
        throw std::runtime_error("pseudo labels: label " + std::to_string(label) +
                                 " has no threshold");
      }
    }
    set.maps.push_back(std::move(m));
  }
  apply_thresholds(set);
  return set;
}

}  // namespace uda
