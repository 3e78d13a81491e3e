#pragma once

// Shared helpers for the test binaries: random inputs and CLI invocation.

#include "uda/datagen.hpp"
#include "uda/imgproc.hpp"

#include <Eigen/Core>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace testing_support {

/// Values in [0, 1] from a mixture of one to three clipped Gaussians.
inline Eigen::ArrayXd random_unit_channel(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int n = 200 + static_cast<int>(rng() % 2000);
  const int modes = 1 + static_cast<int>(rng() % 3);
  std::vector<double> mean(modes), sigma(modes);
  for (int m = 0; m < modes; ++m) {
    mean[m] = 0.05 + 0.9 * unit(rng);
    sigma[m] = 0.01 + 0.2 * unit(rng);
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::ArrayXd v(n);
  for (int i = 0; i < n; ++i) {
    const int m = static_cast<int>(rng() % modes);
    v[i] = std::clamp(mean[m] + sigma[m] * normal(rng), 0.0, 1.0);
  }
  return v;
}

/// Chroma-like values in [-128, 127] from a mixture of one to four Gaussians.
inline Eigen::ArrayXd random_chroma_channel(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int n = 500 + static_cast<int>(rng() % 4000);
  const int modes = 1 + static_cast<int>(rng() % 4);
  std::vector<double> mean(modes), sigma(modes);
  for (int m = 0; m < modes; ++m) {
    mean[m] = -90.0 + 180.0 * unit(rng);
    sigma[m] = 2.0 + 25.0 * unit(rng);
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::ArrayXd v(n);
  for (int i = 0; i < n; ++i) {
    const int m = static_cast<int>(rng() % modes);
    v[i] = std::clamp(mean[m] + sigma[m] * normal(rng), -128.0, 127.0);
  }
  return v;
}

/// A synthetic scene rendered with a random in-gamut palette and a random
/// global shift.
inline uda::RgbImage random_scene_image(std::mt19937_64& rng, int size = 32) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  uda::SceneSpec scene;
  scene.width = scene.height = size;
  uda::DomainProfile profile;
  for (int c = 0; c < scene.num_categories; ++c) {
    uda::CategoryAppearance look;
    // Base colors are drawn in sRGB so that every palette entry is in gamut.
    const auto channel = [&] { return static_cast<std::uint8_t>(20 + rng() % 216); };
    look.lab = uda::srgb_to_lab(channel(), channel(), channel());
    look.spread = 4.0 * unit(rng);
    look.texture_amplitude = unit(rng) < 0.3 ? 6.0 : 0.0;
    profile.palette.push_back(look);
  }
  profile.gamma_shift = std::exp(-0.6 + 1.2 * unit(rng));
  profile.color_cast = Eigen::Vector2d(-15.0 + 30.0 * unit(rng), -15.0 + 30.0 * unit(rng));
  profile.noise_sigma = 3.0 * unit(rng);
  const auto layout = uda::generate_scene(scene, rng());
  return uda::render_domain(layout, profile, rng());
}

/// Independent uniform 8-bit values in every channel.
inline uda::RgbImage random_noise_image(std::mt19937_64& rng, int size = 32) {
  uda::RgbImage img(size, size);
  for (auto& v : img.data) v = static_cast<std::uint8_t>(rng() % 256);
  return img;
}

inline std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  return out + "'";
}

/// Runs the CLI and returns its exit status; stdout goes to `stdout_path`
/// when given, otherwise it is discarded. stderr is discarded.
inline int run_cli(const std::filesystem::path& cli, const std::vector<std::string>& args,
                   const std::filesystem::path& stdout_path = {},
                   const std::string& env_prefix = {}) {
  std::string cmd = env_prefix + shell_quote(cli.string());
  for (const auto& a : args) cmd += " " + shell_quote(a);
  cmd += " > " + (stdout_path.empty() ? std::string("/dev/null") : shell_quote(stdout_path.string()));
  cmd += " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

inline std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(is), {});
}

}  // namespace testing_support
