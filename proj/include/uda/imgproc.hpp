#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <vector>

namespace uda {

/// 8-bit sRGB image, row-major RGB triples.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  RgbImage() = default;
  RgbImage(int width, int height);
  RgbImage(int width, int height, std::vector<std::uint8_t> data);

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
  std::uint8_t* pixel(int x, int y) { return &data[3 * (static_cast<std::size_t>(y) * width + x)]; }
  const std::uint8_t* pixel(int x, int y) const {
    return &data[3 * (static_cast<std::size_t>(y) * width + x)];
  }

  bool operator==(const RgbImage&) const = default;
};

/// CIELAB image under D65. L in [0, 100], a/b in [-128, 127].
struct LabImage {
  int width = 0;
  int height = 0;
  Eigen::ArrayXd L;
  Eigen::ArrayXd a;
  Eigen::ArrayXd b;
};

inline constexpr int kHistogramBins = 256;
inline constexpr double kChromaLo = -128.0;
inline constexpr double kChromaHi = 127.0;

/// 256-bin histogram of one real-valued channel over [lo, hi].
///
/// Besides counts, each bin keeps the sum of the values that fell into it so
/// that moment computations can use the bin centroid instead of the nominal
/// bin midpoint. Empty bins fall back to the midpoint.
class ChannelHistogram {
 public:
  ChannelHistogram(double lo, double hi);

  /// Histogram with the given counts; each bin's centroid is its midpoint.
  static ChannelHistogram from_counts(const std::array<std::uint64_t, kHistogramBins>& counts,
                                      double lo, double hi);

  void add(double value);

  int bin_index(double value) const;
  double midpoint(int bin) const;
  double centroid(int bin) const;

  double lo() const { return lo_; }
  double hi() const { return hi_; }
  std::uint64_t total() const { return total_; }
  const std::array<std::uint64_t, kHistogramBins>& counts() const { return counts_; }

  std::array<double, kHistogramBins> normalized() const;
  std::array<double, kHistogramBins> cdf() const;
  /// Mean of the binned values, using bin centroids.
  double mean() const;

 private:
  double lo_;
  double hi_;
  std::uint64_t total_ = 0;
  std::array<std::uint64_t, kHistogramBins> counts_{};
  std::array<double, kHistogramBins> sums_{};
};

/// Monotone bin-to-bin map realizing histogram matching.
struct LookupTable {
  std::array<int, kHistogramBins> map{};

  static LookupTable identity();
  bool is_monotone() const;
};

struct GammaSolution {
  double gamma = 1.0;
  double objective_value = 0.0;
  int iterations = 0;
};

struct GammaSolverOptions {
  double beta = 0.01;
  int max_iters = 200;
  double tol = 1e-6;
  /// Scale on the Gauss-Newton step; backtracking halves it until J decreases.
  double step = 1.0;
};

inline constexpr double kGammaMin = 0.1;
inline constexpr double kGammaMax = 10.0;

/// Half-ranges for color jitter. Hue is in degrees.
struct JitterParams {
  double brightness = 0.2;
  double contrast = 0.2;
  double saturation = 0.2;
  double hue = 10.0;
  std::uint64_t seed = 0;
};

LabImage rgb_to_lab(const RgbImage& img);
RgbImage lab_to_rgb(const LabImage& img);

/// Single-pixel conversions; L,a,b and 8-bit r,g,b.
Eigen::Vector3d srgb_to_lab(std::uint8_t r, std::uint8_t g, std::uint8_t b);
std::array<std::uint8_t, 3> lab_to_srgb(const Eigen::Vector3d& lab);

/// Throws std::invalid_argument("empty input") for an empty channel.
ChannelHistogram channel_histogram(const Eigen::Ref<const Eigen::ArrayXd>& channel, double lo,
                                   double hi);

/// Classic CDF matching: map[i] is the smallest reference bin j with
/// CDF_ref(j) >= CDF_src(i).
LookupTable histogram_match_map(const ChannelHistogram& src, const ChannelHistogram& ref);

/// Moves each value from its bin to the mapped bin, keeping its offset from
/// the bin midpoint. Every output lies in the mapped bin.
Eigen::ArrayXd apply_lut(const Eigen::Ref<const Eigen::ArrayXd>& channel, const LookupTable& lut,
                         double lo, double hi);

/// Mean of the gamma-corrected source histogram (over [0, 1]).
double gamma_corrected_mean(double gamma, const ChannelHistogram& src);

/// (mean_corrected(gamma) - mean_ref)^2 + beta (gamma - 1)^2
double gamma_objective(double gamma, const ChannelHistogram& src, const ChannelHistogram& ref,
                       double beta);
double gamma_objective_derivative(double gamma, const ChannelHistogram& src,
                                  const ChannelHistogram& ref, double beta);

GammaSolution solve_gamma(const ChannelHistogram& src, const ChannelHistogram& ref,
                          const GammaSolverOptions& options = {});

/// L in [0, 100] -> 100 (L / 100)^gamma.
Eigen::ArrayXd apply_gamma(const Eigen::Ref<const Eigen::ArrayXd>& lightness, double gamma);

struct PhotometricAlignment {
  RgbImage image;
  GammaSolution gamma;
};

/// Gamma on L, histogram matching on a and b, against a single reference.
PhotometricAlignment align_photometric(const RgbImage& src, const RgbImage& ref,
                                       double beta = 0.01);
RgbImage photometric_align(const RgbImage& src, const RgbImage& ref, double beta = 0.01);

/// Brightness, contrast, saturation then hue; deterministic given params.seed.
RgbImage color_jitter(const RgbImage& img, const JitterParams& params);

/// Mean of L / 100 over the image.
double mean_normalized_lightness(const RgbImage& img);

/// Kolmogorov-Smirnov distance between two histograms with equal ranges.
double ks_distance(const ChannelHistogram& lhs, const ChannelHistogram& rhs);

}  // namespace uda
