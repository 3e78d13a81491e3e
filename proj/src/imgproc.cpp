#include "uda/imgproc.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

namespace uda {

namespace {

// sRGB primaries, D65 white, coefficients as published in IEC 61966-2-1.
const Eigen::Matrix3d& rgb_to_xyz_matrix() {
  static const Eigen::Matrix3d m = (Eigen::Matrix3d() << 0.412453, 0.357580, 0.180423,
                                    0.212671, 0.715160, 0.072169,
                                    0.019334, 0.119193, 0.950227)
                                       .finished();
  return m;
}

const Eigen::Matrix3d& xyz_to_rgb_matrix() {
  static const Eigen::Matrix3d m = rgb_to_xyz_matrix().inverse();
  return m;
}

// White point taken as the image of linear (1,1,1) so that white maps to a = b = 0.
const Eigen::Vector3d& white_point() {
  static const Eigen::Vector3d w = rgb_to_xyz_matrix() * Eigen::Vector3d::Ones();
  return w;
}

constexpr double kLabEpsilon = 216.0 / 24389.0;
constexpr double kLabKappa = 24389.0 / 27.0;

double srgb_decode(double v) {
  return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4);
}

double srgb_encode(double v) {
  return v <= 0.0031308 ? 12.92 * v : 1.055 * std::pow(v, 1.0 / 2.4) - 0.055;
}

double lab_f(double t) {
  return t > kLabEpsilon ? std::cbrt(t) : (kLabKappa * t + 16.0) / 116.0;
}

double lab_f_inv(double f) {
  const double f3 = f * f * f;
  return f3 > kLabEpsilon ? f3 : (116.0 * f - 16.0) / kLabKappa;
}

std::uint8_t to_byte(double unit) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(unit, 0.0, 1.0) * 255.0));
}

// Decoded byte lookup: 256 pow() calls instead of one per channel per pixel.
const std::array<double, 256>& decode_table() {
  static const std::array<double, 256> table = [] {
    std::array<double, 256> t{};
    for (int i = 0; i < 256; ++i) t[i] = srgb_decode(i / 255.0);
    return t;
  }();
  return table;
}

}  // namespace

RgbImage::RgbImage(int w, int h) : RgbImage(w, h, std::vector<std::uint8_t>(3 * static_cast<std::size_t>(std::max(w, 0)) * std::max(h, 0))) {}

RgbImage::RgbImage(int w, int h, std::vector<std::uint8_t> d)
    : width(w), height(h), data(std::move(d)) {
  if (w < 1 || h < 1) {
    throw std::invalid_argument("RgbImage: dimensions must be >= 1, got " + std::to_string(w) +
                                "x" + std::to_string(h));
  }
  if (data.size() != 3 * pixel_count()) {
    throw std::invalid_argument("RgbImage: data length " + std::to_string(data.size()) +
                                " != 3*" + std::to_string(pixel_count()));
  }
}

Eigen::Vector3d srgb_to_lab(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  const auto& dec = decode_table();
  const Eigen::Vector3d xyz = rgb_to_xyz_matrix() * Eigen::Vector3d(dec[r], dec[g], dec[b]);
  const Eigen::Vector3d f = xyz.cwiseQuotient(white_point()).unaryExpr(&lab_f);
  return {std::clamp(116.0 * f.y() - 16.0, 0.0, 100.0),
          std::clamp(500.0 * (f.x() - f.y()), kChromaLo, kChromaHi),
          std::clamp(200.0 * (f.y() - f.z()), kChromaLo, kChromaHi)};
}

std::array<std::uint8_t, 3> lab_to_srgb(const Eigen::Vector3d& lab) {
  const double fy = (lab.x() + 16.0) / 116.0;
  const Eigen::Vector3d f(fy + lab.y() / 500.0, fy, fy - lab.z() / 200.0);
  const Eigen::Vector3d xyz = f.unaryExpr(&lab_f_inv).cwiseProduct(white_point());
  const Eigen::Vector3d rgb = (xyz_to_rgb_matrix() * xyz).cwiseMax(0.0).cwiseMin(1.0);
  return {to_byte(srgb_encode(rgb.x())), to_byte(srgb_encode(rgb.y())),
          to_byte(srgb_encode(rgb.z()))};
}

LabImage rgb_to_lab(const RgbImage& img) {
  const auto n = static_cast<Eigen::Index>(img.pixel_count());
  LabImage lab{img.width, img.height, Eigen::ArrayXd(n), Eigen::ArrayXd(n), Eigen::ArrayXd(n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::uint8_t* p = &img.data[3 * i];
    const Eigen::Vector3d v = srgb_to_lab(p[0], p[1], p[2]);
    lab.L[i] = v.x();
    lab.a[i] = v.y();
    lab.b[i] = v.z();
  }
  return lab;
}

RgbImage lab_to_rgb(const LabImage& img) {
  RgbImage out(img.width, img.height);
  for (Eigen::Index i = 0; i < img.L.size(); ++i) {
    const auto rgb = lab_to_srgb({std::clamp(img.L[i], 0.0, 100.0),
                                  std::clamp(img.a[i], kChromaLo, kChromaHi),
                                  std::clamp(img.b[i], kChromaLo, kChromaHi)});
    std::copy(rgb.begin(), rgb.end(), &out.data[3 * i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Histograms

ChannelHistogram::ChannelHistogram(double lo, double hi) : lo_(lo), hi_(hi) {
  if (!(hi > lo)) throw std::invalid_argument("ChannelHistogram: hi must exceed lo");
}

ChannelHistogram ChannelHistogram::from_counts(
    const std::array<std::uint64_t, kHistogramBins>& counts, double lo, double hi) {
  ChannelHistogram h(lo, hi);
  h.counts_ = counts;
  for (int i = 0; i < kHistogramBins; ++i) {
    h.total_ += counts[i];
    h.sums_[i] = static_cast<double>(counts[i]) * h.midpoint(i);
  }
  return h;
}

int ChannelHistogram::bin_index(double value) const {
  const double v = std::clamp(value, lo_, hi_);
  const auto idx = static_cast<int>(std::floor(255.0 * (v - lo_) / (hi_ - lo_)));
  return std::clamp(idx, 0, kHistogramBins - 1);
}

double ChannelHistogram::midpoint(int bin) const {
  const double width = (hi_ - lo_) / 255.0;
  return std::min(lo_ + (bin + 0.5) * width, hi_);
}

double ChannelHistogram::centroid(int bin) const {
  return counts_[bin] > 0 ? sums_[bin] / static_cast<double>(counts_[bin]) : midpoint(bin);
}

void ChannelHistogram::add(double value) {
  const double v = std::clamp(value, lo_, hi_);
  const int idx = bin_index(v);
  ++counts_[idx];
  sums_[idx] += v;
  ++total_;
}

std::array<double, kHistogramBins> ChannelHistogram::normalized() const {
  std::array<double, kHistogramBins> p{};
  if (total_ == 0) return p;
  for (int i = 0; i < kHistogramBins; ++i) {
    p[i] = static_cast<double>(counts_[i]) / static_cast<double>(total_);
  }
  return p;
}

std::array<double, kHistogramBins> ChannelHistogram::cdf() const {
  std::array<double, kHistogramBins> c{};
  std::uint64_t running = 0;
  for (int i = 0; i < kHistogramBins; ++i) {
    running += counts_[i];
    c[i] = total_ ? static_cast<double>(running) / static_cast<double>(total_) : 0.0;
  }
  return c;
}

double ChannelHistogram::mean() const {
  const auto p = normalized();
  double m = 0.0;
  for (int i = 0; i < kHistogramBins; ++i) m += centroid(i) * p[i];
  return m;
}

ChannelHistogram channel_histogram(const Eigen::Ref<const Eigen::ArrayXd>& channel, double lo,
                                   double hi) {
  if (channel.size() == 0) throw std::invalid_argument("empty input");
  ChannelHistogram h(lo, hi);
  for (Eigen::Index i = 0; i < channel.size(); ++i) h.add(channel[i]);
  return h;
}

double ks_distance(const ChannelHistogram& lhs, const ChannelHistogram& rhs) {
  const auto a = lhs.cdf();
  const auto b = rhs.cdf();
  double d = 0.0;
  for (int i = 0; i < kHistogramBins; ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

// ---------------------------------------------------------------------------
// Histogram matching

LookupTable LookupTable::identity() {
  LookupTable lut;
  for (int i = 0; i < kHistogramBins; ++i) lut.map[i] = i;
  return lut;
}

bool LookupTable::is_monotone() const {
  return std::is_sorted(map.begin(), map.end());
}

LookupTable histogram_match_map(const ChannelHistogram& src, const ChannelHistogram& ref) {
  if (src.total() == 0 || ref.total() == 0) {
    throw std::invalid_argument("histogram_match_map: empty histogram");
  }
  if (src.lo() != ref.lo() || src.hi() != ref.hi()) {
    throw std::invalid_argument("histogram_match_map: histogram ranges differ");
  }
  // CDFs compared exactly: cum_ref(j) / n_ref >= cum_src(i) / n_src.
  using Wide = unsigned __int128;
  const auto n_src = static_cast<Wide>(src.total());
  const auto n_ref = static_cast<Wide>(ref.total());
  std::array<std::uint64_t, kHistogramBins> cum_ref{};
  std::uint64_t running = 0;
  for (int j = 0; j < kHistogramBins; ++j) cum_ref[j] = running += ref.counts()[j];

  LookupTable lut;
  std::uint64_t cum_src = 0;
  int j = 0;
  for (int i = 0; i < kHistogramBins; ++i) {
    cum_src += src.counts()[i];
    while (j < kHistogramBins - 1 &&
           static_cast<Wide>(cum_ref[j]) * n_src < static_cast<Wide>(cum_src) * n_ref) {
      ++j;
    }
    lut.map[i] = j;
  }
  return lut;
}

Eigen::ArrayXd apply_lut(const Eigen::Ref<const Eigen::ArrayXd>& channel, const LookupTable& lut,
                         double lo, double hi) {
  const ChannelHistogram geometry(lo, hi);
  Eigen::ArrayXd out(channel.size());
  for (Eigen::Index i = 0; i < channel.size(); ++i) {
    // Keep the value's offset within its bin so an identity map is lossless.
    // Bin 255 holds the single value hi.
    const double v = std::clamp(channel[i], lo, hi);
    const int from = geometry.bin_index(v), to = lut.map[from];
    out[i] = to == kHistogramBins - 1
                 ? hi
                 : std::clamp(v - geometry.midpoint(from) + geometry.midpoint(to), lo, hi);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gamma on lightness

namespace {

struct CorrectedMoments {
  double mean = 0.0;        // sum v^g p
  double derivative = 0.0;  // sum v^g ln(v) p
};

CorrectedMoments corrected_moments(double gamma, const ChannelHistogram& src) {
  const auto p = src.normalized();
  CorrectedMoments m;
  for (int i = 0; i < kHistogramBins; ++i) {
    if (p[i] == 0.0) continue;
    const double v = src.centroid(i);
    if (v <= 0.0) continue;  // 0^g = 0 and v^g ln v -> 0
    const double vg = std::pow(v, gamma);
    m.mean += vg * p[i];
    m.derivative += vg * std::log(v) * p[i];
  }
  return m;
}

}  // namespace

double gamma_corrected_mean(double gamma, const ChannelHistogram& src) {
  return corrected_moments(gamma, src).mean;
}

double gamma_objective(double gamma, const ChannelHistogram& src, const ChannelHistogram& ref,
                       double beta) {
  const double diff = gamma_corrected_mean(gamma, src) - ref.mean();
  return diff * diff + beta * (gamma - 1.0) * (gamma - 1.0);
}

double gamma_objective_derivative(double gamma, const ChannelHistogram& src,
                                  const ChannelHistogram& ref, double beta) {
  const auto m = corrected_moments(gamma, src);
  return 2.0 * (m.mean - ref.mean()) * m.derivative + 2.0 * beta * (gamma - 1.0);
}

GammaSolution solve_gamma(const ChannelHistogram& src, const ChannelHistogram& ref,
                          const GammaSolverOptions& options) {
  if (options.beta < 0.0) throw std::invalid_argument("solve_gamma: beta must be >= 0");
  const double ref_mean = ref.mean();
  auto objective = [&](double g) {
    const double diff = gamma_corrected_mean(g, src) - ref_mean;
    return diff * diff + options.beta * (g - 1.0) * (g - 1.0);
  };

  GammaSolution sol{1.0, objective(1.0), 0};
  for (int it = 0; it < options.max_iters; ++it) {
    const auto m = corrected_moments(sol.gamma, src);
    const double grad = 2.0 * (m.mean - ref_mean) * m.derivative + 2.0 * options.beta * (sol.gamma - 1.0);
    if (std::abs(grad) <= options.tol) {
      sol.iterations = it;
      return sol;
    }
    // Gauss-Newton curvature of the objective scales the descent step.
    double curvature = 2.0 * m.derivative * m.derivative + 2.0 * options.beta;
    if (curvature < 1e-12) curvature = 1.0;
    double step = options.step / curvature;
    bool moved = false;
    for (int halving = 0; halving < 40; ++halving, step *= 0.5) {
      const double candidate = std::clamp(sol.gamma - step * grad, kGammaMin, kGammaMax);
      const double value = objective(candidate);
      if (value <= sol.objective_value) {
        moved = candidate != sol.gamma;
        sol.gamma = candidate;
        sol.objective_value = value;
        break;
      }
    }
    if (!moved) {
      sol.iterations = it + 1;
      return sol;
    }
  }
  sol.iterations = options.max_iters;
  return sol;
}

Eigen::ArrayXd apply_gamma(const Eigen::Ref<const Eigen::ArrayXd>& lightness, double gamma) {
  if (!(gamma >= kGammaMin && gamma <= kGammaMax)) {
    throw std::invalid_argument("apply_gamma: gamma outside [0.1, 10]");
  }
  return 100.0 * (lightness / 100.0).max(0.0).min(1.0).pow(gamma);
}

// ---------------------------------------------------------------------------
// Alignment

PhotometricAlignment align_photometric(const RgbImage& src, const RgbImage& ref, double beta) {
  LabImage lab = rgb_to_lab(src);
  const LabImage ref_lab = rgb_to_lab(ref);

  const auto src_l = channel_histogram(lab.L / 100.0, 0.0, 1.0);
  const auto ref_l = channel_histogram(ref_lab.L / 100.0, 0.0, 1.0);
  GammaSolverOptions options;
  options.beta = beta;
  const GammaSolution gamma = solve_gamma(src_l, ref_l, options);
  lab.L = apply_gamma(lab.L, gamma.gamma);

  for (auto [channel, ref_channel] : {std::pair{&lab.a, &ref_lab.a}, std::pair{&lab.b, &ref_lab.b}}) {
    const auto lut = histogram_match_map(channel_histogram(*channel, kChromaLo, kChromaHi),
                                         channel_histogram(*ref_channel, kChromaLo, kChromaHi));
    *channel = apply_lut(*channel, lut, kChromaLo, kChromaHi);
  }
  return {lab_to_rgb(lab), gamma};
}

RgbImage photometric_align(const RgbImage& src, const RgbImage& ref, double beta) {
  return align_photometric(src, ref, beta).image;
}

double mean_normalized_lightness(const RgbImage& img) {
  return rgb_to_lab(img).L.mean() / 100.0;
}

// ---------------------------------------------------------------------------
// Jitter

namespace {

double draw_factor(std::mt19937_64& rng, double half_range) {
  if (half_range <= 0.0) return 1.0;
  std::uniform_real_distribution<double> dist(std::max(0.0, 1.0 - half_range), 1.0 + half_range);
  return dist(rng);
}

const Eigen::Matrix3d& rgb_to_yiq() {
  static const Eigen::Matrix3d m = (Eigen::Matrix3d() << 0.299, 0.587, 0.114,
                                    0.595716, -0.274453, -0.321263,
                                    0.211456, -0.522591, 0.311135)
                                       .finished();
  return m;
}

}  // namespace

RgbImage color_jitter(const RgbImage& img, const JitterParams& params) {
  if (params.brightness < 0 || params.contrast < 0 || params.saturation < 0 || params.hue < 0) {
    throw std::invalid_argument("color_jitter: half-ranges must be >= 0");
  }
  std::mt19937_64 rng(params.seed);
  const double brightness = draw_factor(rng, params.brightness);
  const double contrast = draw_factor(rng, params.contrast);
  const double saturation = draw_factor(rng, params.saturation);
  double hue_deg = 0.0;
  if (params.hue > 0.0) {
    hue_deg = std::uniform_real_distribution<double>(-params.hue, params.hue)(rng);
  }

  const auto n = static_cast<Eigen::Index>(img.pixel_count());
  Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> rgb =
      Eigen::Map<const Eigen::Matrix<std::uint8_t, Eigen::Dynamic, 3, Eigen::RowMajor>>(
          img.data.data(), n, 3)
          .cast<double>() /
      255.0;
  const Eigen::RowVector3d luma(0.299, 0.587, 0.114);
  auto clamp01 = [&] { rgb = rgb.cwiseMax(0.0).cwiseMin(1.0); };

  if (brightness != 1.0) {
    rgb *= brightness;
    clamp01();
  }
  if (contrast != 1.0) {
    const double mean_gray = (rgb * luma.transpose()).mean();
    rgb = ((rgb.array() - mean_gray) * contrast + mean_gray).matrix();
    clamp01();
  }
  if (saturation != 1.0) {
    const Eigen::VectorXd gray = rgb * luma.transpose();
    rgb = ((rgb.colwise() - gray) * saturation).colwise() + gray;
    clamp01();
  }
  if (hue_deg != 0.0) {
    const double theta = hue_deg * std::numbers::pi / 180.0;
    Eigen::Matrix3d rot = Eigen::Matrix3d::Identity();
    rot(1, 1) = std::cos(theta);
    rot(1, 2) = -std::sin(theta);
    rot(2, 1) = std::sin(theta);
    rot(2, 2) = std::cos(theta);
    const Eigen::Matrix3d transform = rgb_to_yiq().inverse() * rot * rgb_to_yiq();
    rgb = rgb * transform.transpose();
    clamp01();
  }

  RgbImage out(img.width, img.height);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) out.data[3 * i + c] = to_byte(rgb(i, c));
  }
  return out;
}

}  // namespace uda
