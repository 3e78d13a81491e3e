#pragma once

#include "uda/segmodel.hpp"
#include "uda/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace uda {

// ---------------------------------------------------------------------------
// Category centers: f_c = G(mean of source features labelled c).

struct CategoryCenters {
  Eigen::MatrixXd centers;                  // C x F, unit rows where present
  std::vector<std::int64_t> pixel_counts;   // N_c

  int num_categories() const { return static_cast<int>(pixel_counts.size()); }
  bool present(int c) const { return pixel_counts[c] > 0; }
};

class CenterAccumulator {
 public:
  CenterAccumulator(int num_categories, int feature_dim)
      : sums_(Eigen::MatrixXd::Zero(num_categories, feature_dim)), counts_(num_categories, 0) {}

  /// Adds every pixel with a label in [0, C); other labels are ignored.
  template <typename Scalar>
  void add(const Matrix<Scalar>& features, std::span<const int> labels) {
    if (static_cast<Eigen::Index>(labels.size()) != features.rows() ||
        features.cols() != sums_.cols()) {
      throw std::invalid_argument("CenterAccumulator: feature/label shape mismatch");
    }
    for (Eigen::Index i = 0; i < features.rows(); ++i) {
      const int c = labels[i];
      if (c < 0 || c >= sums_.rows()) continue;
      sums_.row(c) += features.row(i).template cast<double>();
      ++counts_[c];
    }
  }

  /// Throws std::domain_error("degenerate category") when a present category
  /// has a zero mean feature.
  CategoryCenters finalize() const {
    CategoryCenters out{Eigen::MatrixXd::Zero(sums_.rows(), sums_.cols()), counts_};
    for (Eigen::Index c = 0; c < sums_.rows(); ++c) {
      if (counts_[c] == 0) continue;
      const Eigen::RowVectorXd mean = sums_.row(c) / static_cast<double>(counts_[c]);
      const double norm = mean.norm();
      if (!(norm > 0.0)) throw std::domain_error("degenerate category");
      out.centers.row(c) = mean / norm;
    }
    return out;
  }

 private:
  Eigen::MatrixXd sums_;
  std::vector<std::int64_t> counts_;
};

template <typename Scalar>
CategoryCenters compute_centers(
    const std::vector<std::pair<Matrix<Scalar>, std::vector<int>>>& batches, int num_categories) {
  if (batches.empty()) throw std::invalid_argument("compute_centers: no feature batches");
  CenterAccumulator acc(num_categories, static_cast<int>(batches.front().first.cols()));
  for (const auto& [features, labels] : batches) acc.add(features, labels);
  return acc.finalize();
}

// ---------------------------------------------------------------------------
// Pseudo-label thresholds: t_c = min(P_h, P_{s,c}).

struct ThresholdConfig {
  double probability = 0.9;  // P_h
  double percentage = 10.0;  // p

  void validate() const {
    if (!(probability > 0.0 && probability <= 1.0)) {
      throw std::invalid_argument("ThresholdConfig: P_h must be in (0, 1]");
    }
    if (!(percentage > 0.0 && percentage <= 100.0)) {
      throw std::invalid_argument("ThresholdConfig: p must be in (0, 100]");
    }
  }
};

/// Nearest-rank percentile of an ascending list: the value at rank ceil(q n / 100).
inline double nearest_rank_percentile(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("nearest_rank_percentile: empty input");
  const double n = static_cast<double>(sorted.size());
  auto rank = static_cast<std::int64_t>(std::ceil(q * n / 100.0));
  rank = std::clamp<std::int64_t>(rank, 1, static_cast<std::int64_t>(sorted.size()));
  return sorted[rank - 1];
}

/// P_{s,c} is the (100 - p)-th nearest-rank percentile of category c's
/// confidences; an empty category falls back to P_h.
inline std::vector<double> compute_thresholds(std::vector<std::vector<double>> by_category,
                                              const ThresholdConfig& cfg) {
  cfg.validate();
  std::vector<double> t(by_category.size(), cfg.probability);
  for (std::size_t c = 0; c < by_category.size(); ++c) {
    auto& values = by_category[c];
    if (values.empty()) continue;
    std::sort(values.begin(), values.end());
    t[c] = std::min(cfg.probability, nearest_rank_percentile(values, 100.0 - cfg.percentage));
  }
  return t;
}

struct PseudoLabelMap {
  int height = 0;
  int width = 0;
  std::vector<int> labels;
  std::vector<double> confidence;
  std::vector<std::uint8_t> valid;

  bool operator==(const PseudoLabelMap&) const = default;
};

struct PseudoLabelSet {
  std::vector<PseudoLabelMap> maps;
  std::vector<double> thresholds;

  /// Per category: valid pixels / pixels predicted as that category (0 if none).
  std::vector<double> valid_fraction() const {
    std::vector<double> valid(thresholds.size(), 0.0), total(thresholds.size(), 0.0);
    for (const auto& m : maps) {
      for (std::size_t j = 0; j < m.labels.size(); ++j) {
        total[m.labels[j]] += 1.0;
        valid[m.labels[j]] += m.valid[j];
      }
    }
    for (std::size_t c = 0; c < valid.size(); ++c) valid[c] = total[c] > 0 ? valid[c] / total[c] : 0.0;
    return valid;
  }

  bool operator==(const PseudoLabelSet&) const = default;
};

/// Sets valid[j] = confidence[j] >= t[labels[j]] on every map.
inline void apply_thresholds(PseudoLabelSet& set) {
  for (auto& m : set.maps) {
    m.valid.assign(m.labels.size(), 0);
    for (std::size_t j = 0; j < m.labels.size(); ++j) {
      m.valid[j] = m.confidence[j] >= set.thresholds[m.labels[j]] ? 1 : 0;
    }
  }
}

/// Pseudo labels from a frozen model on clean target images; thresholds are
/// computed over the whole target set.
template <typename Scalar>
PseudoLabelSet generate_pseudo_labels(const SegModel<Scalar>& previous,
                                      std::span<const Tensor<Scalar>> images,
                                      const ThresholdConfig& cfg) {
  const int classes = previous.config().num_classes;
  PseudoLabelSet set;
  set.maps.reserve(images.size());
  std::vector<std::vector<double>> by_category(classes);
  for (const auto& img : images) {
    Prediction p = previous.predict(img);
    for (std::size_t j = 0; j < p.labels.size(); ++j) {
      by_category[p.labels[j]].push_back(p.confidence[j]);
    }
    set.maps.push_back({img.height, img.width, std::move(p.labels), std::move(p.confidence), {}});
  }
  set.thresholds = compute_thresholds(std::move(by_category), cfg);
  apply_thresholds(set);
  return set;
}

// ---------------------------------------------------------------------------
// Category-oriented triplet loss.

enum class NegativeMode { kHardest, kAll };

struct TripletConfig {
  double margin = 0.2;  // alpha
  NegativeMode negative_mode = NegativeMode::kHardest;

  void validate() const {
    if (!(margin > 0.0)) throw std::invalid_argument("TripletConfig: margin must be > 0");
  }
};

template <typename Scalar>
struct TripletResult {
  double loss = 0.0;
  Matrix<Scalar> grad;            // dL/dfeatures
  Eigen::Index contributing = 0;  // labelled pixels with non-zero features
};

/// Per labelled pixel, hinge max(|G(x) - f_y| - |G(x) - f_neg| + margin, 0)
/// against the nearest other center (hardest) or summed over all other
/// centers (all). Mean over contributing pixels; centers are constants.
/// Pixels whose feature vector is exactly zero have no direction and are
/// skipped.
template <typename Scalar>
TripletResult<Scalar> triplet_loss(const Matrix<Scalar>& features, std::span<const int> labels,
                                   const CategoryCenters& centers, const TripletConfig& cfg) {
  cfg.validate();
  if (static_cast<Eigen::Index>(labels.size()) != features.rows()) {
    throw std::invalid_argument("triplet_loss: " + std::to_string(features.rows()) +
                                " feature rows but " + std::to_string(labels.size()) + " labels");
  }
  if (features.cols() != centers.centers.cols()) {
    throw std::invalid_argument("triplet_loss: feature width does not match centers");
  }
  const int classes = centers.num_categories();
  TripletResult<Scalar> r;
  r.grad = Matrix<Scalar>::Zero(features.rows(), features.cols());
  double total = 0.0;

  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    const int y = labels[i];
    if (y < 0) continue;
    if (y >= classes || !centers.present(y)) {
      throw std::invalid_argument("triplet_loss: no center for category " + std::to_string(y));
    }
    const Eigen::RowVectorXd x = features.row(i).template cast<double>();
    const double norm = x.norm();
    if (!(norm > 0.0)) continue;
    ++r.contributing;
    const Eigen::RowVectorXd g = x / norm;
    const Eigen::RowVectorXd to_pos = g - centers.centers.row(y);
    const double d_pos = to_pos.norm();
    const Eigen::RowVectorXd unit_pos =
        d_pos > 0.0 ? Eigen::RowVectorXd(to_pos / d_pos) : Eigen::RowVectorXd::Zero(g.size());

    Eigen::RowVectorXd dg = Eigen::RowVectorXd::Zero(g.size());
    auto add_negative = [&](double d_neg, const Eigen::RowVectorXd& to_neg) {
      const double hinge = d_pos - d_neg + cfg.margin;
      if (hinge <= 0.0) return;
      total += hinge;
      dg += unit_pos;
      if (d_neg > 0.0) dg -= to_neg / d_neg;
    };

    if (cfg.negative_mode == NegativeMode::kHardest) {
      int best = -1;
      double best_d = std::numeric_limits<double>::infinity();
      for (int c = 0; c < classes; ++c) {
        if (c == y || !centers.present(c)) continue;
        const double d = (g - centers.centers.row(c)).norm();
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (best >= 0) add_negative(best_d, g - centers.centers.row(best));
    } else {
      for (int c = 0; c < classes; ++c) {
        if (c == y || !centers.present(c)) continue;
        const Eigen::RowVectorXd to_neg = g - centers.centers.row(c);
        add_negative(to_neg.norm(), to_neg);
      }
    }
    // Through G: (dg - g (g . dg)) / |x|
    r.grad.row(i) = ((dg - g * g.dot(dg)) / norm).template cast<Scalar>();
  }
  if (r.contributing > 0) {
    r.loss = total / static_cast<double>(r.contributing);
    r.grad /= static_cast<Scalar>(r.contributing);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Target consistency: cross-entropy of the current prediction on a jittered
// image against hard pseudo labels of the clean image, on valid pixels only.

template <typename Scalar>
CrossEntropyResult<Scalar> consistency_loss(const PseudoLabelMap& pseudo,
                                            const Matrix<Scalar>& logits_on_jittered) {
  const auto expected = static_cast<Eigen::Index>(pseudo.height) * pseudo.width;
  if (logits_on_jittered.rows() != expected ||
      static_cast<Eigen::Index>(pseudo.labels.size()) != expected ||
      pseudo.valid.size() != pseudo.labels.size()) {
    throw std::invalid_argument("consistency_loss: pseudo labels are " +
                                std::to_string(pseudo.height) + "x" + std::to_string(pseudo.width) +
                                " but logits have " + std::to_string(logits_on_jittered.rows()) +
                                " rows");
  }
  return cross_entropy<Scalar>(logits_on_jittered, pseudo.labels, pseudo.valid);
}

}  // namespace uda
