#include "uda/regularizers.hpp"

#include <gtest/gtest.h>

#include <random>

namespace {

using Mat = uda::Matrix<double>;

Mat random_features(std::mt19937_64& rng, int n, int f) {
  std::uniform_real_distribution<double> d(0.0, 2.0);
  Mat m(n, f);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng);
  return m;
}

std::vector<int> random_labels(std::mt19937_64& rng, int n, int classes) {
  std::vector<int> y(n);
  for (auto& v : y) v = static_cast<int>(rng() % (classes + 1)) - 1;  // includes -1
  return y;
}

TEST(Centers, UnitNormAndMatchMeanDirection) {
  std::mt19937_64 rng(1);
  const Mat f = random_features(rng, 60, 4);
  const auto y = random_labels(rng, 60, 3);
  const auto centers = uda::compute_centers<double>({{f, y}}, 3);
  for (int c = 0; c < 3; ++c) {
    Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(4);
    int n = 0;
    for (int i = 0; i < 60; ++i) {
      if (y[i] == c) {
        sum += f.row(i);
        ++n;
      }
    }
    ASSERT_EQ(centers.pixel_counts[c], n);
    EXPECT_NEAR(centers.centers.row(c).norm(), 1.0, 1e-12);
    EXPECT_LE((centers.centers.row(c) - sum.normalized()).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Centers, BatchingAndScaleDoNotMatter) {
  std::mt19937_64 rng(2);
  const Mat f = random_features(rng, 40, 3);
  const auto y = random_labels(rng, 40, 2);
  const auto whole = uda::compute_centers<double>({{f, y}}, 2);
  const std::vector<int> y1(y.begin(), y.begin() + 15), y2(y.begin() + 15, y.end());
  const auto split = uda::compute_centers<double>({{f.topRows(15), y1}, {f.bottomRows(25), y2}}, 2);
  const auto scaled = uda::compute_centers<double>({{Mat(3.5 * f), y}}, 2);
  EXPECT_LE((whole.centers - split.centers).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((whole.centers - scaled.centers).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Centers, AbsentCategoryAndDegenerateMean) {
  const Mat f = Mat::Ones(2, 2);
  const auto c = uda::compute_centers<double>({{f, {0, 0}}}, 3);
  EXPECT_FALSE(c.present(1));
  EXPECT_EQ(c.centers.row(2).norm(), 0.0);
  EXPECT_THROW(uda::compute_centers<double>({{Mat(Mat::Zero(2, 2)), {0, 1}}}, 2), std::domain_error);
  EXPECT_THROW(uda::compute_centers<double>({}, 2), std::invalid_argument);
}

TEST(Percentile, NearestRankByHand) {
  const std::vector<double> v = {15, 20, 35, 40, 50};
  EXPECT_EQ(uda::nearest_rank_percentile(v, 5), 15);
  EXPECT_EQ(uda::nearest_rank_percentile(v, 30), 20);
  EXPECT_EQ(uda::nearest_rank_percentile(v, 40), 20);
  EXPECT_EQ(uda::nearest_rank_percentile(v, 50), 35);
  EXPECT_EQ(uda::nearest_rank_percentile(v, 100), 50);
  EXPECT_THROW(uda::nearest_rank_percentile({}, 50), std::invalid_argument);
}

TEST(Thresholds, MinOfCapAndPercentile) {
  // Ten values 0.1..1.0: the 90th nearest-rank percentile is the 9th value.
  std::vector<double> cat0;
  for (int i = 10; i >= 1; --i) cat0.push_back(0.1 * i);
  const std::vector<std::vector<double>> by = {cat0, {0.95, 0.99}, {}};
  const auto t = uda::compute_thresholds(by, {0.92, 10.0});
  EXPECT_DOUBLE_EQ(t[0], 0.1 * 9);
  EXPECT_DOUBLE_EQ(t[1], 0.92);
  EXPECT_DOUBLE_EQ(t[2], 0.92);
  EXPECT_THROW(uda::compute_thresholds(by, {0.0, 10.0}), std::invalid_argument);
  EXPECT_THROW(uda::compute_thresholds(by, {0.9, 0.0}), std::invalid_argument);
}

TEST(PseudoLabels, ValidMaskAndFractions) {
  uda::PseudoLabelSet set;
  set.maps.push_back({1, 4, {0, 0, 1, 1}, {0.5, 0.9, 0.3, 0.2}, {}});
  set.thresholds = {0.6, 0.2};
  uda::apply_thresholds(set);
  EXPECT_EQ(set.maps[0].valid, (std::vector<std::uint8_t>{0, 1, 1, 1}));
  EXPECT_EQ(set.valid_fraction(), (std::vector<double>{0.5, 1.0}));
}

TEST(PseudoLabels, GeneratedFromFrozenModel) {
  const uda::SegModel<double> model(uda::ModelConfig{3, 4, 4, 3}, 5);
  std::vector<uda::Tensor<double>> images(3, uda::Tensor<double>(4, 5, 3));
  for (auto& img : images) img.values.setRandom();
  const auto set = uda::generate_pseudo_labels<double>(model, images, {0.9, 50.0});
  ASSERT_EQ(set.maps.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) {
    const auto p = model.predict(images[k]);
    EXPECT_EQ(set.maps[k].labels, p.labels);
    for (std::size_t j = 0; j < p.labels.size(); ++j) {
      EXPECT_EQ(set.maps[k].valid[j], p.confidence[j] >= set.thresholds[p.labels[j]]);
    }
  }
}

/// Triplet hinge written directly from distances, no vectorized helpers.
double triplet_oracle(const Mat& f, const std::vector<int>& y, const uda::CategoryCenters& centers,
                      const uda::TripletConfig& cfg) {
  double total = 0.0;
  int n = 0;
  for (Eigen::Index i = 0; i < f.rows(); ++i) {
    if (y[i] < 0) continue;
    double norm = 0.0;
    for (Eigen::Index k = 0; k < f.cols(); ++k) norm += f(i, k) * f(i, k);
    norm = std::sqrt(norm);
    if (norm == 0.0) continue;
    ++n;
    std::vector<double> dist(centers.num_categories());
    for (int c = 0; c < centers.num_categories(); ++c) {
      double s = 0.0;
      for (Eigen::Index k = 0; k < f.cols(); ++k) {
        const double d = f(i, k) / norm - centers.centers(c, k);
        s += d * d;
      }
      dist[c] = std::sqrt(s);
    }
    double hardest = 1e300, all = 0.0;
    for (int c = 0; c < centers.num_categories(); ++c) {
      if (c == y[i] || !centers.present(c)) continue;
      hardest = std::min(hardest, dist[c]);
      all += std::max(0.0, dist[y[i]] - dist[c] + cfg.margin);
    }
    if (cfg.negative_mode == uda::NegativeMode::kAll) {
      total += all;
    } else if (hardest < 1e300) {
      total += std::max(0.0, dist[y[i]] - hardest + cfg.margin);
    }
  }
  return n > 0 ? total / n : 0.0;
}

TEST(Triplet, MatchesDirectOracle) {
  std::mt19937_64 rng(7);
  for (auto mode : {uda::NegativeMode::kHardest, uda::NegativeMode::kAll}) {
    for (int k = 0; k < 10; ++k) {
      const Mat f = random_features(rng, 30, 4);
      const auto y = random_labels(rng, 30, 4);
      const uda::CategoryCenters full = uda::compute_centers<double>(
          {{random_features(rng, 80, 4), random_labels(rng, 80, 4)}}, 4);
      for (int c = 0; c < 4; ++c) ASSERT_TRUE(full.present(c));
      const uda::TripletConfig cfg{0.3, mode};
      EXPECT_NEAR(uda::triplet_loss<double>(f, y, full, cfg).loss, triplet_oracle(f, y, full, cfg), 1e-12);
    }
  }
}

TEST(Triplet, ZeroWhenFeatureSitsOnItsCenter) {
  uda::CategoryCenters centers{Mat::Identity(2, 2), {1, 1}};
  const Mat f = (Mat(2, 2) << 3.0, 0.0, 0.0, 0.5).finished();
  const auto r = uda::triplet_loss<double>(f, std::vector<int>{0, 1}, centers, {0.2});
  EXPECT_EQ(r.loss, 0.0);
  EXPECT_EQ(r.grad.cwiseAbs().sum(), 0.0);
  EXPECT_EQ(r.contributing, 2);
}

TEST(Triplet, SkipsUnlabelledAndZeroFeatures) {
  uda::CategoryCenters centers{Mat::Identity(2, 2), {1, 1}};
  const Mat f = (Mat(3, 2) << 0.0, 0.0, 1.0, 1.0, 0.0, 1.0).finished();
  const auto r = uda::triplet_loss<double>(f, std::vector<int>{0, -1, 0}, centers, {0.2});
  EXPECT_EQ(r.contributing, 1);
  EXPECT_NEAR(r.loss, std::sqrt(2.0) - 0.0 + 0.2, 1e-12);
}

TEST(Triplet, AbsentCenterAndShapeErrors) {
  uda::CategoryCenters centers{Mat::Identity(2, 2), {1, 0}};
  const Mat f = Mat::Ones(1, 2);
  EXPECT_THROW(uda::triplet_loss<double>(f, std::vector<int>{1}, centers, {0.2}), std::invalid_argument);
  EXPECT_THROW(uda::triplet_loss<double>(f, std::vector<int>{0, 0}, centers, {0.2}), std::invalid_argument);
  EXPECT_THROW(uda::triplet_loss<double>(Mat(Mat::Ones(1, 3)), std::vector<int>{0}, centers, {0.2}),
               std::invalid_argument);
  EXPECT_THROW(uda::triplet_loss<double>(f, std::vector<int>{0}, centers, {0.0}), std::invalid_argument);
}

TEST(Consistency, CrossEntropyOnValidPixels) {
  const uda::PseudoLabelMap pseudo{1, 3, {0, 1, 1}, {0.9, 0.9, 0.1}, {1, 1, 0}};
  Mat logits = Mat::Zero(3, 2);
  logits(1, 1) = 2.0;
  const auto r = uda::consistency_loss<double>(pseudo, logits);
  EXPECT_EQ(r.contributing, 2);
  EXPECT_NEAR(r.loss, 0.5 * (std::log(2.0) + std::log(1.0 + std::exp(-2.0))), 1e-12);
  EXPECT_THROW(uda::consistency_loss<double>(pseudo, Mat(Mat::Zero(4, 2))), std::invalid_argument);
}

}  // namespace
