#include "uda/gradcheck.hpp"

#include "uda/random.hpp"
#include "uda/regularizers.hpp"
#include "uda/segmodel.hpp"
#include "uda/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>

namespace uda {

namespace {

using Mat = Matrix<double>;

constexpr double kStep = 1e-6;
constexpr double kKernelTolerance = 1e-4;
constexpr double kModelTolerance = 1e-4;
constexpr double kKinkBand = 1e-4;

class Sampler {
 public:
  explicit Sampler(std::uint64_t seed) : rng_(seed) {}

  Mat normal(Eigen::Index rows, Eigen::Index cols, double sigma = 1.0) {
    std::normal_distribution<double> d(0.0, sigma);
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng_);
    return m;
  }
  Mat uniform(Eigen::Index rows, Eigen::Index cols, double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng_);
    return m;
  }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  bool coin(double p) { return std::bernoulli_distribution(p)(rng_); }

 private:
  std::mt19937_64 rng_;
};

double relative_error(const Mat& analytic, const Mat& numeric) {
  const double scale = std::max(analytic.norm(), numeric.norm());
  if (scale == 0.0) return 0.0;
  return (analytic - numeric).norm() / scale;
}

/// Central differences of f with respect to every entry of x.
Mat numeric_gradient(Mat& x, const std::function<double()>& f) {
  Mat g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double saved = x.data()[i];
    x.data()[i] = saved + kStep;
    const double up = f();
    x.data()[i] = saved - kStep;
    const double down = f();
    x.data()[i] = saved;
    g.data()[i] = (up - down) / (2.0 * kStep);
  }
  return g;
}

double weighted_sum(const Mat& out, const Mat& weights) { return (out.array() * weights.array()).sum(); }

void push_away_from_zero(Mat& m, double band) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    double& v = m.data()[i];
    if (std::abs(v) < band) v = v < 0 ? v - band : v + band;
  }
}

CategoryCenters random_centers(Sampler& s, int classes, int dim) {
  CategoryCenters c{s.normal(classes, dim), std::vector<std::int64_t>(classes, 1)};
  for (int k = 0; k < classes; ++k) c.centers.row(k).normalize();
  return c;
}

std::vector<int> random_labels(Sampler& s, Eigen::Index n, int classes, double ignore_prob) {
  std::vector<int> labels(n);
  for (auto& y : labels) y = s.coin(ignore_prob) ? -1 : s.integer(0, classes - 1);
  return labels;
}

/// Smallest distance of any active decision in the triplet loss to a kink:
/// hinge arguments near zero, or near-ties between hardest negatives.
double triplet_kink_distance(const Mat& features, std::span<const int> labels,
                             const CategoryCenters& centers, const TripletConfig& cfg) {
  double closest = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    if (labels[i] < 0) continue;
    const double norm = features.row(i).norm();
    if (norm == 0.0) continue;
    const Eigen::RowVectorXd g = features.row(i) / norm;
    const double d_pos = (g - centers.centers.row(labels[i])).norm();
    std::vector<double> d_neg;
    for (int c = 0; c < centers.num_categories(); ++c) {
      if (c != labels[i]) d_neg.push_back((g - centers.centers.row(c)).norm());
    }
    std::sort(d_neg.begin(), d_neg.end());
    if (cfg.negative_mode == NegativeMode::kHardest) {
      closest = std::min(closest, std::abs(d_pos - d_neg[0] + cfg.margin));
      if (d_neg.size() > 1) closest = std::min(closest, d_neg[1] - d_neg[0]);
    } else {
      for (double d : d_neg) closest = std::min(closest, std::abs(d_pos - d + cfg.margin));
    }
  }
  return closest;
}

std::uint64_t name_hash(const std::string& name) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (unsigned char c : name) h = (h ^ c) * 1099511628211ull;
  return h;
}

template <typename Instance>
GradcheckSuite run_suite(const std::string& name, double tolerance, int instances,
                         std::uint64_t seed, Instance&& instance) {
  GradcheckSuite suite{name, 0, 0.0, tolerance};
  for (int k = 0; k < instances; ++k) {
    Sampler s(derive_seed({seed, name_hash(name), static_cast<std::uint64_t>(k)}));
    suite.max_relative_error = std::max(suite.max_relative_error, instance(s));
    ++suite.instances;
  }
  return suite;
}

double conv3x3_instance(Sampler& s) {
  const int h = s.integer(2, 5), w = s.integer(2, 5), cin = s.integer(1, 3), cout = s.integer(1, 4);
  Tensor<double> input(h, w, s.normal(static_cast<Eigen::Index>(h) * w, cin));
  Mat weights = s.normal(9 * cin, cout), bias = s.normal(1, cout);
  const Mat r = s.normal(input.pixels(), cout);
  auto loss = [&] { return weighted_sum(conv3x3_forward(input, weights, bias).values, r); };
  const auto g = conv3x3_backward(input, weights, r);
  double err = relative_error(g.input.values, numeric_gradient(input.values, loss));
  err = std::max(err, relative_error(g.weights, numeric_gradient(weights, loss)));
  return std::max(err, relative_error(g.bias, numeric_gradient(bias, loss)));
}

double conv1x1_instance(Sampler& s) {
  const int n = s.integer(1, 12), cin = s.integer(1, 6), cout = s.integer(1, 6);
  Mat input = s.normal(n, cin), weights = s.normal(cin, cout), bias = s.normal(1, cout);
  const Mat r = s.normal(n, cout);
  auto loss = [&] { return weighted_sum(conv1x1_forward(input, weights, bias), r); };
  const auto g = conv1x1_backward(input, weights, r);
  double err = relative_error(g.input, numeric_gradient(input, loss));
  err = std::max(err, relative_error(g.weights, numeric_gradient(weights, loss)));
  return std::max(err, relative_error(g.bias, numeric_gradient(bias, loss)));
}

double relu_instance(Sampler& s) {
  Mat x = s.normal(s.integer(1, 10), s.integer(1, 5));
  push_away_from_zero(x, kKinkBand);
  const Mat r = s.normal(x.rows(), x.cols());
  auto loss = [&] { return weighted_sum(relu_forward(x), r); };
  return relative_error(relu_backward(x, r), numeric_gradient(x, loss));
}

double l2norm_instance(Sampler& s) {
  Mat x = s.normal(s.integer(1, 8), s.integer(2, 6));
  const Mat r = s.normal(x.rows(), x.cols());
  auto loss = [&] { return weighted_sum(l2_normalize_rows(x), r); };
  return relative_error(l2_normalize_rows_backward(x, r), numeric_gradient(x, loss));
}

double cross_entropy_instance(Sampler& s) {
  const int classes = s.integer(2, 6);
  Mat logits = s.normal(s.integer(2, 16), classes, 2.0);
  const auto labels = random_labels(s, logits.rows(), classes, 0.2);
  std::vector<std::uint8_t> mask(logits.rows());
  for (auto& m : mask) m = s.coin(0.8) ? 1 : 0;
  auto loss = [&] { return cross_entropy<double>(logits, labels, mask).loss; };
  return relative_error(cross_entropy<double>(logits, labels, mask).grad,
                        numeric_gradient(logits, loss));
}

double triplet_instance(Sampler& s, NegativeMode mode) {
  const TripletConfig cfg{0.2, mode};
  for (;;) {
    const int classes = s.integer(3, 5), dim = s.integer(2, 6);
    const auto centers = random_centers(s, classes, dim);
    Mat features = s.normal(s.integer(2, 12), dim);
    const auto labels = random_labels(s, features.rows(), classes, 0.1);
    if (triplet_kink_distance(features, labels, centers, cfg) < kKinkBand) continue;
    auto loss = [&] { return triplet_loss<double>(features, labels, centers, cfg).loss; };
    return relative_error(triplet_loss<double>(features, labels, centers, cfg).grad,
                          numeric_gradient(features, loss));
  }
}

double consistency_instance(Sampler& s) {
  const int h = s.integer(2, 4), w = s.integer(2, 4), classes = s.integer(2, 5);
  PseudoLabelMap pseudo{h, w, random_labels(s, h * w, classes, 0.0), {}, {}};
  pseudo.confidence.assign(pseudo.labels.size(), 1.0);
  for (std::size_t j = 0; j < pseudo.labels.size(); ++j) pseudo.valid.push_back(s.coin(0.7) ? 1 : 0);
  Mat logits = s.normal(static_cast<Eigen::Index>(h) * w, classes, 2.0);
  auto loss = [&] { return consistency_loss<double>(pseudo, logits).loss; };
  return relative_error(consistency_loss<double>(pseudo, logits).grad,
                        numeric_gradient(logits, loss));
}

/// Segmentation plus triplet loss through every layer of a small model.
double model_instance(Sampler& s) {
  const ModelConfig config{3, 4, 4, 3};
  const TripletConfig tcfg;
  for (;;) {
    SegModel<double> model(config, static_cast<std::uint64_t>(s.integer(0, 1 << 30)));
    for (auto* p : model.parameters()) {
      if (p->value.rows() == 1) p->value = s.normal(1, p->value.cols(), 0.1);
    }
    const int h = s.integer(3, 5), w = s.integer(3, 5);
    const Tensor<double> input(h, w, s.uniform(static_cast<Eigen::Index>(h) * w, 3, 0.0, 1.0));
    const auto labels = random_labels(s, input.pixels(), config.num_classes, 0.1);
    const auto centers = random_centers(s, config.num_classes, config.feature_channels);

    const auto acts = model.forward(input);
    auto near_kink = [](const Mat& pre) { return pre.cwiseAbs().minCoeff() < kKinkBand; };
    if (near_kink(acts.pre1) || near_kink(acts.pre2) || near_kink(acts.pre3) ||
        triplet_kink_distance(acts.features, labels, centers, tcfg) < kKinkBand) {
      continue;
    }
    auto loss = [&] {
      const auto a = model.forward(input);
      return cross_entropy<double>(a.logits, labels).loss +
             triplet_loss<double>(a.features, labels, centers, tcfg).loss;
    };
    const auto ce = cross_entropy<double>(acts.logits, labels);
    const auto tri = triplet_loss<double>(acts.features, labels, centers, tcfg);
    model.zero_grad();
    model.backward(acts, ce.grad, tri.grad);

    Mat analytic(1, 0), numeric(1, 0);
    for (auto* p : model.parameters()) {
      const Mat num = numeric_gradient(p->value, loss);
      Mat a2(1, analytic.cols() + p->grad.size()), n2(1, numeric.cols() + num.size());
      a2 << analytic, p->grad.reshaped<Eigen::RowMajor>().transpose();
      n2 << numeric, num.reshaped<Eigen::RowMajor>().transpose();
      analytic = std::move(a2);
      numeric = std::move(n2);
    }
    return relative_error(analytic, numeric);
  }
}

}  // namespace

GradcheckReport run_gradchecks(std::uint64_t seed, int instances) {
  GradcheckReport r;
  r.suites.push_back(run_suite("conv3x3", kKernelTolerance, instances, seed, conv3x3_instance));
  r.suites.push_back(run_suite("conv1x1", kKernelTolerance, instances, seed, conv1x1_instance));
  r.suites.push_back(run_suite("relu", kKernelTolerance, instances, seed, relu_instance));
  r.suites.push_back(run_suite("l2_normalize", kKernelTolerance, instances, seed, l2norm_instance));
  r.suites.push_back(
      run_suite("cross_entropy", kKernelTolerance, instances, seed, cross_entropy_instance));
  r.suites.push_back(run_suite("triplet_hardest", kKernelTolerance, instances, seed,
                               [](Sampler& s) { return triplet_instance(s, NegativeMode::kHardest); }));
  r.suites.push_back(run_suite("triplet_all", kKernelTolerance, instances, seed,
                               [](Sampler& s) { return triplet_instance(s, NegativeMode::kAll); }));
  r.suites.push_back(
      run_suite("consistency", kKernelTolerance, instances, seed, consistency_instance));
  r.suites.push_back(run_suite("model", kModelTolerance, instances, seed, model_instance));
  return r;
}

}  // namespace uda
