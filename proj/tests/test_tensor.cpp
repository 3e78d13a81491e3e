#include "uda/checkpoint.hpp"
#include "uda/tensor.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

namespace {

namespace fs = std::filesystem;
using Mat = uda::Matrix<double>;

Mat random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
  std::normal_distribution<double> d(0.0, 1.0);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng);
  return m;
}

/// Direct zero-padded 3x3 convolution with explicit loops.
Mat naive_conv3x3(const uda::Tensor<double>& in, const Mat& w, const Mat& b) {
  const int h = in.height, wd = in.width, cin = in.channels();
  Mat out(in.pixels(), w.cols());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < wd; ++x) {
      for (Eigen::Index co = 0; co < w.cols(); ++co) {
        double acc = b(0, co);
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int sy = y + dy, sx = x + dx;
            if (sy < 0 || sy >= h || sx < 0 || sx >= wd) continue;
            for (int ci = 0; ci < cin; ++ci) {
              acc += in.values(sy * wd + sx, ci) * w(((dy + 1) * 3 + (dx + 1)) * cin + ci, co);
            }
          }
        }
        out(y * wd + x, co) = acc;
      }
    }
  }
  return out;
}

TEST(Conv3x3, MatchesDirectConvolution) {
  std::mt19937_64 rng(1);
  for (int k = 0; k < 10; ++k) {
    const int h = 1 + k % 4, w = 2 + k % 3, cin = 1 + k % 3, cout = 1 + k % 4;
    const uda::Tensor<double> in(h, w, random_matrix(rng, h * w, cin));
    const Mat weights = random_matrix(rng, 9 * cin, cout), bias = random_matrix(rng, 1, cout);
    const auto out = uda::conv3x3_forward(in, weights, bias);
    EXPECT_LE((out.values - naive_conv3x3(in, weights, bias)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Conv3x3, ShapeErrorsNameBothShapes) {
  const uda::Tensor<double> in(2, 2, 3);
  try {
    uda::conv3x3_forward(in, Mat(Mat::Zero(9 * 2, 4)), Mat(Mat::Zero(1, 4)));
    FAIL();
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x2x3]"), std::string::npos);
    EXPECT_NE(msg.find("[18x4]"), std::string::npos);
  }
}

TEST(Conv3x3, Col2imIsAdjointOfIm2col) {
  std::mt19937_64 rng(2);
  const uda::Tensor<double> x(3, 4, random_matrix(rng, 12, 2));
  const Mat y = random_matrix(rng, 12, 18);
  const double lhs = (uda::im2col3x3(x).array() * y.array()).sum();
  const double rhs = (x.values.array() * uda::col2im3x3<double>(y, 3, 4, 2).values.array()).sum();
  EXPECT_NEAR(lhs, rhs, 1e-10);
}

TEST(Conv1x1, IsAffineMap) {
  std::mt19937_64 rng(3);
  const Mat x = random_matrix(rng, 5, 3), w = random_matrix(rng, 3, 2), b = random_matrix(rng, 1, 2);
  const Mat out = uda::conv1x1_forward(x, w, b);
  for (int i = 0; i < 5; ++i) {
    EXPECT_NEAR(out(i, 1), x.row(i).dot(w.col(1)) + b(0, 1), 1e-12);
  }
  EXPECT_THROW(uda::conv1x1_forward(x, Mat(Mat::Zero(4, 2)), b), std::invalid_argument);
}

TEST(Relu, ForwardAndBackward) {
  Mat x(1, 4);
  x << -1.0, 0.0, 0.5, 2.0;
  const Mat g = Mat::Constant(1, 4, 3.0);
  EXPECT_EQ(uda::relu_forward(x), (Mat(1, 4) << 0.0, 0.0, 0.5, 2.0).finished());
  EXPECT_EQ(uda::relu_backward(x, g), (Mat(1, 4) << 0.0, 0.0, 3.0, 3.0).finished());
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
  std::mt19937_64 rng(4);
  const Mat logits = random_matrix(rng, 6, 4) * 30.0;
  const Mat p = uda::softmax_forward(logits);
  for (int i = 0; i < 6; ++i) EXPECT_NEAR(p.row(i).sum(), 1.0, 1e-12);
  const Mat shifted = uda::softmax_forward(Mat(logits.array() + 1000.0));
  EXPECT_LE((p - shifted).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(CrossEntropy, UniformLogitsGiveLogC) {
  const Mat logits = Mat::Zero(4, 5);
  const std::vector<int> labels = {0, 1, 2, 3};
  const auto r = uda::cross_entropy<double>(logits, labels);
  EXPECT_NEAR(r.loss, std::log(5.0), 1e-12);
  EXPECT_EQ(r.contributing, 4);
  EXPECT_NEAR(r.grad(0, 0), (0.2 - 1.0) / 4.0, 1e-12);
}

TEST(CrossEntropy, IgnoresNegativeLabelsAndMaskedPixels) {
  std::mt19937_64 rng(5);
  const Mat logits = random_matrix(rng, 4, 3);
  const std::vector<int> labels = {0, -1, 2, 1};
  const std::vector<std::uint8_t> mask = {1, 1, 0, 1};
  const auto r = uda::cross_entropy<double>(logits, labels, mask);
  EXPECT_EQ(r.contributing, 2);
  EXPECT_EQ(r.grad.row(1).cwiseAbs().sum(), 0.0);
  EXPECT_EQ(r.grad.row(2).cwiseAbs().sum(), 0.0);
  const Mat lp = uda::softmax_forward(logits).array().log();
  EXPECT_NEAR(r.loss, -(lp(0, 0) + lp(3, 1)) / 2.0, 1e-12);
}

TEST(CrossEntropy, NoContributorsGivesZero) {
  const auto r = uda::cross_entropy<double>(Mat::Zero(2, 3), std::vector<int>{-1, -1});
  EXPECT_EQ(r.loss, 0.0);
  EXPECT_EQ(r.contributing, 0);
}

TEST(CrossEntropy, RejectsBadShapes) {
  EXPECT_THROW(uda::cross_entropy<double>(Mat::Zero(2, 3), std::vector<int>{0}), std::invalid_argument);
  EXPECT_THROW(uda::cross_entropy<double>(Mat::Zero(1, 3), std::vector<int>{3}), std::invalid_argument);
}

TEST(L2Normalize, UnitRowsAndDegenerateThrows) {
  std::mt19937_64 rng(6);
  const Mat x = random_matrix(rng, 5, 4);
  const Mat y = uda::l2_normalize_rows(x);
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(y.row(i).norm(), 1.0, 1e-12);
  EXPECT_THROW(uda::l2_normalize_rows(Mat(Mat::Zero(1, 3))), std::domain_error);
}

TEST(Optimizer, PolySchedule) {
  uda::OptimizerConfig cfg{1.0, 0.9, 0.0, 2.0, 10};
  EXPECT_DOUBLE_EQ(uda::poly_learning_rate(cfg, 0), 1.0);
  EXPECT_DOUBLE_EQ(uda::poly_learning_rate(cfg, 5), 0.25);
  EXPECT_DOUBLE_EQ(uda::poly_learning_rate(cfg, 10), 0.0);
}

TEST(Optimizer, MomentumStepByHand) {
  uda::Parameter<double> p(Mat::Constant(1, 2, 1.0));
  p.grad = (Mat(1, 2) << 0.5, -1.0).finished();
  p.momentum = (Mat(1, 2) << 0.2, 0.0).finished();
  const uda::OptimizerConfig cfg{0.1, 0.9, 0.01, 0.9, 100};
  uda::Parameter<double>* params[] = {&p};
  uda::sgd_step<double>(params, cfg, 0);
  // v = 0.9 v + g + wd w ; w -= lr v
  EXPECT_NEAR(p.momentum(0, 0), 0.18 + 0.5 + 0.01, 1e-15);
  EXPECT_NEAR(p.momentum(0, 1), -1.0 + 0.01, 1e-15);
  EXPECT_NEAR(p.value(0, 0), 1.0 - 0.1 * 0.69, 1e-15);
  EXPECT_NEAR(p.value(0, 1), 1.0 + 0.1 * 0.99, 1e-15);
  EXPECT_EQ(p.grad.cwiseAbs().sum(), 0.0);
}

TEST(Optimizer, ValidatesConfig) {
  EXPECT_THROW((uda::OptimizerConfig{0.0, 0.9, 0, 0.9, 1}.validate()), std::invalid_argument);
  EXPECT_THROW((uda::OptimizerConfig{1e-3, 1.0, 0, 0.9, 1}.validate()), std::invalid_argument);
  EXPECT_THROW((uda::OptimizerConfig{1e-3, 0.9, 0, 0.0, 1}.validate()), std::invalid_argument);
  EXPECT_NO_THROW((uda::OptimizerConfig{}.validate()));
}

class CheckpointFile : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::path(UDA_SCRATCH_DIR) / "checkpoint";
    fs::create_directories(dir_);
  }
  fs::path dir_;
};

TEST_F(CheckpointFile, RoundTripIsBitExact) {
  std::mt19937_64 rng(7);
  std::vector<uda::Matrix<float>> tensors = {random_matrix(rng, 3, 4).cast<float>(),
                                             random_matrix(rng, 1, 7).cast<float>(),
                                             uda::Matrix<float>(0, 5)};
  const fs::path path = dir_ / "rt.ckpt";
  uda::write_tensor_file(path, tensors);
  const auto back = uda::read_tensor_file(path);
  ASSERT_EQ(back.size(), tensors.size());
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    ASSERT_EQ(back[i].rows(), tensors[i].rows());
    ASSERT_EQ(back[i].cols(), tensors[i].cols());
    EXPECT_EQ(0, std::memcmp(back[i].data(), tensors[i].data(), sizeof(float) * tensors[i].size()));
  }
}

TEST_F(CheckpointFile, LayoutIsLittleEndianWithHeader) {
  const fs::path path = dir_ / "layout.ckpt";
  uda::write_tensor_file(path, {uda::Matrix<float>::Constant(1, 1, 1.0f)});
  std::ifstream is(path, std::ios::binary);
  const std::string bytes((std::istreambuf_iterator<char>(is)), {});
  // magic 8 + version 4 + count 4 + rank 4 + dims 16 + payload 4
  ASSERT_EQ(bytes.size(), 40u);
  EXPECT_EQ(bytes.substr(0, 7), "UDATNSR");
  EXPECT_EQ(bytes[8], 1);
  EXPECT_EQ(bytes[12], 1);
  EXPECT_EQ(bytes[16], 2);
  EXPECT_EQ(static_cast<unsigned char>(bytes[39]), 0x3f);  // 1.0f = 0x3f800000
}

TEST_F(CheckpointFile, CorruptFilesAreRejected) {
  const fs::path path = dir_ / "bad.ckpt";
  uda::write_tensor_file(path, {uda::Matrix<float>::Constant(2, 2, 1.0f)});
  std::ifstream is(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(is)), {});
  is.close();
  auto write = [&](const std::string& b) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os << b;
  };
  write(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(uda::read_tensor_file(path), std::runtime_error);
  std::string magic = bytes;
  magic[0] = 'X';
  write(magic);
  EXPECT_THROW(uda::read_tensor_file(path), std::runtime_error);
  std::string version = bytes;
  version[8] = 9;
  write(version);
  EXPECT_THROW(uda::read_tensor_file(path), std::runtime_error);
  write(bytes + "x");
  EXPECT_THROW(uda::read_tensor_file(path), std::runtime_error);
  EXPECT_THROW(uda::read_tensor_file(dir_ / "missing.ckpt"), std::runtime_error);
}

}  // namespace
