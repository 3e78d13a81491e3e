#pragma once

#include "uda/checkpoint.hpp"
#include "uda/imgproc.hpp"
#include "uda/tensor.hpp"

#include <array>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace uda {

struct ModelConfig {
  int in_channels = 3;
  int hidden_channels = 16;
  int feature_channels = 16;
  int num_classes = 5;

  void validate() const {
    if (in_channels < 1 || hidden_channels < 1 || feature_channels < 1 || num_classes < 1) {
      throw std::invalid_argument("ModelConfig: all channel counts must be >= 1");
    }
  }
  bool operator==(const ModelConfig&) const = default;
};

/// RGB tensor from an 8-bit image, standardized to (v / 255 - 0.5) / 0.25.
template <typename Scalar>
Tensor<Scalar> image_tensor(const RgbImage& img) {
  Tensor<Scalar> t(img.height, img.width, 3);
  for (Eigen::Index i = 0; i < t.pixels(); ++i) {
    for (int c = 0; c < 3; ++c) {
      t.values(i, c) = (static_cast<Scalar>(img.data[3 * i + c]) / Scalar(255) - Scalar(0.5)) / Scalar(0.25);
    }
  }
  return t;
}

struct Prediction {
  std::vector<int> labels;
  std::vector<double> confidence;
};

/// Argmax of softmax per pixel; ties go to the lowest class index.
template <typename Scalar>
Prediction predict_from_logits(const Matrix<Scalar>& logits) {
  const Matrix<Scalar> prob = softmax_forward(logits);
  Prediction p;
  p.labels.resize(prob.rows());
  p.confidence.resize(prob.rows());
  for (Eigen::Index i = 0; i < prob.rows(); ++i) {
    int best = 0;
    for (int c = 1; c < prob.cols(); ++c) {
      if (prob(i, c) > prob(i, best)) best = c;
    }
    p.labels[i] = best;
    p.confidence[i] = static_cast<double>(prob(i, best));
  }
  return p;
}

/// Three conv3x3+relu blocks followed by a 1x1 classifier head. The post-relu
/// output of the third block is the feature map used by the regularizers.
template <typename Scalar>
class SegModel {
 public:
  enum Slot { kConv1W, kConv1B, kConv2W, kConv2B, kConv3W, kConv3B, kHeadW, kHeadB, kSlotCount };

  struct Activations {
    Tensor<Scalar> input;
    Matrix<Scalar> pre1;
    Tensor<Scalar> act1;
    Matrix<Scalar> pre2;
    Tensor<Scalar> act2;
    Matrix<Scalar> pre3;
    Matrix<Scalar> features;
    Matrix<Scalar> logits;
  };

  /// He-initialized weights (fan-in scaled Gaussian), zero biases.
  SegModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    std::mt19937_64 rng(seed);
    const int h = config.hidden_channels, f = config.feature_channels;
    const std::array<std::pair<int, int>, 4> shapes = {
        std::pair{9 * config.in_channels, h}, {9 * h, h}, {9 * h, f}, {f, config.num_classes}};
    params_.resize(kSlotCount);
    for (int layer = 0; layer < 4; ++layer) {
      const auto [rows, cols] = shapes[layer];
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / rows));
      Matrix<Scalar> w(rows, cols);
      for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<Scalar>(dist(rng));
      params_[2 * layer] = Parameter<Scalar>(std::move(w));
      params_[2 * layer + 1] = Parameter<Scalar>(Matrix<Scalar>::Zero(1, cols));
    }
  }

  /// Model from raw parameter values in slot order; shapes determine the config.
  static SegModel from_values(std::vector<Matrix<Scalar>> values) {
    if (values.size() != kSlotCount) {
      throw std::invalid_argument("SegModel: expected " + std::to_string(kSlotCount) +
                                  " tensors, found " + std::to_string(values.size()));
    }
    ModelConfig cfg;
    if (values[kConv1W].rows() % 9 != 0) throw std::invalid_argument("SegModel: bad conv1 shape");
    cfg.in_channels = static_cast<int>(values[kConv1W].rows() / 9);
    cfg.hidden_channels = static_cast<int>(values[kConv1W].cols());
    cfg.feature_channels = static_cast<int>(values[kConv3W].cols());
    cfg.num_classes = static_cast<int>(values[kHeadW].cols());
    SegModel m(cfg);
    for (int s = 0; s < kSlotCount; ++s) {
      const auto& expected = m.params_[s].value;
      if (values[s].rows() != expected.rows() || values[s].cols() != expected.cols()) {
        throw std::invalid_argument("SegModel: tensor " + std::to_string(s) + " has shape " +
                                    std::to_string(values[s].rows()) + "x" +
                                    std::to_string(values[s].cols()) + ", expected " +
                                    std::to_string(expected.rows()) + "x" +
                                    std::to_string(expected.cols()));
      }
      m.params_[s] = Parameter<Scalar>(std::move(values[s]));
    }
    return m;
  }

  const ModelConfig& config() const { return config_; }

  Activations forward(const Tensor<Scalar>& input) const {
    if (input.channels() != config_.in_channels) {
      throw std::invalid_argument("SegModel::forward: expected " +
                                  std::to_string(config_.in_channels) + " input channels, got " +
                                  input.shape_string());
    }
    const int h = input.height, w = input.width;
    Activations a;
    a.input = input;
    a.pre1 = conv3x3_forward(input, value(kConv1W), value(kConv1B)).values;
    a.act1 = Tensor<Scalar>(h, w, relu_forward(a.pre1));
    a.pre2 = conv3x3_forward(a.act1, value(kConv2W), value(kConv2B)).values;
    a.act2 = Tensor<Scalar>(h, w, relu_forward(a.pre2));
    a.pre3 = conv3x3_forward(a.act2, value(kConv3W), value(kConv3B)).values;
    a.features = relu_forward(a.pre3);
    a.logits = conv1x1_forward(a.features, value(kHeadW), value(kHeadB));
    return a;
  }

  /// Accumulates parameter gradients for dL/dlogits and, optionally, an extra
  /// dL/dfeatures term (pass an empty matrix for none).
  void backward(const Activations& a, const Matrix<Scalar>& grad_logits,
                const Matrix<Scalar>& grad_features = {}) {
    auto head = conv1x1_backward(a.features, value(kHeadW), grad_logits);
    params_[kHeadW].grad += head.weights;
    params_[kHeadB].grad += head.bias;
    Matrix<Scalar> g = std::move(head.input);
    if (grad_features.size() > 0) g += grad_features;

    auto c3 = conv3x3_backward(a.act2, value(kConv3W), relu_backward(a.pre3, g));
    params_[kConv3W].grad += c3.weights;
    params_[kConv3B].grad += c3.bias;
    auto c2 = conv3x3_backward(a.act1, value(kConv2W), relu_backward(a.pre2, c3.input.values));
    params_[kConv2W].grad += c2.weights;
    params_[kConv2B].grad += c2.bias;
    auto c1 = conv3x3_backward(a.input, value(kConv1W), relu_backward(a.pre1, c2.input.values),
                               /*need_input_grad=*/false);
    params_[kConv1W].grad += c1.weights;
    params_[kConv1B].grad += c1.bias;
  }

  Prediction predict(const Tensor<Scalar>& input) const {
    return predict_from_logits(forward(input).logits);
  }

  std::array<Parameter<Scalar>*, kSlotCount> parameters() {
    std::array<Parameter<Scalar>*, kSlotCount> out{};
    for (int s = 0; s < kSlotCount; ++s) out[s] = &params_[s];
    return out;
  }
  const Parameter<Scalar>& parameter(int slot) const { return params_[slot]; }
  Parameter<Scalar>& parameter(int slot) { return params_[slot]; }
  const Matrix<Scalar>& value(int slot) const { return params_[slot].value; }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

 private:
  explicit SegModel(const ModelConfig& config) : config_(config) {
    const int h = config.hidden_channels, f = config.feature_channels;
    const std::array<std::pair<int, int>, 4> shapes = {
        std::pair{9 * config.in_channels, h}, {9 * h, h}, {9 * h, f}, {f, config.num_classes}};
    params_.resize(kSlotCount);
    for (int layer = 0; layer < 4; ++layer) {
      params_[2 * layer] = Parameter<Scalar>(Matrix<Scalar>::Zero(shapes[layer].first, shapes[layer].second));
      params_[2 * layer + 1] = Parameter<Scalar>(Matrix<Scalar>::Zero(1, shapes[layer].second));
    }
  }

  ModelConfig config_;
  std::vector<Parameter<Scalar>> params_;
};

/// Parameter values as f32 in slot order. Bit-exact for float models.
template <typename Scalar>
void save_checkpoint(const SegModel<Scalar>& model, const std::filesystem::path& path) {
  std::vector<Matrix<float>> tensors;
  for (int s = 0; s < SegModel<Scalar>::kSlotCount; ++s) {
    tensors.push_back(model.value(s).template cast<float>());
  }
  write_tensor_file(path, tensors);
}

template <typename Scalar = float>
SegModel<Scalar> load_checkpoint(const std::filesystem::path& path) {
  auto tensors = read_tensor_file(path);
  std::vector<Matrix<Scalar>> values;
  values.reserve(tensors.size());
  for (auto& t : tensors) values.push_back(t.template cast<Scalar>());
  return SegModel<Scalar>::from_values(std::move(values));
}

}  // namespace uda
