#pragma once

// Minimal dense kernels for a per-pixel segmentation net: 3x3 convolution via
// im2col, 1x1 convolution as a matrix product, relu, softmax, cross-entropy,
// row-wise L2 normalization, and momentum SGD with a polynomial schedule.
//
// Spatial tensors are stored as (height * width) x channels matrices, one row
// per pixel in row-major pixel order.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace uda {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

/// Spatial feature tensor: H x W pixels, C channels per pixel.
template <typename Scalar>
struct Tensor {
  int height = 0;
  int width = 0;
  Matrix<Scalar> values;

  Tensor() = default;
  Tensor(int h, int w, int channels) : height(h), width(w), values(Matrix<Scalar>::Zero(static_cast<Eigen::Index>(h) * w, channels)) {}
  Tensor(int h, int w, Matrix<Scalar> v) : height(h), width(w), values(std::move(v)) {
    if (values.rows() != static_cast<Eigen::Index>(h) * w) {
      throw std::invalid_argument("Tensor: row count does not match spatial shape");
    }
  }

  Eigen::Index pixels() const { return values.rows(); }
  int channels() const { return static_cast<int>(values.cols()); }

  std::string shape_string() const {
    std::ostringstream os;
    os << "[" << height << "x" << width << "x" << values.cols() << "]";
    return os.str();
  }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(height, width, values.template cast<Other>());
  }
};

template <typename Scalar>
struct Parameter {
  Matrix<Scalar> value;
  Matrix<Scalar> grad;
  Matrix<Scalar> momentum;

  Parameter() = default;
  explicit Parameter(Matrix<Scalar> v)
      : value(std::move(v)),
        grad(Matrix<Scalar>::Zero(value.rows(), value.cols())),
        momentum(Matrix<Scalar>::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(); }
};

// ---------------------------------------------------------------------------
// 3x3 convolution, stride 1, zero padding 1.
//
// Weights are (9 * in_channels) x out_channels; row (ky * 3 + kx) * in + ci
// holds the tap at offset (ky - 1, kx - 1) for input channel ci.

template <typename Scalar>
Matrix<Scalar> im2col3x3(const Tensor<Scalar>& input) {
  const int h = input.height, w = input.width, c = input.channels();
  Matrix<Scalar> col = Matrix<Scalar>::Zero(input.pixels(), 9 * c);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Eigen::Index row = static_cast<Eigen::Index>(y) * w + x;
      for (int ky = 0; ky < 3; ++ky) {
        const int sy = y + ky - 1;
        if (sy < 0 || sy >= h) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const int sx = x + kx - 1;
          if (sx < 0 || sx >= w) continue;
          col.block(row, (ky * 3 + kx) * c, 1, c) =
              input.values.row(static_cast<Eigen::Index>(sy) * w + sx);
        }
      }
    }
  }
  return col;
}

template <typename Scalar>
Tensor<Scalar> col2im3x3(const Matrix<Scalar>& col, int h, int w, int c) {
  Tensor<Scalar> out(h, w, c);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Eigen::Index row = static_cast<Eigen::Index>(y) * w + x;
      for (int ky = 0; ky < 3; ++ky) {
        const int sy = y + ky - 1;
        if (sy < 0 || sy >= h) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const int sx = x + kx - 1;
          if (sx < 0 || sx >= w) continue;
          out.values.row(static_cast<Eigen::Index>(sy) * w + sx) +=
              col.block(row, (ky * 3 + kx) * c, 1, c);
        }
      }
    }
  }
  return out;
}

namespace detail {

template <typename Scalar>
void check_conv_shapes(const Tensor<Scalar>& input, const Matrix<Scalar>& weights,
                       const Matrix<Scalar>& bias) {
  if (weights.rows() != 9 * input.values.cols() || bias.rows() != 1 ||
      bias.cols() != weights.cols()) {
    std::ostringstream os;
    os << "conv3x3: shape mismatch, input " << input.shape_string() << " weights ["
       << weights.rows() << "x" << weights.cols() << "] bias [" << bias.rows() << "x"
       << bias.cols() << "]";
    throw std::invalid_argument(os.str());
  }
}

}  // namespace detail

template <typename Scalar>
Tensor<Scalar> conv3x3_forward(const Tensor<Scalar>& input, const Matrix<Scalar>& weights,
                               const Matrix<Scalar>& bias) {
  detail::check_conv_shapes(input, weights, bias);
  Matrix<Scalar> out = im2col3x3(input) * weights;
  out.rowwise() += bias.row(0);
  return Tensor<Scalar>(input.height, input.width, std::move(out));
}

template <typename Scalar>
struct ConvGrads {
  Tensor<Scalar> input;
  Matrix<Scalar> weights;
  Matrix<Scalar> bias;
};

/// Gradients of a 3x3 convolution given dL/d(output).
template <typename Scalar>
ConvGrads<Scalar> conv3x3_backward(const Tensor<Scalar>& input, const Matrix<Scalar>& weights,
                                   const Matrix<Scalar>& grad_output,
                                   bool need_input_grad = true) {
  if (grad_output.rows() != input.pixels() || grad_output.cols() != weights.cols()) {
    std::ostringstream os;
    os << "conv3x3_backward: grad_output [" << grad_output.rows() << "x" << grad_output.cols()
       << "] does not match input " << input.shape_string() << " and " << weights.cols()
       << " output channels";
    throw std::invalid_argument(os.str());
  }
  const Matrix<Scalar> col = im2col3x3(input);
  ConvGrads<Scalar> g;
  g.weights = col.transpose() * grad_output;
  g.bias = grad_output.colwise().sum();
  if (need_input_grad) {
    g.input = col2im3x3<Scalar>(grad_output * weights.transpose(), input.height, input.width,
                                input.channels());
  }
  return g;
}

// ---------------------------------------------------------------------------
// 1x1 convolution (per-pixel affine map).

template <typename Scalar>
Matrix<Scalar> conv1x1_forward(const Matrix<Scalar>& input, const Matrix<Scalar>& weights,
                               const Matrix<Scalar>& bias) {
  if (input.cols() != weights.rows() || bias.cols() != weights.cols()) {
    std::ostringstream os;
    os << "conv1x1: shape mismatch, input [" << input.rows() << "x" << input.cols()
       << "] weights [" << weights.rows() << "x" << weights.cols() << "]";
    throw std::invalid_argument(os.str());
  }
  Matrix<Scalar> out = input * weights;
  out.rowwise() += bias.row(0);
  return out;
}

template <typename Scalar>
struct LinearGrads {
  Matrix<Scalar> input;
  Matrix<Scalar> weights;
  Matrix<Scalar> bias;
};

template <typename Scalar>
LinearGrads<Scalar> conv1x1_backward(const Matrix<Scalar>& input, const Matrix<Scalar>& weights,
                                     const Matrix<Scalar>& grad_output) {
  return {grad_output * weights.transpose(), input.transpose() * grad_output,
          grad_output.colwise().sum()};
}

// ---------------------------------------------------------------------------
// Pointwise and per-pixel kernels.

template <typename Scalar>
Matrix<Scalar> relu_forward(const Matrix<Scalar>& x) {
  return x.cwiseMax(Scalar(0));
}

template <typename Scalar>
Matrix<Scalar> relu_backward(const Matrix<Scalar>& pre_activation,
                             const Matrix<Scalar>& grad_output) {
  return (pre_activation.array() > Scalar(0)).select(grad_output, Scalar(0));
}

/// Softmax over channels for every pixel row.
template <typename Scalar>
Matrix<Scalar> softmax_forward(const Matrix<Scalar>& logits) {
  Matrix<Scalar> p = logits.colwise() - logits.rowwise().maxCoeff();
  p = p.array().exp();
  p.array().colwise() /= p.rowwise().sum().array();
  return p;
}

template <typename Scalar>
struct CrossEntropyResult {
  double loss = 0.0;
  Matrix<Scalar> grad;           // dL/dlogits
  Eigen::Index contributing = 0;  // pixels with a label and mask set
};

/// Mean cross-entropy over pixels whose label is >= 0 and whose mask entry is
/// non-zero. An empty mask means every labelled pixel contributes.
template <typename Scalar>
CrossEntropyResult<Scalar> cross_entropy(const Matrix<Scalar>& logits,
                                         std::span<const int> labels,
                                         std::span<const std::uint8_t> mask = {}) {
  const Eigen::Index n = logits.rows();
  const Eigen::Index classes = logits.cols();
  if (static_cast<Eigen::Index>(labels.size()) != n ||
      (!mask.empty() && static_cast<Eigen::Index>(mask.size()) != n)) {
    std::ostringstream os;
    os << "cross_entropy: " << n << " logit rows but " << labels.size() << " labels and "
       << mask.size() << " mask entries";
    throw std::invalid_argument(os.str());
  }
  CrossEntropyResult<Scalar> r;
  r.grad = Matrix<Scalar>::Zero(n, classes);
  const Matrix<Scalar> prob = softmax_forward(logits);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || (!mask.empty() && mask[i] == 0)) continue;
    if (y >= classes) throw std::invalid_argument("cross_entropy: label out of range");
    const Scalar shifted_max = logits.row(i).maxCoeff();
    const double log_sum =
        std::log(static_cast<double>((logits.row(i).array() - shifted_max).exp().sum())) +
        static_cast<double>(shifted_max);
    total += log_sum - static_cast<double>(logits(i, y));
    r.grad.row(i) = prob.row(i);
    r.grad(i, y) -= Scalar(1);
    ++r.contributing;
  }
  if (r.contributing > 0) {
    r.loss = total / static_cast<double>(r.contributing);
    r.grad /= static_cast<Scalar>(r.contributing);
  }
  return r;
}

/// Each row divided by its L2 norm; throws on a zero row.
template <typename Scalar>
Matrix<Scalar> l2_normalize_rows(const Matrix<Scalar>& m) {
  Matrix<Scalar> out(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const Scalar norm = m.row(i).norm();
    if (!(norm > Scalar(0))) throw std::domain_error("degenerate feature");
    out.row(i) = m.row(i) / norm;
  }
  return out;
}

/// Backward of y = x / |x| for each row: (g - y (y.g)) / |x|.
template <typename Scalar>
Matrix<Scalar> l2_normalize_rows_backward(const Matrix<Scalar>& input,
                                          const Matrix<Scalar>& grad_output) {
  Matrix<Scalar> out(input.rows(), input.cols());
  for (Eigen::Index i = 0; i < input.rows(); ++i) {
    const Scalar norm = input.row(i).norm();
    if (!(norm > Scalar(0))) throw std::domain_error("degenerate feature");
    const RowVector<Scalar> y = input.row(i) / norm;
    out.row(i) = (grad_output.row(i) - y * y.dot(grad_output.row(i))) / norm;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer

struct OptimizerConfig {
  double base_lr = 5e-4;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double poly_power = 0.9;
  int total_iters = 2000;

  void validate() const {
    if (!(base_lr > 0.0)) throw std::invalid_argument("OptimizerConfig: base_lr must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) {
      throw std::invalid_argument("OptimizerConfig: momentum must be in [0, 1)");
    }
    if (!(poly_power > 0.0)) throw std::invalid_argument("OptimizerConfig: poly_power must be > 0");
    if (total_iters < 1) throw std::invalid_argument("OptimizerConfig: total_iters must be >= 1");
  }
};

/// base_lr * (1 - iter / total)^power, floored at 0 once iter >= total.
inline double poly_learning_rate(const OptimizerConfig& cfg, int iter) {
  if (iter >= cfg.total_iters) return 0.0;
  const double frac = 1.0 - static_cast<double>(iter) / static_cast<double>(cfg.total_iters);
  return cfg.base_lr * std::pow(frac, cfg.poly_power);
}

/// v <- m v + (g + wd w);  w <- w - lr v;  grads cleared afterwards.
template <typename Scalar>
void sgd_step(std::span<Parameter<Scalar>* const> params, const OptimizerConfig& cfg, int iter) {
  const auto lr = static_cast<Scalar>(poly_learning_rate(cfg, iter));
  const auto momentum = static_cast<Scalar>(cfg.momentum);
  const auto decay = static_cast<Scalar>(cfg.weight_decay);
  for (Parameter<Scalar>* p : params) {
    p->momentum = momentum * p->momentum + p->grad + decay * p->value;
    p->value -= lr * p->momentum;
    p->zero_grad();
  }
}

}  // namespace uda
