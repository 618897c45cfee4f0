#include "actgrad/tensor.hpp"

#include <Eigen/Core>

#include <numeric>
#include <sstream>
#include <utility>

namespace actgrad {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

void require_valid_shape(const Shape& shape) {
  if (shape.empty()) {
    throw ShapeError("tensor shape must have at least one dimension");
  }
  for (auto d : shape) {
    if (d == 0) {
      throw ShapeError("tensor dimensions must be positive, got " + to_string(shape));
    }
  }
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()),
                     a.shape(), b.shape());
  }
}

// cols is (channels*9, height*width).
void im2col3x3(std::span<const double> input, std::size_t channels, std::size_t height,
               std::size_t width, double* cols) {
  const std::size_t plane = height * width;
  for (std::size_t c = 0; c < channels; ++c) {
    const double* src = input.data() + c * plane;
    for (std::size_t dy = 0; dy < 3; ++dy) {
      for (std::size_t dx = 0; dx < 3; ++dx) {
        double* row = cols + ((c * 3 + dy) * 3 + dx) * plane;
        for (std::size_t y = 0; y < height; ++y) {
          const auto sy = static_cast<std::ptrdiff_t>(y + dy) - 1;
          double* dst = row + y * width;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(height)) {
            std::fill(dst, dst + width, 0.0);
            continue;
          }
          const double* line = src + static_cast<std::size_t>(sy) * width;
          for (std::size_t x = 0; x < width; ++x) {
            const auto sx = static_cast<std::ptrdiff_t>(x + dx) - 1;
            dst[x] = (sx < 0 || sx >= static_cast<std::ptrdiff_t>(width))
                         ? 0.0
                         : line[static_cast<std::size_t>(sx)];
          }
        }
      }
    }
  }
}

void col2im3x3(const double* cols, std::size_t channels, std::size_t height, std::size_t width,
               std::span<double> output) {
  const std::size_t plane = height * width;
  std::fill(output.begin(), output.end(), 0.0);
  for (std::size_t c = 0; c < channels; ++c) {
    double* dst = output.data() + c * plane;
    for (std::size_t dy = 0; dy < 3; ++dy) {
      for (std::size_t dx = 0; dx < 3; ++dx) {
        const double* row = cols + ((c * 3 + dy) * 3 + dx) * plane;
        for (std::size_t y = 0; y < height; ++y) {
          const auto sy = static_cast<std::ptrdiff_t>(y + dy) - 1;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(height)) continue;
          double* line = dst + static_cast<std::size_t>(sy) * width;
          const double* src = row + y * width;
          for (std::size_t x = 0; x < width; ++x) {
            const auto sx = static_cast<std::ptrdiff_t>(x + dx) - 1;
            if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(width)) continue;
            line[static_cast<std::size_t>(sx)] += src[x];
          }
        }
      }
    }
  }
}

}  // namespace

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ')';
  return out.str();
}

ShapeError::ShapeError(const std::string& what, const Shape& lhs, const Shape& rhs)
    : std::invalid_argument(what), lhs_(lhs), rhs_(rhs) {}

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor() : shape_{1}, data_(1, 0.0) {}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  require_valid_shape(shape_);
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  require_valid_shape(shape_);
  if (data_.size() != shape_size(shape_)) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + to_string(shape_));
  }
}

double& Tensor::at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
double Tensor::at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

double& Tensor::at(std::size_t c, std::size_t y, std::size_t x) {
  return data_[(c * shape_[1] + y) * shape_[2] + x];
}
double Tensor::at(std::size_t c, std::size_t y, std::size_t x) const {
  return data_[(c * shape_[1] + y) * shape_[2] + x];
}

Tensor Tensor::reshaped(Shape shape) const {
  require_valid_shape(shape);
  if (shape_size(shape) != data_.size()) {
    throw ShapeError("reshape: element count differs " + to_string(shape_) + " -> " +
                         to_string(shape),
                     shape_, shape);
  }
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

Tensor elementwise(const BinaryOp& op, const Tensor& a, const Tensor& b) {
  require_same_shape("elementwise", a, b);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = op(a[i], b[i]);
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(std::plus<>(), a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(std::minus<>(), a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(std::multiplies<>(), a, b); }

Tensor scale(const Tensor& a, double factor) {
  Tensor out = a;
  for (auto& v : out.values()) v *= factor;
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeError("matmul: operands must be rank 2, got " + to_string(a.shape()) + " and " +
                         to_string(b.shape()),
                     a.shape(), b.shape());
  }
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: inner dimensions differ " + to_string(a.shape()) + " x " +
                         to_string(b.shape()),
                     a.shape(), b.shape());
  }
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  MatrixMap(out.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n)).noalias() =
      ConstMatrixMap(a.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k)) *
      ConstMatrixMap(b.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
  return out;
}

namespace kernels {

void conv3x3_forward(std::span<const double> input, std::size_t channels, std::size_t height,
                     std::size_t width, std::span<const double> weights, std::span<const double> bias,
                     std::size_t out_channels, std::span<double> output, std::vector<double>& scratch) {
  const std::size_t plane = height * width;
  const std::size_t patch = channels * 9;
  scratch.resize(patch * plane);
  im2col3x3(input, channels, height, width, scratch.data());

  const auto rows = static_cast<Eigen::Index>(out_channels);
  const auto cols = static_cast<Eigen::Index>(plane);
  MatrixMap out(output.data(), rows, cols);
  out.noalias() = ConstMatrixMap(weights.data(), rows, static_cast<Eigen::Index>(patch)) *
                  ConstMatrixMap(scratch.data(), static_cast<Eigen::Index>(patch), cols);
  for (std::size_t o = 0; o < out_channels; ++o) {
    out.row(static_cast<Eigen::Index>(o)).array() += bias[o];
  }
}

void conv3x3_backward(std::span<const double> input, std::size_t channels, std::size_t height,
                      std::size_t width, std::span<const double> weights, std::size_t out_channels,
                      std::span<const double> upstream, std::span<double> grad_input,
                      std::span<double> grad_weights, std::span<double> grad_bias,
                      std::vector<double>& scratch) {
  const std::size_t plane = height * width;
  const std::size_t patch = channels * 9;
  scratch.resize(2 * patch * plane);
  double* cols = scratch.data();
  double* dcols = scratch.data() + patch * plane;
  im2col3x3(input, channels, height, width, cols);

  const auto rows = static_cast<Eigen::Index>(out_channels);
  const auto n = static_cast<Eigen::Index>(plane);
  const auto k = static_cast<Eigen::Index>(patch);
  ConstMatrixMap dout(upstream.data(), rows, n);

  MatrixMap(grad_weights.data(), rows, k).noalias() += dout * ConstMatrixMap(cols, k, n).transpose();
  for (std::size_t o = 0; o < out_channels; ++o) {
    grad_bias[o] += dout.row(static_cast<Eigen::Index>(o)).sum();
  }
  if (!grad_input.empty()) {
    MatrixMap(dcols, k, n).noalias() = ConstMatrixMap(weights.data(), rows, k).transpose() * dout;
    col2im3x3(dcols, channels, height, width, grad_input);
  }
}

void maxpool2_forward(std::span<const double> input, std::size_t channels, std::size_t height,
                      std::size_t width, std::span<double> output, std::span<std::size_t> argmax) {
  const std::size_t oh = height / 2, ow = width / 2;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        const std::size_t top = (c * height + 2 * y) * width + 2 * x;
        // Row-major scan; strict '>' keeps the smallest index on ties.
        const std::size_t window[4] = {top, top + 1, top + width, top + width + 1};
        std::size_t best = window[0];
        for (std::size_t i = 1; i < 4; ++i) {
          if (input[window[i]] > input[best]) best = window[i];
        }
        const std::size_t o = (c * oh + y) * ow + x;
        output[o] = input[best];
        argmax[o] = best;
      }
    }
  }
}

}  // namespace kernels

Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias) {
  if (input.rank() != 3) {
    throw ShapeError("conv2d: input must be (C,H,W), got " + to_string(input.shape()));
  }
  if (kernels.rank() != 4 || kernels.dim(2) != 3 || kernels.dim(3) != 3) {
    throw ShapeError("conv2d: kernels must be (C_out,C_in,3,3), got " + to_string(kernels.shape()));
  }
  if (kernels.dim(1) != input.dim(0)) {
    throw ShapeError("conv2d: channel mismatch, input " + to_string(input.shape()) + " vs kernels " +
                         to_string(kernels.shape()),
                     input.shape(), kernels.shape());
  }
  if (bias.size() != kernels.dim(0)) {
    throw ShapeError("conv2d: bias length must equal output channels, bias " +
                         to_string(bias.shape()) + " vs kernels " + to_string(kernels.shape()),
                     bias.shape(), kernels.shape());
  }
  const auto c = input.dim(0), h = input.dim(1), w = input.dim(2), o = kernels.dim(0);
  Tensor out({o, h, w});
  std::vector<double> scratch;
  kernels::conv3x3_forward(input.values(), c, h, w, kernels.values(), bias.values(), o, out.values(),
                           scratch);
  return out;
}

Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& kernels, const Tensor& upstream) {
  const auto c = input.dim(0), h = input.dim(1), w = input.dim(2), o = kernels.dim(0);
  if (upstream.shape() != Shape{o, h, w}) {
    throw ShapeError("conv2d_backward: upstream gradient shape mismatch", upstream.shape(),
                     Shape{o, h, w});
  }
  Conv2dGrads grads{Tensor(input.shape()), Tensor(kernels.shape()), Tensor({o})};
  std::vector<double> scratch;
  kernels::conv3x3_backward(input.values(), c, h, w, kernels.values(), o, upstream.values(),
                            grads.input.values(), grads.kernels.values(), grads.bias.values(),
                            scratch);
  return grads;
}

MaxPoolResult maxpool2(const Tensor& input) {
  if (input.rank() != 3) {
    throw ShapeError("maxpool2: input must be (C,H,W), got " + to_string(input.shape()));
  }
  const auto c = input.dim(0), h = input.dim(1), w = input.dim(2);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("maxpool2: height and width must be even, got " + to_string(input.shape()));
  }
  MaxPoolResult result{Tensor({c, h / 2, w / 2}), {}};
  result.argmax.resize(result.output.size());
  kernels::maxpool2_forward(input.values(), c, h, w, result.output.values(), result.argmax);
  return result;
}

Tensor maxpool2_backward(const Shape& input_shape, std::span<const std::size_t> argmax,
                         const Tensor& upstream) {
  if (argmax.size() != upstream.size()) {
    throw ShapeError("maxpool2_backward: argmax count differs from upstream size");
  }
  Tensor grad(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) grad[argmax[i]] += upstream[i];
  return grad;
}

}  // namespace actgrad
