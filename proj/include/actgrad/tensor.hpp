#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "actgrad/errors.hpp"

namespace actgrad {

std::size_t shape_size(const Shape& shape);

/// Dense row-major array of doubles. The shape is never empty and every
/// dimension is at least 1.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape()); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t i, std::size_t j);
  double at(std::size_t i, std::size_t j) const;
  double& at(std::size_t c, std::size_t y, std::size_t x);
  double at(std::size_t c, std::size_t y, std::size_t x) const;

  /// Same data under a new shape with equal element count.
  Tensor reshaped(Shape shape) const;

  void fill(double value);

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

using BinaryOp = std::function<double(double, double)>;

Tensor elementwise(const BinaryOp& op, const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

/// (m x k) * (k x n).
Tensor matmul(const Tensor& a, const Tensor& b);

/// 3x3, stride 1, zero padding 1. input (C_in,H,W), kernels (C_out,C_in,3,3),
/// bias (C_out) -> (C_out,H,W).
Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias);

struct Conv2dGrads {
  Tensor input;
  Tensor kernels;
  Tensor bias;
};

Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& kernels, const Tensor& upstream);

struct MaxPoolResult {
  Tensor output;
  /// Flat index into the input of each output element's maximum.
  std::vector<std::size_t> argmax;
};

/// Non-overlapping 2x2 max pooling over (C,H,W); ties go to the smallest flat index.
MaxPoolResult maxpool2(const Tensor& input);

Tensor maxpool2_backward(const Shape& input_shape, std::span<const std::size_t> argmax,
                         const Tensor& upstream);

namespace kernels {

// Raw-span primitives shared by the batched layers. All buffers are row-major
// and sized by the caller.

void conv3x3_forward(std::span<const double> input, std::size_t channels, std::size_t height,
                     std::size_t width, std::span<const double> weights, std::span<const double> bias,
                     std::size_t out_channels, std::span<double> output, std::vector<double>& scratch);

/// Accumulates into grad_weights/grad_bias; overwrites grad_input when non-empty.
void conv3x3_backward(std::span<const double> input, std::size_t channels, std::size_t height,
                      std::size_t width, std::span<const double> weights, std::size_t out_channels,
                      std::span<const double> upstream, std::span<double> grad_input,
                      std::span<double> grad_weights, std::span<double> grad_bias,
                      std::vector<double>& scratch);

void maxpool2_forward(std::span<const double> input, std::size_t channels, std::size_t height,
                      std::size_t width, std::span<double> output, std::span<std::size_t> argmax);

}  // namespace kernels

}  // namespace actgrad
