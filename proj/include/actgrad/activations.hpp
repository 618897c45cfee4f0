#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "actgrad/tensor.hpp"

namespace actgrad {

/// The fixed nonlinearities; also the candidate set of the linear-combination activation.
enum class Activation { relu, sigmoid, tanh, linear };

std::string_view to_string(Activation kind);
Activation parse_activation(std::string_view name);

double fixed_forward(Activation kind, double x);
/// d/dx of fixed_forward. ReLU'(0) is 0.
double fixed_derivative(Activation kind, double x);

inline constexpr std::size_t kFourierRank = 5;
inline constexpr double kOmegaFloor = 1e-3;
inline constexpr double kDenominatorFloor = 1e-3;

/// act(x) = A + sum_n a_n cos(n w x) + b_n sin(n w x), n = 1..rank.
///
/// Values are packed as [A, w, a_1..a_rank, b_1..b_rank] so that a parameter
/// set (or its gradient, which has the same layout) can be handed to the
/// optimizer and the checkpoint writer as one flat array.
class FourierParams {
 public:
  explicit FourierParams(std::size_t rank = kFourierRank);

  /// A = 0, w = 1, b_1 = 1, every other coefficient ~ N(0, 0.01^2).
  static FourierParams initial(std::mt19937_64& rng, std::size_t rank = kFourierRank);

  static constexpr std::size_t packed_size(std::size_t rank) { return 2 + 2 * rank; }

  std::size_t rank() const noexcept { return rank_; }

  double& constant() { return values_[0]; }
  double constant() const { return values_[0]; }
  double& omega() { return values_[1]; }
  double omega() const { return values_[1]; }
  std::span<double> cos_coeffs() { return {values_.data() + 2, rank_}; }
  std::span<const double> cos_coeffs() const { return {values_.data() + 2, rank_}; }
  std::span<double> sin_coeffs() { return {values_.data() + 2 + rank_, rank_}; }
  std::span<const double> sin_coeffs() const { return {values_.data() + 2 + rank_, rank_}; }

  std::span<double> packed() { return values_; }
  std::span<const double> packed() const { return values_; }

  /// Throws ValueError on a zero rank or a non-finite value.
  void validate() const;

  /// Keeps |w| >= kOmegaFloor (sign preserved, 0 maps to +floor).
  void clamp_omega();

  bool operator==(const FourierParams&) const = default;

 private:
  std::size_t rank_;
  std::vector<double> values_;
};

/// act(x) = sum_i w_i act_i(x) / D with D = sum_i w_i, guarded away from zero.
class LCParams {
 public:
  /// Uniform weights 1/M, so D starts at 1.
  explicit LCParams(std::vector<Activation> candidates = default_candidates());
  LCParams(std::vector<Activation> candidates, std::vector<double> weights);

  static std::vector<Activation> default_candidates();

  const std::vector<Activation>& candidates() const noexcept { return candidates_; }
  std::span<double> weights() { return weights_; }
  std::span<const double> weights() const { return weights_; }
  std::size_t size() const noexcept { return weights_.size(); }

  /// sum(w) when |sum(w)| >= kDenominatorFloor, else kDenominatorFloor * sign(sum(w)), sign(0) = +1.
  double denominator() const;
  /// True when the raw weight sum lies inside the guard band.
  bool denominator_clamped() const;

  /// Shifts every weight equally so that |sum(w)| >= kDenominatorFloor afterwards.
  void enforce_denominator_floor();

  void validate() const;

  bool operator==(const LCParams&) const = default;

 private:
  std::vector<Activation> candidates_;
  std::vector<double> weights_;
};

struct FourierCache {
  bool ready = false;
  std::size_t rank = 0;
  Tensor input;
  /// cos(n w x) and sin(n w x), laid out [element][n-1].
  std::vector<double> cos_terms;
  std::vector<double> sin_terms;
};

struct FourierBackward {
  FourierParams params;
  Tensor input;
};

Tensor fourier_forward(const FourierParams& params, const Tensor& x, FourierCache* cache = nullptr);

/// Parameter gradients are summed over every element of the cached input.
FourierBackward fourier_backward(const FourierParams& params, const FourierCache& cache,
                                 const Tensor& upstream);

struct LCCache {
  bool ready = false;
  Tensor input;
  /// act_i(x), laid out [element][candidate].
  std::vector<double> candidate_outputs;
  Tensor output;
  double denominator = 1.0;
};

struct LCBackward {
  std::vector<double> weights;
  Tensor input;
};

Tensor lc_forward(const LCParams& params, const Tensor& x, LCCache* cache = nullptr);
LCBackward lc_backward(const LCParams& params, const LCCache& cache, const Tensor& upstream);

namespace kernels {

// Chunked forms used by the activation layers, where one tensor may be split
// across several parameter sets (per-channel sharing). The cache spans may be
// empty for inference-only calls.

void fourier_forward(const FourierParams& params, std::span<const double> x, std::span<double> out,
                     std::span<double> cos_terms, std::span<double> sin_terms);

/// Accumulates into grad; overwrites grad_input.
void fourier_backward(const FourierParams& params, std::span<const double> x,
                      std::span<const double> cos_terms, std::span<const double> sin_terms,
                      std::span<const double> upstream, FourierParams& grad,
                      std::span<double> grad_input);

void lc_forward(const LCParams& params, std::span<const double> x, std::span<double> out,
                std::span<double> candidate_outputs);

/// Accumulates into grad_weights; overwrites grad_input.
void lc_backward(const LCParams& params, std::span<const double> x,
                 std::span<const double> candidate_outputs, std::span<const double> out,
                 std::span<const double> upstream, std::span<double> grad_weights,
                 std::span<double> grad_input);

}  // namespace kernels

}  // namespace actgrad
