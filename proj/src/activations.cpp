#include "actgrad/activations.hpp"

#include <cmath>
#include <string>

namespace actgrad {

std::string_view to_string(Activation kind) {
  switch (kind) {
    case Activation::relu:
      return "relu";
    case Activation::sigmoid:
      return "sigmoid";
    case Activation::tanh:
      return "tanh";
    case Activation::linear:
      return "linear";
  }
  throw ValueError("unknown activation kind " + std::to_string(static_cast<int>(kind)));
}

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::relu;
  if (name == "sigmoid") return Activation::sigmoid;
  if (name == "tanh") return Activation::tanh;
  if (name == "linear") return Activation::linear;
  throw ValueError("unknown activation kind '" + std::string(name) + "'");
}

double fixed_forward(Activation kind, double x) {
  switch (kind) {
    case Activation::relu:
      return x > 0.0 ? x : 0.0;
    case Activation::sigmoid:
      return 1.0 / (1.0 + std::exp(-x));
    case Activation::tanh:
      return std::tanh(x);
    case Activation::linear:
      return x;
  }
  throw ValueError("unknown activation kind " + std::to_string(static_cast<int>(kind)));
}

double fixed_derivative(Activation kind, double x) {
  switch (kind) {
    case Activation::relu:
      return x > 0.0 ? 1.0 : 0.0;
    case Activation::sigmoid: {
      const double s = 1.0 / (1.0 + std::exp(-x));
      return s * (1.0 - s);
    }
    case Activation::tanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
    case Activation::linear:
      return 1.0;
  }
  throw ValueError("unknown activation kind " + std::to_string(static_cast<int>(kind)));
}

// ---------------------------------------------------------------------------
// FourierParams

FourierParams::FourierParams(std::size_t rank) : rank_(rank), values_(packed_size(rank), 0.0) {
  if (rank == 0) throw ValueError("Fourier rank must be positive");
}

FourierParams FourierParams::initial(std::mt19937_64& rng, std::size_t rank) {
  FourierParams p(rank);
  std::normal_distribution<double> noise(0.0, 0.01);
  for (auto& v : p.cos_coeffs()) v = noise(rng);
  for (auto& v : p.sin_coeffs()) v = noise(rng);
  p.constant() = 0.0;
  p.omega() = 1.0;
  p.sin_coeffs()[0] = 1.0;
  return p;
}

void FourierParams::validate() const {
  if (rank_ == 0 || values_.size() != packed_size(rank_)) {
    throw ValueError("Fourier parameter set has inconsistent rank");
  }
  for (double v : values_) {
    if (!std::isfinite(v)) throw ValueError("Fourier parameter set contains a non-finite value");
  }
}

void FourierParams::clamp_omega() {
  double& w = omega();
  if (std::abs(w) < kOmegaFloor) w = std::signbit(w) ? -kOmegaFloor : kOmegaFloor;
}

// ---------------------------------------------------------------------------
// LCParams

std::vector<Activation> LCParams::default_candidates() {
  return {Activation::relu, Activation::sigmoid, Activation::tanh, Activation::linear};
}

LCParams::LCParams(std::vector<Activation> candidates)
    : candidates_(std::move(candidates)),
      weights_(candidates_.size(), candidates_.empty() ? 0.0 : 1.0 / static_cast<double>(candidates_.size())) {
  if (candidates_.empty()) throw ValueError("linear-combination activation needs candidates");
}

LCParams::LCParams(std::vector<Activation> candidates, std::vector<double> weights)
    : candidates_(std::move(candidates)), weights_(std::move(weights)) {
  if (candidates_.empty()) throw ValueError("linear-combination activation needs candidates");
  if (candidates_.size() != weights_.size()) {
    throw ValueError("linear-combination activation: " + std::to_string(weights_.size()) +
                     " weights for " + std::to_string(candidates_.size()) + " candidates");
  }
}

namespace {
double weight_sum(std::span<const double> w) {
  double s = 0.0;
  for (double v : w) s += v;
  return s;
}
}  // namespace

double LCParams::denominator() const {
  const double s = weight_sum(weights_);
  if (std::abs(s) >= kDenominatorFloor) return s;
  return s < 0.0 ? -kDenominatorFloor : kDenominatorFloor;
}

bool LCParams::denominator_clamped() const { return std::abs(weight_sum(weights_)) < kDenominatorFloor; }

void LCParams::enforce_denominator_floor() {
  const double s = weight_sum(weights_);
  if (std::abs(s) >= kDenominatorFloor) return;
  const double target = s < 0.0 ? -kDenominatorFloor : kDenominatorFloor;
  const double shift = (target - s) / static_cast<double>(weights_.size());
  for (auto& w : weights_) w += shift;
  // Rounding in the shift can leave the sum a hair inside the band.
  if (std::abs(weight_sum(weights_)) < kDenominatorFloor) weights_[0] += target * 1e-9;
}

void LCParams::validate() const {
  if (candidates_.size() != weights_.size() || candidates_.empty()) {
    throw ValueError("linear-combination activation has inconsistent weights");
  }
  for (double v : weights_) {
    if (!std::isfinite(v)) throw ValueError("linear-combination weights contain a non-finite value");
  }
}

// ---------------------------------------------------------------------------
// kernels

namespace kernels {

void fourier_forward(const FourierParams& params, std::span<const double> x, std::span<double> out,
                     std::span<double> cos_terms, std::span<double> sin_terms) {
  const std::size_t rank = params.rank();
  const bool caching = !cos_terms.empty();
  const double A = params.constant();
  const double w = params.omega();
  const auto a = params.cos_coeffs();
  const auto b = params.sin_coeffs();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double theta = w * x[i];
    const double c1 = std::cos(theta);
    const double s1 = std::sin(theta);
    double cn = c1, sn = s1;
    double acc = A;
    for (std::size_t n = 0; n < rank; ++n) {
      acc += a[n] * cn + b[n] * sn;
      if (caching) {
        cos_terms[i * rank + n] = cn;
        sin_terms[i * rank + n] = sn;
      }
      // cos((n+1)t), sin((n+1)t) by angle addition.
      const double cnext = cn * c1 - sn * s1;
      sn = sn * c1 + cn * s1;
      cn = cnext;
    }
    out[i] = acc;
  }
}

void fourier_backward(const FourierParams& params, std::span<const double> x,
                      std::span<const double> cos_terms, std::span<const double> sin_terms,
                      std::span<const double> upstream, FourierParams& grad,
                      std::span<double> grad_input) {
  const std::size_t rank = params.rank();
  const double w = params.omega();
  const auto a = params.cos_coeffs();
  const auto b = params.sin_coeffs();
  auto ga = grad.cos_coeffs();
  auto gb = grad.sin_coeffs();
  double g_const = 0.0;
  double g_omega = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double g = upstream[i];
    const double* cn = cos_terms.data() + i * rank;
    const double* sn = sin_terms.data() + i * rank;
    // slope = sum_n n (-a_n sin(n w x) + b_n cos(n w x)); d/dx = w * slope, d/dw = x * slope.
    double slope = 0.0;
    for (std::size_t n = 0; n < rank; ++n) {
      ga[n] += g * cn[n];
      gb[n] += g * sn[n];
      slope += static_cast<double>(n + 1) * (b[n] * cn[n] - a[n] * sn[n]);
    }
    g_const += g;
    g_omega += g * x[i] * slope;
    grad_input[i] = g * w * slope;
  }
  grad.constant() += g_const;
  grad.omega() += g_omega;
}

void lc_forward(const LCParams& params, std::span<const double> x, std::span<double> out,
                std::span<double> candidate_outputs) {
  const auto& cands = params.candidates();
  const auto w = params.weights();
  const std::size_t m = cands.size();
  const double denom = params.denominator();
  const bool caching = !candidate_outputs.empty();
  for (std::size_t i = 0; i < x.size(); ++i) {
    double num = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      const double v = fixed_forward(cands[k], x[i]);
      if (caching) candidate_outputs[i * m + k] = v;
      num += w[k] * v;
    }
    out[i] = num / denom;
  }
}

void lc_backward(const LCParams& params, std::span<const double> x,
                 std::span<const double> candidate_outputs, std::span<const double> out,
                 std::span<const double> upstream, std::span<double> grad_weights,
                 std::span<double> grad_input) {
  const auto& cands = params.candidates();
  const auto w = params.weights();
  const std::size_t m = cands.size();
  const double denom = params.denominator();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double g = upstream[i];
    const double* acts = candidate_outputs.data() + i * m;
    double slope = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      grad_weights[k] += g * (acts[k] - out[i]) / denom;
      double d = 1.0;
      switch (cands[k]) {
        case Activation::relu:
          d = x[i] > 0.0 ? 1.0 : 0.0;
          break;
        case Activation::sigmoid:
          d = acts[k] * (1.0 - acts[k]);
          break;
        case Activation::tanh:
          d = 1.0 - acts[k] * acts[k];
          break;
        case Activation::linear:
          d = 1.0;
          break;
      }
      slope += w[k] * d;
    }
    grad_input[i] = g * slope / denom;
  }
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// tensor-level API

Tensor fourier_forward(const FourierParams& params, const Tensor& x, FourierCache* cache) {
  params.validate();
  Tensor out(x.shape());
  if (cache) {
    cache->rank = params.rank();
    cache->input = x;
    cache->cos_terms.assign(x.size() * params.rank(), 0.0);
    cache->sin_terms.assign(x.size() * params.rank(), 0.0);
    kernels::fourier_forward(params, x.values(), out.values(), cache->cos_terms, cache->sin_terms);
    cache->ready = true;
  } else {
    kernels::fourier_forward(params, x.values(), out.values(), {}, {});
  }
  return out;
}

FourierBackward fourier_backward(const FourierParams& params, const FourierCache& cache,
                                 const Tensor& upstream) {
  if (!cache.ready) throw StateError("fourier_backward called before fourier_forward");
  if (cache.rank != params.rank()) {
    throw StateError("fourier_backward: cache was produced with a different rank");
  }
  if (upstream.shape() != cache.input.shape()) {
    throw ShapeError("fourier_backward: upstream gradient shape mismatch", upstream.shape(),
                     cache.input.shape());
  }
  FourierBackward result{FourierParams(params.rank()), Tensor(upstream.shape())};
  kernels::fourier_backward(params, cache.input.values(), cache.cos_terms, cache.sin_terms,
                            upstream.values(), result.params, result.input.values());
  return result;
}

Tensor lc_forward(const LCParams& params, const Tensor& x, LCCache* cache) {
  params.validate();
  Tensor out(x.shape());
  if (cache) {
    cache->input = x;
    cache->candidate_outputs.assign(x.size() * params.size(), 0.0);
    kernels::lc_forward(params, x.values(), out.values(), cache->candidate_outputs);
    cache->output = out;
    cache->denominator = params.denominator();
    cache->ready = true;
  } else {
    kernels::lc_forward(params, x.values(), out.values(), {});
  }
  return out;
}

LCBackward lc_backward(const LCParams& params, const LCCache& cache, const Tensor& upstream) {
  if (!cache.ready) throw StateError("lc_backward called before lc_forward");
  if (upstream.shape() != cache.input.shape()) {
    throw ShapeError("lc_backward: upstream gradient shape mismatch", upstream.shape(),
                     cache.input.shape());
  }
  if (cache.candidate_outputs.size() != cache.input.size() * params.size()) {
    throw StateError("lc_backward: cache was produced with a different candidate set");
  }
  LCBackward result{std::vector<double>(params.size(), 0.0), Tensor(upstream.shape())};
  kernels::lc_backward(params, cache.input.values(), cache.candidate_outputs, cache.output.values(),
                       upstream.values(), result.weights, result.input.values());
  return result;
}

}  // namespace actgrad
