#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "actgrad/activations.hpp"
#include "actgrad/tensor.hpp"

namespace actgrad {

enum class ModelSize { small, middle, large };

/// Network-level activation choice. relu/fourier/lc form the experiment
/// matrix; sigmoid/tanh/linear exist so that one-hot LC networks can be
/// compared against their plain counterparts.
enum class ActivationType { relu, sigmoid, tanh, linear, fourier, lc };

std::string_view to_string(ModelSize size);
std::string_view to_string(ActivationType type);
ModelSize parse_model_size(std::string_view name);
ActivationType parse_activation_type(std::string_view name);

struct ModelConfig {
  ModelSize size = ModelSize::small;
  ActivationType activation = ActivationType::relu;
  std::array<std::size_t, 3> conv_filters{16, 32, 32};
  std::size_t dense_width = 256;
  std::size_t input_channels = 3;
  std::size_t input_size = 32;
  std::size_t num_classes = 10;
  std::size_t fourier_rank = kFourierRank;
  /// One activation parameter set per channel instead of per layer.
  bool per_channel_activation = false;
  std::uint64_t seed = 0;

  /// Filter counts: small (16,32,32), middle (32,64,64), large (48,96,96).
  static std::array<std::size_t, 3> filters_for(ModelSize size);
  static ModelConfig standard(ModelSize size, ActivationType activation, std::uint64_t seed);

  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

struct ConvLayer {
  Tensor weight;  // (C_out, C_in, 3, 3)
  Tensor bias;    // (C_out)
};

struct DenseLayer {
  Tensor weight;  // (out, in)
  Tensor bias;    // (out)
};

struct ActivationLayer {
  ActivationType type = ActivationType::relu;
  /// Exactly one of these is populated for trainable types; size is the group count.
  std::vector<FourierParams> fourier;
  std::vector<LCParams> lc;

  bool trainable() const noexcept {
    return type == ActivationType::fourier || type == ActivationType::lc;
  }
  std::size_t groups() const noexcept {
    return type == ActivationType::fourier ? fourier.size()
           : type == ActivationType::lc    ? lc.size()
                                           : 0;
  }
};

struct PoolLayer {};
struct FlattenLayer {};

using Layer = std::variant<ConvLayer, ActivationLayer, PoolLayer, FlattenLayer, DenseLayer>;

/// Mutable view of one parameter tensor (or one activation parameter set).
struct ParamRef {
  std::string name;
  Shape shape;
  std::span<double> values;
};

struct ConstParamRef {
  std::string name;
  Shape shape;
  std::span<const double> values;
};

/// One tensor per entry of Network::parameters(), in the same order.
using Gradients = std::vector<Tensor>;

/// Per-layer state saved by a caching forward pass.
struct LayerCache {
  Tensor input;
  std::vector<double> cos_terms;
  std::vector<double> sin_terms;
  std::vector<double> candidate_outputs;
  Tensor output;
  std::vector<std::size_t> argmax;
};

struct ForwardCache {
  bool ready = false;
  std::uint64_t network_id = 0;
  std::uint64_t network_version = 0;
  std::vector<LayerCache> layers;
  Tensor logits;
};

class Network {
 public:
  explicit Network(const ModelConfig& config);

  Network(const Network& other);
  Network& operator=(const Network& other);
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  const ModelConfig& config() const noexcept { return config_; }

  /// Mutable access invalidates outstanding forward caches.
  std::vector<Layer>& layers();
  const std::vector<Layer>& layers() const noexcept { return layers_; }

  /// Mutable access invalidates outstanding forward caches.
  std::vector<ParamRef> parameters();
  std::vector<ConstParamRef> parameters() const;
  std::size_t parameter_count() const;

  Gradients zero_gradients() const;

  std::vector<double> flatten() const;
  void unflatten(std::span<const double> flat);

  /// |omega| floor for Fourier sets, denominator floor for LC sets.
  void enforce_constraints();

  std::uint64_t id() const noexcept { return id_; }
  std::uint64_t version() const noexcept { return version_; }
  void touch() noexcept { ++version_; }

  bool operator==(const Network& other) const;

 private:
  ModelConfig config_;
  std::vector<Layer> layers_;
  std::uint64_t id_;
  std::uint64_t version_ = 0;
};

/// conv3x3 -> act -> pool, three times, then flatten -> dense -> act -> dense.
/// Weights are He-uniform from config.seed, biases zero.
Network build_model(const ModelConfig& config);

Tensor forward_logits(const Network& net, const Tensor& batch, ForwardCache* cache = nullptr);

/// Softmax probabilities (B, classes).
Tensor forward(const Network& net, const Tensor& batch, ForwardCache* cache = nullptr);

Tensor softmax_rows(const Tensor& logits);

inline constexpr double kLogEpsilon = 1e-12;

struct LossAndGrad {
  double loss = 0.0;
  Tensor dlogits;
};

/// Mean cross-entropy over the batch and its gradient w.r.t. the logits.
LossAndGrad loss_and_grad(const Tensor& probs, const Tensor& labels);

Gradients backward(const Network& net, const ForwardCache& cache, const Tensor& dlogits);

/// Fraction of rows whose argmax matches the label argmax; ties go to the lowest class.
double accuracy(const Tensor& probs, const Tensor& labels);

std::size_t argmax_row(const Tensor& matrix, std::size_t row);

// Layer-level passes over batched tensors, exposed for layerwise pretraining.

Tensor conv_forward(const ConvLayer& layer, const Tensor& x, LayerCache* cache);
/// Accumulates into grad_weight / grad_bias. Returns the input gradient when requested.
Tensor conv_backward(const ConvLayer& layer, const LayerCache& cache, const Tensor& upstream,
                     Tensor& grad_weight, Tensor& grad_bias, bool want_input_grad);

Tensor dense_forward(const DenseLayer& layer, const Tensor& x, LayerCache* cache);
/// Accumulates into grad_weight / grad_bias and returns the input gradient.
Tensor dense_backward(const DenseLayer& layer, const LayerCache& cache, const Tensor& upstream,
                      Tensor& grad_weight, Tensor& grad_bias);

Tensor activation_forward(const ActivationLayer& layer, const Tensor& x, LayerCache* cache);
/// grads holds one packed tensor per parameter group; accumulated into.
Tensor activation_backward(const ActivationLayer& layer, const LayerCache& cache,
                           const Tensor& upstream, std::span<Tensor> grads);

Tensor pool_forward(const Tensor& x, LayerCache* cache);
Tensor pool_backward(const LayerCache& cache, const Tensor& upstream);

/// Smallest distance of any ReLU input to 0 and of any pooling window's
/// runner-up to its maximum. Finite-difference checks need this to be
/// comfortably larger than the probe step.
double kink_margin(const Network& net, const ForwardCache& cache);

}  // namespace actgrad
