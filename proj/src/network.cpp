#include "actgrad/network.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <functional>
#include <atomic>
#include <cmath>
#include <limits>
#include <random>
#include <string>

namespace actgrad {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

Eigen::Index idx(std::size_t v) { return static_cast<Eigen::Index>(v); }

std::uint64_t next_network_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1);
}

Tensor he_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

ActivationLayer make_activation(const ModelConfig& cfg, std::size_t channels, std::mt19937_64& rng) {
  ActivationLayer layer;
  layer.type = cfg.activation;
  const std::size_t groups = cfg.per_channel_activation ? channels : 1;
  if (cfg.activation == ActivationType::fourier) {
    for (std::size_t g = 0; g < groups; ++g) {
      layer.fourier.push_back(FourierParams::initial(rng, cfg.fourier_rank));
    }
  } else if (cfg.activation == ActivationType::lc) {
    layer.lc.assign(groups, LCParams());
  }
  return layer;
}

Activation fixed_kind(ActivationType type) {
  switch (type) {
    case ActivationType::relu:
      return Activation::relu;
    case ActivationType::sigmoid:
      return Activation::sigmoid;
    case ActivationType::tanh:
      return Activation::tanh;
    case ActivationType::linear:
      return Activation::linear;
    default:
      throw ValueError("activation type " + std::string(to_string(type)) + " is not a fixed kind");
  }
}

// Calls fn(name, shape, span) for every parameter in a stable order.
template <class Layers, class Fn>
void visit_parameters(Layers& layers, Fn&& fn) {
  std::size_t conv = 0, dense = 0, act = 0;
  for (auto& layer : layers) {
    if (auto* c = std::get_if<ConvLayer>(&layer)) {
      ++conv;
      const std::string base = "conv" + std::to_string(conv);
      fn(base + ".weight", c->weight.shape(), c->weight.values());
      fn(base + ".bias", c->bias.shape(), c->bias.values());
    } else if (auto* d = std::get_if<DenseLayer>(&layer)) {
      ++dense;
      const std::string base = "dense" + std::to_string(dense);
      fn(base + ".weight", d->weight.shape(), d->weight.values());
      fn(base + ".bias", d->bias.shape(), d->bias.values());
    } else if (auto* a = std::get_if<ActivationLayer>(&layer)) {
      ++act;
      const std::string base = "act" + std::to_string(act);
      const bool grouped = a->groups() > 1;
      for (std::size_t g = 0; g < a->fourier.size(); ++g) {
        auto packed = a->fourier[g].packed();
        fn(base + ".fourier" + (grouped ? "[" + std::to_string(g) + "]" : ""), Shape{packed.size()},
           packed);
      }
      for (std::size_t g = 0; g < a->lc.size(); ++g) {
        auto w = a->lc[g].weights();
        fn(base + ".lc" + (grouped ? "[" + std::to_string(g) + "]" : ""), Shape{w.size()}, w);
      }
    }
  }
}

std::size_t parameter_tensor_count(const Layer& layer) {
  if (std::holds_alternative<ConvLayer>(layer) || std::holds_alternative<DenseLayer>(layer)) return 2;
  if (auto* a = std::get_if<ActivationLayer>(&layer)) return a->groups();
  return 0;
}

void require_ready(const Network& net, const ForwardCache& cache) {
  if (!cache.ready) throw StateError("backward called without a forward cache");
  if (cache.network_id != net.id() || cache.network_version != net.version()) {
    throw StateError("forward cache is stale: the network changed after the forward pass");
  }
  if (cache.layers.size() != net.layers().size()) {
    throw StateError("forward cache does not match the network's layer count");
  }
}

// Elements per (batch, channel) chunk and the number of channels.
std::pair<std::size_t, std::size_t> channel_layout(const Tensor& x) {
  const std::size_t channels = x.rank() >= 2 ? x.dim(1) : 1;
  const std::size_t plane = x.size() / (x.dim(0) * channels);
  return {plane, channels};
}

}  // namespace

// ---------------------------------------------------------------------------
// names

std::string_view to_string(ModelSize size) {
  switch (size) {
    case ModelSize::small:
      return "small";
    case ModelSize::middle:
      return "middle";
    case ModelSize::large:
      return "large";
  }
  return "unknown";
}

std::string_view to_string(ActivationType type) {
  switch (type) {
    case ActivationType::relu:
      return "relu";
    case ActivationType::sigmoid:
      return "sigmoid";
    case ActivationType::tanh:
      return "tanh";
    case ActivationType::linear:
      return "linear";
    case ActivationType::fourier:
      return "fourier";
    case ActivationType::lc:
      return "lc";
  }
  return "unknown";
}

ModelSize parse_model_size(std::string_view name) {
  if (name == "small") return ModelSize::small;
  if (name == "middle") return ModelSize::middle;
  if (name == "large") return ModelSize::large;
  throw ValueError("unknown model size '" + std::string(name) + "'");
}

ActivationType parse_activation_type(std::string_view name) {
  for (auto t : {ActivationType::relu, ActivationType::sigmoid, ActivationType::tanh,
                 ActivationType::linear, ActivationType::fourier, ActivationType::lc}) {
    if (name == to_string(t)) return t;
  }
  throw ValueError("unknown activation type '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// ModelConfig

std::array<std::size_t, 3> ModelConfig::filters_for(ModelSize size) {
  switch (size) {
    case ModelSize::small:
      return {16, 32, 32};
    case ModelSize::middle:
      return {32, 64, 64};
    case ModelSize::large:
      return {48, 96, 96};
  }
  throw ValueError("unknown model size");
}

ModelConfig ModelConfig::standard(ModelSize size, ActivationType activation, std::uint64_t seed) {
  ModelConfig cfg;
  cfg.size = size;
  cfg.activation = activation;
  cfg.conv_filters = filters_for(size);
  cfg.seed = seed;
  return cfg;
}

void ModelConfig::validate() const {
  for (auto f : conv_filters) {
    if (f == 0) throw ValueError("convolution filter counts must be positive");
  }
  if (dense_width == 0 || input_channels == 0 || num_classes == 0) {
    throw ValueError("model widths must be positive");
  }
  if (input_size < 8 || input_size % 8 != 0) {
    throw ValueError("input size must be a positive multiple of 8 (three 2x2 poolings), got " +
                     std::to_string(input_size));
  }
  if (activation == ActivationType::fourier && fourier_rank == 0) {
    throw ValueError("Fourier rank must be positive");
  }
}

// ---------------------------------------------------------------------------
// Network

Network::Network(const ModelConfig& config) : config_(config), id_(next_network_id()) {
  config_.validate();
  std::mt19937_64 rng(config_.seed);
  std::size_t in_channels = config_.input_channels;
  std::size_t spatial = config_.input_size;
  for (std::size_t i = 0; i < 3; ++i) {
    const std::size_t out = config_.conv_filters[i];
    ConvLayer conv{he_uniform({out, in_channels, 3, 3}, in_channels * 9, rng), Tensor({out})};
    layers_.emplace_back(std::move(conv));
    layers_.emplace_back(make_activation(config_, out, rng));
    layers_.emplace_back(PoolLayer{});
    in_channels = out;
    spatial /= 2;
  }
  layers_.emplace_back(FlattenLayer{});
  const std::size_t flat = in_channels * spatial * spatial;
  layers_.emplace_back(
      DenseLayer{he_uniform({config_.dense_width, flat}, flat, rng), Tensor({config_.dense_width})});
  layers_.emplace_back(make_activation(config_, config_.dense_width, rng));
  layers_.emplace_back(DenseLayer{he_uniform({config_.num_classes, config_.dense_width}, config_.dense_width, rng),
                                  Tensor({config_.num_classes})});
}

Network::Network(const Network& other)
    : config_(other.config_), layers_(other.layers_), id_(next_network_id()), version_(0) {}

Network& Network::operator=(const Network& other) {
  if (this != &other) {
    config_ = other.config_;
    layers_ = other.layers_;
    id_ = next_network_id();
    version_ = 0;
  }
  return *this;
}

std::vector<Layer>& Network::layers() {
  touch();
  return layers_;
}

std::vector<ParamRef> Network::parameters() {
  touch();
  std::vector<ParamRef> refs;
  visit_parameters(layers_, [&](std::string name, const Shape& shape, std::span<double> v) {
    refs.push_back({std::move(name), shape, v});
  });
  return refs;
}

std::vector<ConstParamRef> Network::parameters() const {
  std::vector<ConstParamRef> refs;
  // visit_parameters needs mutable spans; the views handed out are const.
  auto& layers = const_cast<std::vector<Layer>&>(layers_);
  visit_parameters(layers, [&](std::string name, const Shape& shape, std::span<double> v) {
    refs.push_back({std::move(name), shape, std::span<const double>(v)});
  });
  return refs;
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.values.size();
  return n;
}

Gradients Network::zero_gradients() const {
  Gradients grads;
  for (const auto& p : parameters()) grads.emplace_back(p.shape);
  return grads;
}

std::vector<double> Network::flatten() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  for (const auto& p : parameters()) flat.insert(flat.end(), p.values.begin(), p.values.end());
  return flat;
}

void Network::unflatten(std::span<const double> flat) {
  const std::size_t expected = parameter_count();
  if (flat.size() != expected) {
    throw ShapeError("unflatten: expected " + std::to_string(expected) + " values, got " +
                         std::to_string(flat.size()),
                     Shape{expected}, Shape{flat.size()});
  }
  std::size_t offset = 0;
  for (auto& p : parameters()) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), p.values.size(), p.values.begin());
    offset += p.values.size();
  }
}

void Network::enforce_constraints() {
  touch();
  for (auto& layer : layers_) {
    if (auto* a = std::get_if<ActivationLayer>(&layer)) {
      for (auto& f : a->fourier) f.clamp_omega();
      for (auto& l : a->lc) l.enforce_denominator_floor();
    }
  }
}

bool Network::operator==(const Network& other) const {
  if (!(config_ == other.config_)) return false;
  const auto a = parameters();
  const auto b = other.parameters();
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].name != b[i].name || a[i].shape != b[i].shape ||
        !std::equal(a[i].values.begin(), a[i].values.end(), b[i].values.begin())) {
      return false;
    }
  }
  return true;
}

Network build_model(const ModelConfig& config) { return Network(config); }

// ---------------------------------------------------------------------------
// layer passes

Tensor conv_forward(const ConvLayer& layer, const Tensor& x, LayerCache* cache) {
  if (x.rank() != 4 || x.dim(1) != layer.weight.dim(1)) {
    throw ShapeError("conv layer: expected (B," + std::to_string(layer.weight.dim(1)) +
                         ",H,W) input, got " + to_string(x.shape()),
                     x.shape(), layer.weight.shape());
  }
  const std::size_t batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t o = layer.weight.dim(0);
  Tensor out({batch, o, h, w});
  std::vector<double> scratch;
  const std::size_t in_stride = c * h * w, out_stride = o * h * w;
  for (std::size_t b = 0; b < batch; ++b) {
    kernels::conv3x3_forward(x.values().subspan(b * in_stride, in_stride), c, h, w,
                             layer.weight.values(), layer.bias.values(), o,
                             out.values().subspan(b * out_stride, out_stride), scratch);
  }
  if (cache) cache->input = x;
  return out;
}

Tensor conv_backward(const ConvLayer& layer, const LayerCache& cache, const Tensor& upstream,
                     Tensor& grad_weight, Tensor& grad_bias, bool want_input_grad) {
  const Tensor& x = cache.input;
  const std::size_t batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t o = layer.weight.dim(0);
  if (upstream.shape() != Shape{batch, o, h, w}) {
    throw ShapeError("conv layer backward: upstream shape mismatch", upstream.shape(),
                     Shape{batch, o, h, w});
  }
  Tensor grad_input = want_input_grad ? Tensor(x.shape()) : Tensor();
  std::vector<double> scratch;
  const std::size_t in_stride = c * h * w, out_stride = o * h * w;
  for (std::size_t b = 0; b < batch; ++b) {
    kernels::conv3x3_backward(
        x.values().subspan(b * in_stride, in_stride), c, h, w, layer.weight.values(), o,
        upstream.values().subspan(b * out_stride, out_stride),
        want_input_grad ? grad_input.values().subspan(b * in_stride, in_stride) : std::span<double>{},
        grad_weight.values(), grad_bias.values(), scratch);
  }
  return grad_input;
}

Tensor dense_forward(const DenseLayer& layer, const Tensor& x, LayerCache* cache) {
  const std::size_t in = layer.weight.dim(1), out_dim = layer.weight.dim(0);
  if (x.rank() != 2 || x.dim(1) != in) {
    throw ShapeError("dense layer: expected (B," + std::to_string(in) + ") input, got " +
                         to_string(x.shape()),
                     x.shape(), layer.weight.shape());
  }
  const std::size_t batch = x.dim(0);
  Tensor out({batch, out_dim});
  MatrixMap y(out.data(), idx(batch), idx(out_dim));
  y.noalias() = ConstMatrixMap(x.data(), idx(batch), idx(in)) *
                ConstMatrixMap(layer.weight.data(), idx(out_dim), idx(in)).transpose();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t j = 0; j < out_dim; ++j) y(idx(b), idx(j)) += layer.bias[j];
  }
  if (cache) cache->input = x;
  return out;
}

Tensor dense_backward(const DenseLayer& layer, const LayerCache& cache, const Tensor& upstream,
                      Tensor& grad_weight, Tensor& grad_bias) {
  const Tensor& x = cache.input;
  const std::size_t batch = x.dim(0), in = layer.weight.dim(1), out_dim = layer.weight.dim(0);
  ConstMatrixMap dy(upstream.data(), idx(batch), idx(out_dim));
  ConstMatrixMap xin(x.data(), idx(batch), idx(in));
  MatrixMap(grad_weight.data(), idx(out_dim), idx(in)).noalias() += dy.transpose() * xin;
  for (std::size_t j = 0; j < out_dim; ++j) grad_bias[j] += dy.col(idx(j)).sum();
  Tensor grad_input(x.shape());
  MatrixMap(grad_input.data(), idx(batch), idx(in)).noalias() =
      dy * ConstMatrixMap(layer.weight.data(), idx(out_dim), idx(in));
  return grad_input;
}

Tensor activation_forward(const ActivationLayer& layer, const Tensor& x, LayerCache* cache) {
  Tensor out(x.shape());
  auto in = x.values();
  auto dst = out.values();
  switch (layer.type) {
    case ActivationType::fourier: {
      const auto [plane, channels] = channel_layout(x);
      const std::size_t groups = layer.fourier.size();
      const std::size_t rank = layer.fourier.front().rank();
      if (groups != 1 && groups != channels) {
        throw ShapeError("Fourier activation: " + std::to_string(groups) +
                         " parameter groups for " + std::to_string(channels) + " channels");
      }
      if (cache) {
        cache->cos_terms.assign(x.size() * rank, 0.0);
        cache->sin_terms.assign(x.size() * rank, 0.0);
      }
      for (std::size_t chunk = 0; chunk * plane < x.size(); ++chunk) {
        const auto& p = layer.fourier[groups == 1 ? 0 : chunk % channels];
        const std::size_t off = chunk * plane;
        kernels::fourier_forward(
            p, in.subspan(off, plane), dst.subspan(off, plane),
            cache ? std::span<double>(cache->cos_terms).subspan(off * rank, plane * rank) : std::span<double>{},
            cache ? std::span<double>(cache->sin_terms).subspan(off * rank, plane * rank) : std::span<double>{});
      }
      break;
    }
    case ActivationType::lc: {
      const auto [plane, channels] = channel_layout(x);
      const std::size_t groups = layer.lc.size();
      const std::size_t m = layer.lc.front().size();
      if (groups != 1 && groups != channels) {
        throw ShapeError("LC activation: " + std::to_string(groups) + " parameter groups for " +
                         std::to_string(channels) + " channels");
      }
      if (cache) cache->candidate_outputs.assign(x.size() * m, 0.0);
      for (std::size_t chunk = 0; chunk * plane < x.size(); ++chunk) {
        const auto& p = layer.lc[groups == 1 ? 0 : chunk % channels];
        const std::size_t off = chunk * plane;
        kernels::lc_forward(
            p, in.subspan(off, plane), dst.subspan(off, plane),
            cache ? std::span<double>(cache->candidate_outputs).subspan(off * m, plane * m)
                  : std::span<double>{});
      }
      if (cache) cache->output = out;
      break;
    }
    default: {
      const Activation kind = fixed_kind(layer.type);
      for (std::size_t i = 0; i < in.size(); ++i) dst[i] = fixed_forward(kind, in[i]);
      break;
    }
  }
  if (cache) cache->input = x;
  return out;
}

Tensor activation_backward(const ActivationLayer& layer, const LayerCache& cache,
                           const Tensor& upstream, std::span<Tensor> grads) {
  const Tensor& x = cache.input;
  if (upstream.shape() != x.shape()) {
    throw ShapeError("activation backward: upstream shape mismatch", upstream.shape(), x.shape());
  }
  Tensor grad_input(x.shape());
  auto in = x.values();
  auto up = upstream.values();
  auto gin = grad_input.values();
  switch (layer.type) {
    case ActivationType::fourier: {
      const auto [plane, channels] = channel_layout(x);
      const std::size_t groups = layer.fourier.size();
      const std::size_t rank = layer.fourier.front().rank();
      std::vector<FourierParams> acc(groups, FourierParams(rank));
      for (std::size_t chunk = 0; chunk * plane < x.size(); ++chunk) {
        const std::size_t g = groups == 1 ? 0 : chunk % channels;
        const std::size_t off = chunk * plane;
        kernels::fourier_backward(layer.fourier[g], in.subspan(off, plane),
                                  std::span<const double>(cache.cos_terms).subspan(off * rank, plane * rank),
                                  std::span<const double>(cache.sin_terms).subspan(off * rank, plane * rank),
                                  up.subspan(off, plane), acc[g], gin.subspan(off, plane));
      }
      for (std::size_t g = 0; g < groups; ++g) {
        auto dst = grads[g].values();
        auto src = acc[g].packed();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      }
      break;
    }
    case ActivationType::lc: {
      const auto [plane, channels] = channel_layout(x);
      const std::size_t groups = layer.lc.size();
      const std::size_t m = layer.lc.front().size();
      for (std::size_t chunk = 0; chunk * plane < x.size(); ++chunk) {
        const std::size_t g = groups == 1 ? 0 : chunk % channels;
        const std::size_t off = chunk * plane;
        kernels::lc_backward(layer.lc[g], in.subspan(off, plane),
                             std::span<const double>(cache.candidate_outputs).subspan(off * m, plane * m),
                             cache.output.values().subspan(off, plane), up.subspan(off, plane),
                             grads[g].values(), gin.subspan(off, plane));
      }
      break;
    }
    default: {
      const Activation kind = fixed_kind(layer.type);
      for (std::size_t i = 0; i < in.size(); ++i) gin[i] = up[i] * fixed_derivative(kind, in[i]);
      break;
    }
  }
  return grad_input;
}

Tensor pool_forward(const Tensor& x, LayerCache* cache) {
  if (x.rank() != 4) throw ShapeError("pool layer: expected (B,C,H,W), got " + to_string(x.shape()));
  const std::size_t batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("pool layer: height and width must be even, got " + to_string(x.shape()));
  }
  Tensor out({batch, c, h / 2, w / 2});
  std::vector<std::size_t> argmax(out.size());
  const std::size_t in_stride = c * h * w, out_stride = out.size() / batch;
  for (std::size_t b = 0; b < batch; ++b) {
    auto am = std::span<std::size_t>(argmax).subspan(b * out_stride, out_stride);
    kernels::maxpool2_forward(x.values().subspan(b * in_stride, in_stride), c, h, w,
                              out.values().subspan(b * out_stride, out_stride), am);
    for (auto& i : am) i += b * in_stride;
  }
  if (cache) {
    cache->input = x;
    cache->argmax = std::move(argmax);
  }
  return out;
}

Tensor pool_backward(const LayerCache& cache, const Tensor& upstream) {
  return maxpool2_backward(cache.input.shape(), cache.argmax, upstream);
}

// ---------------------------------------------------------------------------
// whole-network passes

Tensor forward_logits(const Network& net, const Tensor& batch, ForwardCache* cache) {
  const auto& cfg = net.config();
  const Shape expected_tail{cfg.input_channels, cfg.input_size, cfg.input_size};
  if (batch.rank() != 4 || Shape(batch.shape().begin() + 1, batch.shape().end()) != expected_tail) {
    throw ShapeError("forward: expected (B," + std::to_string(cfg.input_channels) + "," +
                         std::to_string(cfg.input_size) + "," + std::to_string(cfg.input_size) +
                         ") batch, got " + to_string(batch.shape()),
                     batch.shape(), expected_tail);
  }
  const auto& layers = net.layers();
  if (cache) {
    cache->ready = false;
    cache->layers.assign(layers.size(), LayerCache{});
  }
  Tensor x = batch;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    LayerCache* lc = cache ? &cache->layers[i] : nullptr;
    const auto& layer = layers[i];
    if (auto* c = std::get_if<ConvLayer>(&layer)) {
      x = conv_forward(*c, x, lc);
    } else if (auto* a = std::get_if<ActivationLayer>(&layer)) {
      x = activation_forward(*a, x, lc);
    } else if (std::holds_alternative<PoolLayer>(layer)) {
      x = pool_forward(x, lc);
    } else if (std::holds_alternative<FlattenLayer>(layer)) {
      if (lc) lc->input = Tensor(x.shape());
      const std::size_t b = x.dim(0);
      x = x.reshaped({b, x.size() / b});
    } else if (auto* d = std::get_if<DenseLayer>(&layer)) {
      x = dense_forward(*d, x, lc);
    }
  }
  if (cache) {
    cache->logits = x;
    cache->network_id = net.id();
    cache->network_version = net.version();
    cache->ready = true;
  }
  return x;
}

Tensor softmax_rows(const Tensor& logits) {
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  Tensor probs(logits.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* z = logits.data() + r * cols;
    double* p = probs.data() + r * cols;
    const double top = *std::max_element(z, z + cols);
    double sum = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      p[c] = std::exp(z[c] - top);
      sum += p[c];
    }
    for (std::size_t c = 0; c < cols; ++c) p[c] /= sum;
  }
  return probs;
}

Tensor forward(const Network& net, const Tensor& batch, ForwardCache* cache) {
  return softmax_rows(forward_logits(net, batch, cache));
}

LossAndGrad loss_and_grad(const Tensor& probs, const Tensor& labels) {
  if (probs.shape() != labels.shape() || probs.rank() != 2) {
    throw ShapeError("loss: probabilities and labels must share a (B,classes) shape", probs.shape(),
                     labels.shape());
  }
  const std::size_t rows = probs.dim(0);
  LossAndGrad out{0.0, Tensor(probs.shape())};
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (labels[i] != 0.0) total -= labels[i] * std::log(probs[i] + kLogEpsilon);
    out.dlogits[i] = (probs[i] - labels[i]) / static_cast<double>(rows);
  }
  out.loss = total / static_cast<double>(rows);
  return out;
}

Gradients backward(const Network& net, const ForwardCache& cache, const Tensor& dlogits) {
  require_ready(net, cache);
  if (dlogits.shape() != cache.logits.shape()) {
    throw ShapeError("backward: dlogits shape mismatch", dlogits.shape(), cache.logits.shape());
  }
  const auto& layers = net.layers();
  Gradients grads = net.zero_gradients();
  std::vector<std::size_t> first_param(layers.size() + 1, 0);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    first_param[i + 1] = first_param[i] + parameter_tensor_count(layers[i]);
  }

  Tensor g = dlogits;
  for (std::size_t i = layers.size(); i-- > 0;) {
    const auto& layer = layers[i];
    const auto& lc = cache.layers[i];
    const std::size_t p = first_param[i];
    if (auto* c = std::get_if<ConvLayer>(&layer)) {
      g = conv_backward(*c, lc, g, grads[p], grads[p + 1], i > 0);
    } else if (auto* a = std::get_if<ActivationLayer>(&layer)) {
      g = activation_backward(*a, lc, g, std::span<Tensor>(grads).subspan(p, a->groups()));
    } else if (std::holds_alternative<PoolLayer>(layer)) {
      g = pool_backward(lc, g);
    } else if (std::holds_alternative<FlattenLayer>(layer)) {
      g = g.reshaped(lc.input.shape());
    } else if (auto* d = std::get_if<DenseLayer>(&layer)) {
      g = dense_backward(*d, lc, g, grads[p], grads[p + 1]);
    }
  }
  return grads;
}

std::size_t argmax_row(const Tensor& matrix, std::size_t row) {
  const std::size_t cols = matrix.dim(1);
  const double* r = matrix.data() + row * cols;
  std::size_t best = 0;
  for (std::size_t c = 1; c < cols; ++c) {
    if (r[c] > r[best]) best = c;
  }
  return best;
}

double accuracy(const Tensor& probs, const Tensor& labels) {
  if (probs.shape() != labels.shape() || probs.rank() != 2) {
    throw ShapeError("accuracy: probabilities and labels must share a (B,classes) shape",
                     probs.shape(), labels.shape());
  }
  std::size_t correct = 0;
  for (std::size_t r = 0; r < probs.dim(0); ++r) {
    if (argmax_row(probs, r) == argmax_row(labels, r)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(probs.dim(0));
}

double kink_margin(const Network& net, const ForwardCache& cache) {
  require_ready(net, cache);
  double margin = std::numeric_limits<double>::infinity();
  const auto& layers = net.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& lc = cache.layers[i];
    if (auto* a = std::get_if<ActivationLayer>(&layers[i])) {
      bool has_relu = a->type == ActivationType::relu;
      for (const auto& p : a->lc) {
        for (auto k : p.candidates()) has_relu = has_relu || k == Activation::relu;
      }
      if (has_relu) {
        for (double v : lc.input.values()) margin = std::min(margin, std::abs(v));
      }
    } else if (std::holds_alternative<PoolLayer>(layers[i])) {
      const auto& x = lc.input;
      const std::size_t h = x.dim(2), w = x.dim(3);
      const std::size_t planes = x.dim(0) * x.dim(1);
      for (std::size_t pl = 0; pl < planes; ++pl) {
        for (std::size_t y = 0; y < h; y += 2) {
          for (std::size_t xx = 0; xx < w; xx += 2) {
            const std::size_t top = (pl * h + y) * w + xx;
            std::array<double, 4> v{x[top], x[top + 1], x[top + w], x[top + w + 1]};
            std::sort(v.begin(), v.end(), std::greater<>());
            // A window of exact zeros comes from dead ReLUs and stays dead
            // under perturbation as long as the ReLU margin holds.
            if (v[0] == 0.0 && v[1] == 0.0) continue;
            margin = std::min(margin, v[0] - v[1]);
          }
        }
      }
    }
  }
  return margin;
}

}  // namespace actgrad
