#include "actgrad/autoencoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "actgrad/optim.hpp"

namespace actgrad {

namespace {

ConvLayer make_decoder(std::size_t from_channels, std::size_t to_channels, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor weight({to_channels, from_channels, 3, 3});
  const double limit = std::sqrt(6.0 / static_cast<double>(from_channels * 9));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (auto& v : weight.values()) v = dist(rng);
  return ConvLayer{std::move(weight), Tensor({to_channels})};
}

std::vector<ParamRef> collect_params(ConvLayer& encoder, ActivationLayer& activation, ConvLayer& decoder) {
  std::vector<ParamRef> refs;
  refs.push_back({"encoder.weight", encoder.weight.shape(), encoder.weight.values()});
  refs.push_back({"encoder.bias", encoder.bias.shape(), encoder.bias.values()});
  for (auto& f : activation.fourier) refs.push_back({"act.fourier", Shape{f.packed().size()}, f.packed()});
  for (auto& l : activation.lc) refs.push_back({"act.lc", Shape{l.weights().size()}, l.weights()});
  refs.push_back({"decoder.weight", decoder.weight.shape(), decoder.weight.values()});
  refs.push_back({"decoder.bias", decoder.bias.shape(), decoder.bias.values()});
  return refs;
}

Tensor reconstruct(const ConvLayer& encoder, const ActivationLayer& activation, const ConvLayer& decoder,
                   const Tensor& x) {
  return conv_forward(decoder, activation_forward(activation, conv_forward(encoder, x, nullptr), nullptr),
                      nullptr);
}

double squared_error(const Tensor& a, const Tensor& b) {
  double sq = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sq += d * d;
  }
  return sq;
}

}  // namespace

double reconstruction_mse(const ConvLayer& encoder, const ActivationLayer& activation,
                          const ConvLayer& decoder, const Tensor& inputs) {
  const Tensor r = reconstruct(encoder, activation, decoder, inputs);
  return squared_error(r, inputs) / static_cast<double>(inputs.size());
}

std::vector<double> pretrain_layer(ConvLayer& encoder, ActivationLayer& activation,
                                   std::size_t sample_count, const InputProvider& inputs,
                                   const AePretrainConfig& cfg) {
  if (cfg.epochs_per_layer == 0 || sample_count == 0) return {};
  if (cfg.batch_size < 1) throw ValueError("pretraining batch size must be at least 1");

  ConvLayer decoder = make_decoder(encoder.weight.dim(0), encoder.weight.dim(1), cfg.seed);
  const auto params = collect_params(encoder, activation, decoder);
  RmspropState state;
  std::vector<double> history;

  for (std::size_t epoch = 1; epoch <= cfg.epochs_per_layer; ++epoch) {
    const auto order = epoch_permutation(sample_count, cfg.seed, static_cast<int>(epoch));
    for (std::size_t start = 0; start < sample_count; start += cfg.batch_size) {
      const std::size_t end = std::min(sample_count, start + cfg.batch_size);
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(end));
      const Tensor x = inputs(idx);

      LayerCache enc_cache, act_cache, dec_cache;
      const Tensor h = conv_forward(encoder, x, &enc_cache);
      const Tensor a = activation_forward(activation, h, &act_cache);
      const Tensor r = conv_forward(decoder, a, &dec_cache);

      Tensor dr(r.shape());
      const double norm = 2.0 / static_cast<double>(r.size());
      for (std::size_t i = 0; i < r.size(); ++i) dr[i] = norm * (r[i] - x[i]);

      Gradients grads;
      for (const auto& p : params) grads.emplace_back(p.shape);
      const std::size_t act_groups = activation.groups();
      const std::size_t dec = 2 + act_groups;
      const Tensor da = conv_backward(decoder, dec_cache, dr, grads[dec], grads[dec + 1], true);
      const Tensor dh = activation_backward(activation, act_cache, da,
                                            std::span<Tensor>(grads).subspan(2, act_groups));
      conv_backward(encoder, enc_cache, dh, grads[0], grads[1], false);

      rmsprop_step(state, std::span<const ParamRef>(params), grads, cfg.lr);
      for (auto& f : activation.fourier) f.clamp_omega();
      for (auto& l : activation.lc) l.enforce_denominator_floor();
    }

    double sq = 0.0;
    std::size_t count = 0;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < sample_count; start += cfg.batch_size) {
      const std::size_t end = std::min(sample_count, start + cfg.batch_size);
      idx.resize(end - start);
      std::iota(idx.begin(), idx.end(), start);
      const Tensor x = inputs(idx);
      sq += squared_error(reconstruct(encoder, activation, decoder, x), x);
      count += x.size();
    }
    history.push_back(sq / static_cast<double>(count));
  }
  return history;
}

std::vector<double> pretrain_layer(ConvLayer& encoder, ActivationLayer& activation,
                                   const Tensor& inputs, const AePretrainConfig& cfg) {
  if (inputs.rank() != 4) {
    throw ShapeError("pretrain_layer: inputs must be (N,C,H,W), got " + to_string(inputs.shape()));
  }
  if (inputs.dim(1) != encoder.weight.dim(1)) {
    throw ShapeError("pretrain_layer: input channels do not match the encoder", inputs.shape(),
                     encoder.weight.shape());
  }
  const std::size_t per_sample = inputs.size() / inputs.dim(0);
  const InputProvider slice = [&](std::span<const std::size_t> idx) {
    Shape shape = inputs.shape();
    shape[0] = idx.size();
    std::vector<double> values;
    values.reserve(idx.size() * per_sample);
    for (auto i : idx) {
      values.insert(values.end(), inputs.data() + i * per_sample, inputs.data() + (i + 1) * per_sample);
    }
    return Tensor(std::move(shape), std::move(values));
  };
  return pretrain_layer(encoder, activation, inputs.dim(0), slice, cfg);
}

Network pretrain_network(const Network& net, const Dataset& data, const AePretrainConfig& cfg,
                         PretrainReport* report) {
  Network out = net;
  if (report) report->layer_histories.clear();
  if (cfg.epochs_per_layer == 0) return out;

  std::vector<std::size_t> conv_positions;
  {
    const auto& layers = std::as_const(out).layers();
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (std::holds_alternative<ConvLayer>(layers[i])) conv_positions.push_back(i);
    }
  }

  auto& layers = out.layers();
  for (std::size_t block = 0; block < conv_positions.size(); ++block) {
    const std::size_t pos = conv_positions[block];
    const InputProvider prefix = [&, pos](std::span<const std::size_t> idx) {
      Tensor x = data.images(idx);
      for (std::size_t i = 0; i < pos; ++i) {
        if (auto* c = std::get_if<ConvLayer>(&layers[i])) {
          x = conv_forward(*c, x, nullptr);
        } else if (auto* a = std::get_if<ActivationLayer>(&layers[i])) {
          x = activation_forward(*a, x, nullptr);
        } else if (std::holds_alternative<PoolLayer>(layers[i])) {
          x = pool_forward(x, nullptr);
        }
      }
      return x;
    };
    auto& encoder = std::get<ConvLayer>(layers[pos]);
    auto& activation = std::get<ActivationLayer>(layers[pos + 1]);
    AePretrainConfig layer_cfg = cfg;
    layer_cfg.seed = cfg.seed + block;
    auto history = pretrain_layer(encoder, activation, data.size(), prefix, layer_cfg);
    if (report) report->layer_histories.push_back(std::move(history));
  }
  out.touch();
  return out;
}

}  // namespace actgrad
