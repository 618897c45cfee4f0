#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "actgrad/cifar.hpp"
#include "actgrad/network.hpp"

namespace actgrad {

struct AePretrainConfig {
  /// 0 disables pretraining entirely.
  std::size_t epochs_per_layer = 5;
  double lr = 0.001;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
};

/// Produces the (frozen) encoder inputs for a set of sample indices.
using InputProvider = std::function<Tensor(std::span<const std::size_t>)>;

/// Trains conv + activation against a throwaway 3x3 decoder back to the input
/// channel count (linear output, zero bias init), minimizing the mean squared
/// reconstruction error with RMSProp. Returns the dataset MSE after each epoch.
std::vector<double> pretrain_layer(ConvLayer& encoder, ActivationLayer& activation,
                                   std::size_t sample_count, const InputProvider& inputs,
                                   const AePretrainConfig& cfg);

std::vector<double> pretrain_layer(ConvLayer& encoder, ActivationLayer& activation,
                                   const Tensor& inputs, const AePretrainConfig& cfg);

/// Mean squared reconstruction error of encoder -> activation -> decoder.
double reconstruction_mse(const ConvLayer& encoder, const ActivationLayer& activation,
                          const ConvLayer& decoder, const Tensor& inputs);

struct PretrainReport {
  /// Per conv layer, in order, the per-epoch reconstruction MSE.
  std::vector<std::vector<double>> layer_histories;
};

/// Greedy pass over the conv blocks: block i trains on the outputs of the
/// already-pretrained blocks before it (conv -> act -> pool), recomputed per
/// batch from the images. Dense layers are left untouched.
Network pretrain_network(const Network& net, const Dataset& data, const AePretrainConfig& cfg,
                         PretrainReport* report = nullptr);

}  // namespace actgrad
