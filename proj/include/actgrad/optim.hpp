#pragma once

#include <span>
#include <vector>

#include "actgrad/network.hpp"

namespace actgrad {

/// Staged learning rate: 1e-3 up to epoch 20, 1e-4 to 40, 1e-5 to 60, 1e-6 after.
/// Epochs are 1-based; boundaries are inclusive on the left stage.
double lr_schedule(int epoch);

/// Plain RMSProp: s <- rho s + (1 - rho) g^2; theta <- theta - lr g / (sqrt(s) + eps).
struct RmspropState {
  double rho = 0.95;
  double epsilon = 1e-8;
  /// Running means of squared gradients, congruent with the parameter list. Lazily
  /// sized to zeros on the first step.
  std::vector<Tensor> accumulators;
};

void rmsprop_step(RmspropState& state, std::span<const ParamRef> params, const Gradients& grads,
                  double lr);

/// Updates every network parameter, then re-applies the activation constraints.
void rmsprop_step(RmspropState& state, Network& net, const Gradients& grads, double lr);

}  // namespace actgrad
