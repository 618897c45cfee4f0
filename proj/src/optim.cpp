#include "actgrad/optim.hpp"

#include <cmath>
#include <string>

namespace actgrad {

double lr_schedule(int epoch) {
  if (epoch < 1) throw ValueError("lr_schedule: epoch must be >= 1, got " + std::to_string(epoch));
  if (epoch <= 20) return 0.001;
  if (epoch <= 40) return 0.0001;
  if (epoch <= 60) return 0.00001;
  return 0.000001;
}

void rmsprop_step(RmspropState& state, std::span<const ParamRef> params, const Gradients& grads,
                  double lr) {
  if (grads.size() != params.size()) {
    throw ShapeError("rmsprop: " + std::to_string(grads.size()) + " gradients for " +
                     std::to_string(params.size()) + " parameters");
  }
  if (state.accumulators.empty()) {
    for (const auto& p : params) state.accumulators.emplace_back(p.shape);
  }
  if (state.accumulators.size() != params.size()) {
    throw ShapeError("rmsprop: optimizer state was built for a different parameter list");
  }
  const double rho = state.rho;
  const double eps = state.epsilon;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    if (grads[i].shape() != p.shape || state.accumulators[i].shape() != p.shape) {
      throw ShapeError("rmsprop: shape mismatch for " + p.name, grads[i].shape(), p.shape);
    }
    auto theta = p.values;
    auto g = grads[i].values();
    auto s = state.accumulators[i].values();
    for (std::size_t k = 0; k < theta.size(); ++k) {
      s[k] = rho * s[k] + (1.0 - rho) * g[k] * g[k];
      theta[k] -= lr * g[k] / (std::sqrt(s[k]) + eps);
    }
  }
}

void rmsprop_step(RmspropState& state, Network& net, const Gradients& grads, double lr) {
  const auto params = net.parameters();
  rmsprop_step(state, std::span<const ParamRef>(params), grads, lr);
  net.enforce_constraints();
}

}  // namespace actgrad
