#pragma once

#include <cstddef>

#include "actgrad/cifar.hpp"
#include "actgrad/network.hpp"
#include "actgrad/optim.hpp"

namespace actgrad {

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Mean cross-entropy and accuracy over the whole dataset, inference only.
Evaluation evaluate(const Network& net, const Dataset& data, std::size_t chunk = 250);

/// One pass over the iterator's epoch permutation with RMSProp at a fixed rate.
/// Returns the mean mini-batch loss.
double train_epoch(Network& net, RmspropState& state, BatchIterator& batches, int epoch, double lr);

}  // namespace actgrad
