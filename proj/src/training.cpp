#include "actgrad/training.hpp"

#include <algorithm>
#include <numeric>

namespace actgrad {

Evaluation evaluate(const Network& net, const Dataset& data, std::size_t chunk) {
  if (data.empty()) throw ValueError("evaluate: empty dataset");
  chunk = std::max<std::size_t>(chunk, 1);
  double loss_sum = 0.0;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += chunk) {
    const std::size_t end = std::min(data.size(), start + chunk);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor labels = data.one_hot(idx);
    const Tensor probs = forward(net, data.images(idx));
    loss_sum += loss_and_grad(probs, labels).loss * static_cast<double>(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      if (argmax_row(probs, r) == argmax_row(labels, r)) ++correct;
    }
  }
  const auto n = static_cast<double>(data.size());
  return {loss_sum / n, static_cast<double>(correct) / n};
}

double train_epoch(Network& net, RmspropState& state, BatchIterator& batches, int epoch, double lr) {
  batches.begin_epoch(epoch);
  double loss_sum = 0.0;
  std::size_t steps = 0;
  ForwardCache cache;
  while (auto batch = batches.next()) {
    const Tensor probs = forward(net, batch->images, &cache);
    const auto lg = loss_and_grad(probs, batch->labels);
    const Gradients grads = backward(net, cache, lg.dlogits);
    rmsprop_step(state, net, grads, lr);
    loss_sum += lg.loss;
    ++steps;
  }
  return steps ? loss_sum / static_cast<double>(steps) : 0.0;
}

}  // namespace actgrad
