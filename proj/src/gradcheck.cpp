#include "actgrad/gradcheck.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>

#include "actgrad/network.hpp"

namespace actgrad {

std::vector<double> finite_diff(const ScalarFn& f, std::span<const double> at, double step) {
  if (!(step > 0.0)) throw ValueError("finite_diff: step must be positive");
  std::vector<double> x(at.begin(), at.end());
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + step;
    const double up = f(x);
    x[i] = saved - step;
    const double down = f(x);
    x[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw ValueError("finite_diff: non-finite function value when probing coordinate " +
                       std::to_string(i));
    }
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

double relative_error(double a, double b) {
  const double denom = std::max({std::abs(a), std::abs(b), kRelativeErrorFloor});
  return std::abs(a - b) / denom;
}

namespace {

constexpr std::array<CheckComponent, 6> kComponents{CheckComponent::fourier, CheckComponent::lc,
                                                    CheckComponent::conv,    CheckComponent::dense,
                                                    CheckComponent::loss,    CheckComponent::end2end};

class Tally {
 public:
  void compare(const std::string& name, std::span<const double> analytic,
               std::span<const double> numeric) {
    if (analytic.size() != numeric.size()) {
      throw ShapeError("gradcheck: analytic and numeric gradients differ in length for " + name,
                       Shape{analytic.size()}, Shape{numeric.size()});
    }
    auto it = std::find_if(groups_.begin(), groups_.end(), [&](const auto& g) { return g.name == name; });
    if (it == groups_.end()) {
      groups_.push_back({name, 0.0, 0});
      it = groups_.end() - 1;
    }
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      double e = relative_error(analytic[i], numeric[i]);
      if (std::isnan(e)) e = std::numeric_limits<double>::infinity();
      it->max_error = std::max(it->max_error, e);
    }
    it->coordinates += analytic.size();
  }

  CheckReport finish(CheckComponent component, std::uint64_t seed, std::size_t draws) && {
    CheckReport r;
    r.component = component;
    r.seed = seed;
    r.draws = draws;
    for (const auto& g : groups_) r.max_error = std::max(r.max_error, g.max_error);
    r.groups = std::move(groups_);
    r.passed = r.max_error < kGradTolerance;
    return r;
  }

 private:
  std::vector<GroupError> groups_;
};

double normal(std::mt19937_64& rng, double sigma) {
  return std::normal_distribution<double>(0.0, sigma)(rng);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Tensor random_tensor(std::mt19937_64& rng, Shape shape, double sigma) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = normal(rng, sigma);
  return t;
}

/// Inputs with no element inside the ReLU exclusion band.
Tensor kink_free_tensor(std::mt19937_64& rng, Shape shape, double sigma) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) {
    do {
      v = normal(rng, sigma);
    } while (std::abs(v) < kKinkExclusion);
  }
  return t;
}

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

FourierParams random_fourier(std::mt19937_64& rng, double coeff_sigma) {
  FourierParams p(kFourierRank);
  p.constant() = normal(rng, 0.5);
  p.omega() = uniform(rng, 0.5, 1.5) * (uniform(rng, 0.0, 1.0) < 0.5 ? -1.0 : 1.0);
  for (auto& c : p.cos_coeffs()) c = normal(rng, coeff_sigma);
  for (auto& c : p.sin_coeffs()) c = normal(rng, coeff_sigma);
  return p;
}

/// Weights whose sum keeps well clear of the denominator guard band.
LCParams random_lc(std::mt19937_64& rng) {
  const auto candidates = LCParams::default_candidates();
  std::vector<double> w(candidates.size());
  double sum = 0.0;
  do {
    for (auto& v : w) v = uniform(rng, -0.5, 1.0);
    sum = 0.0;
    for (double v : w) sum += v;
  } while (std::abs(sum) < 0.1);
  return LCParams(candidates, std::move(w));
}

std::mt19937_64 draw_rng(std::uint64_t seed, std::size_t draw) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(draw)};
  return std::mt19937_64(seq);
}

CheckReport check_lc(std::uint64_t seed, std::size_t draws) {
  Tally tally;
  for (std::size_t d = 0; d < draws; ++d) {
    auto rng = draw_rng(seed, d);
    const LCParams params = d == 0 ? LCParams() : random_lc(rng);
    const Tensor x = kink_free_tensor(rng, {8}, 2.0);
    const Tensor u = random_tensor(rng, {8}, 1.0);

    LCCache cache;
    lc_forward(params, x, &cache);
    const LCBackward g = lc_backward(params, cache, u);

    const auto w = params.weights();
    const auto num_w = finite_diff(
        [&](std::span<const double> v) {
          const LCParams p(params.candidates(), std::vector<double>(v.begin(), v.end()));
          return dot(lc_forward(p, x), u);
        },
        w);
    const auto num_x = finite_diff(
        [&](std::span<const double> v) {
          return dot(lc_forward(params, Tensor(x.shape(), {v.begin(), v.end()})), u);
        },
        x.values());
    tally.compare("weights", g.weights, num_w);
    tally.compare("input", g.input.values(), num_x);
  }
  return std::move(tally).finish(CheckComponent::lc, seed, draws);
}

CheckReport check_conv(std::uint64_t seed, std::size_t draws) {
  Tally tally;
  for (std::size_t d = 0; d < draws; ++d) {
    auto rng = draw_rng(seed, d);
    const ConvLayer layer{random_tensor(rng, {3, 2, 3, 3}, 0.5), random_tensor(rng, {3}, 0.5)};
    const Tensor x = random_tensor(rng, {2, 2, 5, 5}, 1.0);
    const Tensor u = random_tensor(rng, {2, 3, 5, 5}, 1.0);

    LayerCache cache;
    conv_forward(layer, x, &cache);
    Tensor gw(layer.weight.shape()), gb(layer.bias.shape());
    const Tensor gx = conv_backward(layer, cache, u, gw, gb, true);

    const auto loss_with = [&](const ConvLayer& l, const Tensor& in) {
      return dot(conv_forward(l, in, nullptr), u);
    };
    const auto num_w = finite_diff(
        [&](std::span<const double> v) {
          return loss_with({Tensor(layer.weight.shape(), {v.begin(), v.end()}), layer.bias}, x);
        },
        layer.weight.values());
    const auto num_b = finite_diff(
        [&](std::span<const double> v) {
          return loss_with({layer.weight, Tensor(layer.bias.shape(), {v.begin(), v.end()})}, x);
        },
        layer.bias.values());
    const auto num_x = finite_diff(
        [&](std::span<const double> v) { return loss_with(layer, Tensor(x.shape(), {v.begin(), v.end()})); },
        x.values());
    tally.compare("weight", gw.values(), num_w);
    tally.compare("bias", gb.values(), num_b);
    tally.compare("input", gx.values(), num_x);
  }
  return std::move(tally).finish(CheckComponent::conv, seed, draws);
}

CheckReport check_dense(std::uint64_t seed, std::size_t draws) {
  Tally tally;
  for (std::size_t d = 0; d < draws; ++d) {
    auto rng = draw_rng(seed, d);
    const DenseLayer layer{random_tensor(rng, {4, 6}, 0.5), random_tensor(rng, {4}, 0.5)};
    const Tensor x = random_tensor(rng, {3, 6}, 1.0);
    const Tensor u = random_tensor(rng, {3, 4}, 1.0);

    LayerCache cache;
    dense_forward(layer, x, &cache);
    Tensor gw(layer.weight.shape()), gb(layer.bias.shape());
    const Tensor gx = dense_backward(layer, cache, u, gw, gb);

    const auto loss_with = [&](const DenseLayer& l, const Tensor& in) {
      return dot(dense_forward(l, in, nullptr), u);
    };
    const auto num_w = finite_diff(
        [&](std::span<const double> v) {
          return loss_with({Tensor(layer.weight.shape(), {v.begin(), v.end()}), layer.bias}, x);
        },
        layer.weight.values());
    const auto num_b = finite_diff(
        [&](std::span<const double> v) {
          return loss_with({layer.weight, Tensor(layer.bias.shape(), {v.begin(), v.end()})}, x);
        },
        layer.bias.values());
    const auto num_x = finite_diff(
        [&](std::span<const double> v) { return loss_with(layer, Tensor(x.shape(), {v.begin(), v.end()})); },
        x.values());
    tally.compare("weight", gw.values(), num_w);
    tally.compare("bias", gb.values(), num_b);
    tally.compare("input", gx.values(), num_x);
  }
  return std::move(tally).finish(CheckComponent::dense, seed, draws);
}

Tensor random_one_hot(std::mt19937_64& rng, std::size_t rows, std::size_t classes) {
  Tensor t({rows, classes});
  std::uniform_int_distribution<std::size_t> pick(0, classes - 1);
  for (std::size_t r = 0; r < rows; ++r) t.at(r, pick(rng)) = 1.0;
  return t;
}

CheckReport check_loss(std::uint64_t seed, std::size_t draws) {
  Tally tally;
  for (std::size_t d = 0; d < draws; ++d) {
    auto rng = draw_rng(seed, d);
    const Tensor z = random_tensor(rng, {3, 10}, 2.0);
    const Tensor y = random_one_hot(rng, 3, 10);
    const auto lg = loss_and_grad(softmax_rows(z), y);
    const auto num = finite_diff(
        [&](std::span<const double> v) {
          return loss_and_grad(softmax_rows(Tensor(z.shape(), {v.begin(), v.end()})), y).loss;
        },
        z.values());
    tally.compare("logits", lg.dlogits.values(), num);
  }
  return std::move(tally).finish(CheckComponent::loss, seed, draws);
}

Network tiny_network(ActivationType act, std::mt19937_64& rng) {
  ModelConfig cfg;
  cfg.activation = act;
  cfg.conv_filters = {2, 2, 2};
  cfg.input_size = 8;
  cfg.dense_width = 8;
  cfg.seed = rng();
  Network net = build_model(cfg);
  for (auto& layer : net.layers()) {
    auto* a = std::get_if<ActivationLayer>(&layer);
    if (!a) continue;
    for (auto& f : a->fourier) f = random_fourier(rng, 0.1);
    for (auto& l : a->lc) l = random_lc(rng);
  }
  return net;
}

/// Which side of every kink the forward pass landed on: ReLU input signs and
/// pooling winners.
std::vector<std::size_t> kink_pattern(const Network& net, const ForwardCache& cache) {
  std::vector<std::size_t> pattern;
  const auto& layers = net.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& lc = cache.layers[i];
    if (const auto* a = std::get_if<ActivationLayer>(&layers[i])) {
      if (a->type == ActivationType::relu || a->type == ActivationType::lc) {
        for (double v : lc.input.values()) pattern.push_back(v > 0.0);
      }
    } else if (std::holds_alternative<PoolLayer>(layers[i])) {
      pattern.insert(pattern.end(), lc.argmax.begin(), lc.argmax.end());
    }
  }
  return pattern;
}

/// Central differences carry roundoff of a few dozen ulps of |f| divided by
/// 2h. A nonzero estimate so small that this noise alone would exceed the
/// tolerance cannot certify anything either way.
bool below_resolution(std::span<const double> numeric, double f) {
  constexpr double kUlps = 64.0;
  const double noise = kUlps * std::numeric_limits<double>::epsilon() * std::max(std::abs(f), 1.0) /
                       (2.0 * kFiniteDiffStep);
  const double bound = noise / kGradTolerance;
  return std::any_of(numeric.begin(), numeric.end(),
                     [&](double g) { return g != 0.0 && std::abs(g) < bound; });
}

CheckReport check_end2end(std::uint64_t seed, std::size_t draws) {
  Tally tally;
  std::size_t rejected = 0;
  constexpr std::array<ActivationType, 3> kinds{ActivationType::relu, ActivationType::fourier,
                                                ActivationType::lc};
  for (std::size_t d = 0; d < draws; ++d) {
    auto rng = draw_rng(seed, d);
    for (auto kind : kinds) {
      // The scalar probed is a random projection of the logits, so every
      // coordinate of the backward pass is exercised without the vanishing
      // entries that saturated softmax classes produce.
      Network net = tiny_network(kind, rng);
      for (int attempt = 0;; ++attempt) {
        if (attempt > 0 && attempt % 10 == 0) net = tiny_network(kind, rng);
        Tensor x({2, 3, 8, 8});
        for (auto& v : x.values()) v = uniform(rng, 0.0, 1.0);
        const Tensor u = random_tensor(rng, {2, net.config().num_classes}, 1.0);

        ForwardCache cache;
        forward_logits(net, x, &cache);
        if (kink_margin(net, cache) < kKinkExclusion) {
          ++rejected;
          continue;
        }
        const auto pattern = kink_pattern(net, cache);
        const Gradients grads = backward(net, cache, u);
        const double base = dot(cache.logits, u);

        // A probe that flips a ReLU or a pooling winner straddles a kink;
        // the whole draw is rejected.
        Network scratch = net;
        bool crossed = false;
        const auto num = finite_diff(
            [&](std::span<const double> v) {
              scratch.unflatten(v);
              ForwardCache probe;
              const double value = dot(forward_logits(scratch, x, &probe), u);
              crossed = crossed || kink_pattern(scratch, probe) != pattern;
              return value;
            },
            net.flatten());
        if (crossed) {
          ++rejected;
          continue;
        }
        if (below_resolution(num, base)) {
          ++rejected;
          continue;
        }

        std::size_t offset = 0;
        const auto params = std::as_const(net).parameters();
        for (std::size_t i = 0; i < params.size(); ++i) {
          const std::size_t n = params[i].values.size();
          tally.compare(std::string(to_string(kind)) + "/" + params[i].name, grads[i].values(),
                        std::span<const double>(num).subspan(offset, n));
          offset += n;
        }
        break;
      }
    }
  }
  auto report = std::move(tally).finish(CheckComponent::end2end, seed, draws);
  report.rejected = rejected;
  return report;
}

}  // namespace

std::string_view to_string(CheckComponent component) {
  switch (component) {
    case CheckComponent::fourier: return "fourier";
    case CheckComponent::lc: return "lc";
    case CheckComponent::conv: return "conv";
    case CheckComponent::dense: return "dense";
    case CheckComponent::loss: return "loss";
    case CheckComponent::end2end: return "end2end";
  }
  return "unknown";
}

CheckComponent parse_check_component(std::string_view name) {
  for (auto c : kComponents) {
    if (to_string(c) == name) return c;
  }
  throw ValueError("unknown gradcheck component '" + std::string(name) +
                   "' (expected fourier, lc, conv, dense, loss or end2end)");
}

std::span<const CheckComponent> all_check_components() { return kComponents; }

std::string CheckReport::summary() const {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "%s seed=%llu draws=%zu rejected=%zu max_rel_err=%.3e %s\n",
                std::string(to_string(component)).c_str(), static_cast<unsigned long long>(seed), draws,
                rejected, max_error, passed ? "PASS" : "FAIL");
  out += line;
  for (const auto& g : groups) {
    std::snprintf(line, sizeof line, "  %-28s %.3e  (%zu coords)\n", g.name.c_str(), g.max_error,
                  g.coordinates);
    out += line;
  }
  return out;
}

CheckReport check_fourier(std::uint64_t seed, std::size_t draws, const FourierBackwardFn& backward) {
  Tally tally;
  for (std::size_t d = 0; d < draws; ++d) {
    auto rng = draw_rng(seed, d);
    const FourierParams params = d == 0 ? FourierParams::initial(rng) : random_fourier(rng, 0.5);
    const Tensor x = random_tensor(rng, {8}, 2.0);
    const Tensor u = random_tensor(rng, {8}, 1.0);

    FourierCache cache;
    fourier_forward(params, x, &cache);
    const FourierBackward g = backward(params, cache, u);

    const auto num_p = finite_diff(
        [&](std::span<const double> v) {
          FourierParams p(params.rank());
          std::copy(v.begin(), v.end(), p.packed().begin());
          return dot(fourier_forward(p, x), u);
        },
        params.packed());
    const auto num_x = finite_diff(
        [&](std::span<const double> v) {
          return dot(fourier_forward(params, Tensor(x.shape(), {v.begin(), v.end()})), u);
        },
        x.values());

    const std::size_t n = params.rank();
    const auto gp = g.params.packed();
    const std::span<const double> np(num_p);
    tally.compare("A", gp.subspan(0, 1), np.subspan(0, 1));
    tally.compare("omega", gp.subspan(1, 1), np.subspan(1, 1));
    tally.compare("cos", gp.subspan(2, n), np.subspan(2, n));
    tally.compare("sin", gp.subspan(2 + n, n), np.subspan(2 + n, n));
    tally.compare("input", g.input.values(), num_x);
  }
  return std::move(tally).finish(CheckComponent::fourier, seed, draws);
}

CheckReport check_report(CheckComponent component, std::uint64_t seed, std::size_t draws) {
  switch (component) {
    case CheckComponent::fourier:
      return check_fourier(seed, draws, [](const FourierParams& p, const FourierCache& c, const Tensor& u) {
        return fourier_backward(p, c, u);
      });
    case CheckComponent::lc: return check_lc(seed, draws);
    case CheckComponent::conv: return check_conv(seed, draws);
    case CheckComponent::dense: return check_dense(seed, draws);
    case CheckComponent::loss: return check_loss(seed, draws);
    case CheckComponent::end2end: return check_end2end(seed, draws);
  }
  throw ValueError("unknown gradcheck component");
}

}  // namespace actgrad
