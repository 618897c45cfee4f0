#include "actgrad/pso.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "actgrad/training.hpp"

namespace actgrad {

void SwarmConfig::validate() const {
  if (n_particles < 2) throw ValueError("swarm needs at least 2 particles");
  if (generations < 1) throw ValueError("swarm needs at least 1 generation");
  if (!(velocity_clamp > 0.0)) throw ValueError("velocity clamp must be positive");
  if (eval_subset_size < 1) throw ValueError("fitness subset must hold at least one sample");
}

double fitness_from_outputs(const Tensor& probs, const Tensor& labels) {
  if (probs.shape() != labels.shape() || probs.rank() != 2) {
    throw ShapeError("fitness: outputs and labels must share a (n,classes) shape", probs.shape(),
                     labels.shape());
  }
  double sq = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double r = probs[i] - labels[i];
    sq += r * r;
  }
  const auto n = static_cast<double>(probs.dim(0));
  return 1.0 / (1.0 + sq / (2.0 * n));
}

double fitness(Network& scratch, std::span<const double> params, const Tensor& images,
               const Tensor& labels) {
  if (images.rank() != 4 || images.dim(0) == 0) throw ValueError("fitness: empty evaluation batch");
  if (labels.rank() != 2 || labels.dim(0) != images.dim(0)) {
    throw ShapeError("fitness: label rows differ from image count", labels.shape(), images.shape());
  }
  scratch.unflatten(params);
  const std::size_t n = images.dim(0);
  const std::size_t per_image = images.size() / n;
  const std::size_t classes = labels.dim(1);
  constexpr std::size_t kChunk = 100;
  double sq = 0.0;
  for (std::size_t start = 0; start < n; start += kChunk) {
    const std::size_t m = std::min(kChunk, n - start);
    Shape shape = images.shape();
    shape[0] = m;
    Tensor chunk(shape, std::vector<double>(images.data() + start * per_image,
                                            images.data() + (start + m) * per_image));
    const Tensor probs = forward(scratch, chunk);
    for (std::size_t i = 0; i < probs.size(); ++i) {
      const double r = probs[i] - labels[start * classes + i];
      sq += r * r;
    }
  }
  return 1.0 / (1.0 + sq / (2.0 * static_cast<double>(n)));
}

void pso_update(Particle& particle, std::span<const double> global_best, const SwarmConfig& cfg,
                const UniformSource& uniform) {
  const std::size_t dim = particle.position.size();
  if (particle.velocity.size() != dim || particle.local_best_position.size() != dim ||
      global_best.size() != dim) {
    throw ShapeError("pso_update: particle vectors and global best must share one length",
                     Shape{dim}, Shape{global_best.size()});
  }
  const double clamp = cfg.velocity_clamp;
  for (std::size_t i = 0; i < dim; ++i) {
    const double x = particle.position[i];
    const double r1 = uniform();
    const double r2 = uniform();
    double v = cfg.inertia * particle.velocity[i] + cfg.c1 * r1 * (particle.local_best_position[i] - x) +
               cfg.c2 * r2 * (global_best[i] - x);
    v = std::clamp(v, -clamp, clamp);
    particle.velocity[i] = v;
    particle.position[i] = x + v;
  }
}

SwarmResult run_swarm(const SwarmConfig& cfg, std::vector<std::vector<double>> initial_positions,
                      const FitnessFn& fitness_fn, SwarmHooks hooks) {
  cfg.validate();
  if (initial_positions.size() != cfg.n_particles) {
    throw ValueError("run_swarm: " + std::to_string(initial_positions.size()) +
                     " initial positions for " + std::to_string(cfg.n_particles) + " particles");
  }
  if (!hooks.uniform) {
    auto engine = std::make_shared<std::mt19937_64>(cfg.seed);
    hooks.uniform = [engine] { return std::uniform_real_distribution<double>(0.0, 1.0)(*engine); };
  }

  SwarmResult result;
  const std::size_t dim = initial_positions.front().size();
  for (auto& pos : initial_positions) {
    if (pos.size() != dim) throw ShapeError("run_swarm: initial positions differ in length");
    Particle p;
    p.velocity.assign(dim, 0.0);
    p.local_best_position = pos;
    p.position = std::move(pos);
    result.particles.push_back(std::move(p));
  }

  double val_accuracy = std::nan("");
  for (std::size_t gen = 1; gen <= cfg.generations; ++gen) {
    bool improved = false;
    for (auto& p : result.particles) {
      const double f = fitness_fn(p.position);
      if (f > p.local_best_fitness) {
        p.local_best_fitness = f;
        p.local_best_position = p.position;
      }
      if (f > result.best_fitness) {
        result.best_fitness = f;
        result.best_position = p.position;
        improved = true;
      }
    }
    if (improved && hooks.validate) val_accuracy = hooks.validate(result.best_position);
    result.history.push_back({gen, result.best_fitness, val_accuracy});
    if (hooks.observe) hooks.observe(gen, result.particles, result.best_position);
    if (gen == cfg.generations) break;
    for (auto& p : result.particles) pso_update(p, result.best_position, cfg, hooks.uniform);
  }
  return result;
}

PsoTrainResult pso_train(const SwarmConfig& cfg, const ModelConfig& model_cfg, const Dataset& train,
                         const Dataset& validation, SwarmHooks hooks) {
  cfg.validate();
  const Dataset eval_set = subset(train, std::min(cfg.eval_subset_size, train.size()), cfg.seed);
  const Tensor eval_images = eval_set.images();
  const Tensor eval_labels = eval_set.one_hot();

  std::vector<std::vector<double>> init;
  for (std::size_t k = 0; k < cfg.n_particles; ++k) {
    ModelConfig pc = model_cfg;
    pc.seed = model_cfg.seed + k;
    init.push_back(build_model(pc).flatten());
  }

  Network scratch = build_model(model_cfg);
  if (!hooks.validate) {
    Network judge = build_model(model_cfg);
    hooks.validate = [judge, &validation](std::span<const double> best) mutable {
      judge.unflatten(best);
      return evaluate(judge, validation).accuracy;
    };
  }
  auto swarm = run_swarm(
      cfg, std::move(init),
      [&](std::span<const double> params) { return fitness(scratch, params, eval_images, eval_labels); },
      std::move(hooks));

  Network best = build_model(model_cfg);
  best.unflatten(swarm.best_position);
  return {std::move(swarm), std::move(best)};
}

}  // namespace actgrad
