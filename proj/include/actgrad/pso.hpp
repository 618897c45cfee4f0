#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "actgrad/cifar.hpp"
#include "actgrad/network.hpp"

namespace actgrad {

struct SwarmConfig {
  std::size_t n_particles = 10;
  std::size_t generations = 50;
  double inertia = 0.7;
  double c1 = 2.0;
  double c2 = 2.0;
  /// Per-component bound on |V|; +infinity disables clamping.
  double velocity_clamp = 0.5;
  std::size_t eval_subset_size = 1000;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Particle {
  std::vector<double> position;
  std::vector<double> velocity;
  std::vector<double> local_best_position;
  double local_best_fitness = -std::numeric_limits<double>::infinity();
};

/// Source of uniform(0,1) draws. Swapping in a constant makes runs fully deterministic.
using UniformSource = std::function<double()>;

/// Fitness with a squared residual: 1 / (1 + sum_p sum_c (y - t)^2 / (2n)).
double fitness_from_outputs(const Tensor& probs, const Tensor& labels);

/// Loads params into scratch and scores it on the batch (inference in chunks of 100).
double fitness(Network& scratch, std::span<const double> params, const Tensor& images,
               const Tensor& labels);

/// V <- w V + c1 r1 (P_l - X) + c2 r2 (P_g - X), r1, r2 drawn per component;
/// V clamped to +-velocity_clamp; X <- X + V.
void pso_update(Particle& particle, std::span<const double> global_best, const SwarmConfig& cfg,
                const UniformSource& uniform);

struct GenerationRecord {
  std::size_t generation = 0;
  double best_fitness = 0.0;
  /// Validation accuracy of the global best; NaN when no validator is set.
  double val_accuracy = 0.0;
};

struct SwarmResult {
  std::vector<double> best_position;
  double best_fitness = -std::numeric_limits<double>::infinity();
  std::vector<GenerationRecord> history;
  std::vector<Particle> particles;
};

struct SwarmHooks {
  /// Defaults to a mt19937_64 stream seeded from SwarmConfig::seed.
  UniformSource uniform;
  /// Called whenever the global best changes; its result is logged per generation.
  std::function<double(std::span<const double>)> validate;
  /// Called after the best-position updates of every generation.
  std::function<void(std::size_t, std::span<const Particle>, std::span<const double>)> observe;
};

using FitnessFn = std::function<double(std::span<const double>)>;

/// Each generation: score every particle, update local and global bests on
/// strict improvement, log, then move every particle (skipped after the last
/// generation). Velocities start at zero.
SwarmResult run_swarm(const SwarmConfig& cfg, std::vector<std::vector<double>> initial_positions,
                      const FitnessFn& fitness_fn, SwarmHooks hooks = {});

struct PsoTrainResult {
  SwarmResult swarm;
  Network best_network;
};

/// Swarm training of a CNN: particle k starts from build_model with seed
/// model_cfg.seed + k, fitness on a fixed stratified subset of train, and the
/// global best is scored on validation whenever it changes.
PsoTrainResult pso_train(const SwarmConfig& cfg, const ModelConfig& model_cfg, const Dataset& train,
                         const Dataset& validation, SwarmHooks hooks = {});

}  // namespace actgrad
