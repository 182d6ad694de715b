#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "das/ddpm/predictor.hpp"
#include "das/ddpm/schedule.hpp"

namespace das::ddpm {

struct TrajectoryPoint {
  int t = 0;
  Eigen::VectorXd x_t;
};

struct Sample {
  Eigen::VectorXd x0;
  /// Latent fed to the predictor at each step, from t = T downwards.
  std::vector<TrajectoryPoint> trajectory;
};

struct SamplerOptions {
  /// When positive, the predicted x_0 is clipped to [-clip_x0, clip_x0] at
  /// every step and the noise estimate is made consistent with it.
  double clip_x0 = 0.0;
};

/// Starting latent x_T for a sampling seed.
Eigen::VectorXd initial_latent(int dim, std::uint64_t seed);

/// Deterministic DDIM (eta = 0) on the evenly spaced timestep subsequence
/// timestep_grid(T, num_steps), starting from initial_latent(seed).
Sample sample(const NoisePredictor& model, const DiffusionSchedule& schedule, int num_steps, std::uint64_t seed,
              const SamplerOptions& options = {});

/// Same update rule started from a given latent.
Sample sample_from(const NoisePredictor& model, const DiffusionSchedule& schedule, int num_steps,
                   Eigen::VectorXd x_T, const SamplerOptions& options = {});

}  // namespace das::ddpm
