#include "das/ddpm/sampler.hpp"

#include <cmath>
#include <string>

#include "das/errors.hpp"
#include "das/rng.hpp"

namespace das::ddpm {

Eigen::VectorXd initial_latent(int dim, std::uint64_t seed) {
  Rng rng(seed, 0x5a3b);
  return rng.normal_vector(dim);
}

Sample sample_from(const NoisePredictor& model, const DiffusionSchedule& schedule, int num_steps,
                   Eigen::VectorXd x_T, const SamplerOptions& options) {
  if (num_steps < 1 || num_steps > schedule.num_timesteps()) {
    throw ParameterError("sampling steps must lie in [1, " + std::to_string(schedule.num_timesteps()) + "], got " +
                         std::to_string(num_steps));
  }
  if (x_T.size() != model.data_dim()) throw ShapeError("initial latent has the wrong dimension");

  const std::vector<int> grid = timestep_grid(schedule.num_timesteps(), num_steps);
  Sample out;
  out.trajectory.reserve(grid.size());
  Eigen::VectorXd x = std::move(x_T);
  for (std::size_t i = grid.size(); i-- > 0;) {
    const int t = grid[i];
    const int t_prev = i == 0 ? 0 : grid[i - 1];
    out.trajectory.push_back({t, x});
    Eigen::VectorXd eps = model.forward(x, t);
    const double ab = schedule.alpha_bar(t);
    const double ab_prev = schedule.alpha_bar(t_prev);
    Eigen::VectorXd x0_pred = (x - std::sqrt(1.0 - ab) * eps) / std::sqrt(ab);
    if (options.clip_x0 > 0.0) {
      x0_pred = x0_pred.cwiseMax(-options.clip_x0).cwiseMin(options.clip_x0);
      eps = (x - std::sqrt(ab) * x0_pred) / std::sqrt(1.0 - ab);
    }
    x = std::sqrt(ab_prev) * x0_pred + std::sqrt(1.0 - ab_prev) * eps;
  }
  out.x0 = std::move(x);
  return out;
}

Sample sample(const NoisePredictor& model, const DiffusionSchedule& schedule, int num_steps, std::uint64_t seed,
              const SamplerOptions& options) {
  return sample_from(model, schedule, num_steps, initial_latent(model.data_dim(), seed), options);
}

}  // namespace das::ddpm
