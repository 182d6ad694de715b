#include "das/ddpm/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "das/errors.hpp"

namespace das::ddpm {

DiffusionSchedule make_linear_schedule(int num_timesteps, double beta_start, double beta_end) {
  if (num_timesteps < 1) {
    throw ParameterError("schedule needs at least one timestep, got " +
                         std::to_string(num_timesteps));
  }
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
    throw ParameterError("schedule requires 0 < beta_start <= beta_end < 1, got [" +
                         std::to_string(beta_start) + ", " + std::to_string(beta_end) + "]");
  }

  DiffusionSchedule s;
  s.beta_start_ = beta_start;
  s.beta_end_ = beta_end;
  const auto n = static_cast<std::size_t>(num_timesteps);
  s.betas_.resize(n);
  s.alphas_.resize(n);
  s.alpha_bars_.resize(n);

  double running = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    double beta = beta_start;
    if (n > 1) {
      beta = beta_start + static_cast<double>(i) / static_cast<double>(n - 1) * (beta_end - beta_start);
    }
    if (n > 1 && i + 1 == n) beta = beta_end;
    s.betas_[i] = beta;
    s.alphas_[i] = 1.0 - beta;
    running *= s.alphas_[i];
    s.alpha_bars_[i] = running;
  }
  return s;
}

std::vector<int> timestep_grid(int num_timesteps, int count) {
  if (count < 1 || count > num_timesteps) {
    throw ParameterError("timestep count " + std::to_string(count) + " must lie in [1, " +
                         std::to_string(num_timesteps) + "]");
  }
  if (count == 1) return {std::max(1, num_timesteps / 2)};
  std::vector<int> grid(static_cast<std::size_t>(count));
  const double step = static_cast<double>(num_timesteps - 1) / (count - 1);
  for (int i = 0; i < count; ++i) grid[static_cast<std::size_t>(i)] = static_cast<int>(std::lround(1.0 + i * step));
  grid.back() = num_timesteps;
  return grid;
}

Eigen::VectorXd forward_noise(const Eigen::VectorXd& x0, int t, const Eigen::VectorXd& eps,
                              const DiffusionSchedule& schedule) {
  if (x0.size() != eps.size()) {
    throw ShapeError("forward_noise: x0 has dimension " + std::to_string(x0.size()) +
                     " but eps has " + std::to_string(eps.size()));
  }
  if (t < 1 || t > schedule.num_timesteps()) {
    throw ParameterError("forward_noise: timestep " + std::to_string(t) + " outside [1, " +
                         std::to_string(schedule.num_timesteps()) + "]");
  }
  const double ab = schedule.alpha_bar(t);
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

}  // namespace das::ddpm
