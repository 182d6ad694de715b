#pragma once

#include <vector>

#include <Eigen/Dense>

namespace das::ddpm {

/// Variance schedule of a discrete-time DDPM. Timesteps are 1-based:
/// `beta(t)` for t in [1, T].
class DiffusionSchedule {
 public:
  DiffusionSchedule() = default;

  int num_timesteps() const { return static_cast<int>(betas_.size()); }
  double beta_start() const { return beta_start_; }
  double beta_end() const { return beta_end_; }

  double beta(int t) const { return betas_.at(index(t)); }
  double alpha(int t) const { return alphas_.at(index(t)); }
  /// Cumulative product of alphas up to t. alpha_bar(0) is defined as 1.
  double alpha_bar(int t) const { return t == 0 ? 1.0 : alpha_bars_.at(index(t)); }

  const std::vector<double>& betas() const { return betas_; }
  const std::vector<double>& alphas() const { return alphas_; }
  const std::vector<double>& alpha_bars() const { return alpha_bars_; }

  friend DiffusionSchedule make_linear_schedule(int, double, double);

 private:
  std::size_t index(int t) const { return static_cast<std::size_t>(t - 1); }

  double beta_start_ = 0.0;
  double beta_end_ = 0.0;
  std::vector<double> betas_;
  std::vector<double> alphas_;
  std::vector<double> alpha_bars_;
};

/// Linear beta schedule from beta_start at t=1 to beta_end at t=T.
/// Throws ParameterError unless 0 < beta_start <= beta_end < 1 and T >= 1.
DiffusionSchedule make_linear_schedule(int num_timesteps, double beta_start, double beta_end);

/// `count` integer timesteps evenly spaced in [1, T], strictly increasing,
/// endpoints included when count >= 2. A single timestep sits at T/2.
std::vector<int> timestep_grid(int num_timesteps, int count);

/// x_t = sqrt(alpha_bar_t) x_0 + sqrt(1 - alpha_bar_t) eps.
Eigen::VectorXd forward_noise(const Eigen::VectorXd& x0, int t, const Eigen::VectorXd& eps,
                              const DiffusionSchedule& schedule);

}  // namespace das::ddpm
