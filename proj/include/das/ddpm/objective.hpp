#pragma once

#include <Eigen/Dense>

#include "das/ddpm/predictor.hpp"
#include "das/ddpm/schedule.hpp"

namespace das::ddpm {

/// One Monte-Carlo term of the simple loss: ||eps_theta(x_t, t) - eps||^2
/// with x_t = forward_noise(x0, t, eps).
double simple_loss(const NoisePredictor& model, const Eigen::VectorXd& x0, int t, const Eigen::VectorXd& eps,
                   const DiffusionSchedule& schedule);

/// Reverse-mode gradient of simple_loss with respect to the parameters.
Eigen::VectorXd loss_gradient(const NoisePredictor& model, const Eigen::VectorXd& x0, int t,
                              const Eigen::VectorXd& eps, const DiffusionSchedule& schedule);

/// d x p Jacobian of eps_theta(x_t, t) with respect to the parameters.
/// Satisfies loss_gradient = 2 J^T (eps_theta - eps).
Eigen::MatrixXd output_jacobian(const NoisePredictor& model, const Eigen::VectorXd& x0, int t,
                                const Eigen::VectorXd& eps, const DiffusionSchedule& schedule);

}  // namespace das::ddpm
