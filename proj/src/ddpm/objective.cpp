#include "das/ddpm/objective.hpp"

#include "das/errors.hpp"

namespace das::ddpm {
namespace {

NoisePredictor::Trace trace_at(const NoisePredictor& model, const Eigen::VectorXd& x0, int t,
                               const Eigen::VectorXd& eps, const DiffusionSchedule& schedule) {
  if (x0.size() != model.data_dim()) throw ShapeError("sample dimension does not match the model");
  const Eigen::MatrixXd x_t = forward_noise(x0, t, eps, schedule);
  const int ts[1] = {t};
  return model.forward_trace(x_t, ts);
}

}  // namespace

double simple_loss(const NoisePredictor& model, const Eigen::VectorXd& x0, int t, const Eigen::VectorXd& eps,
                   const DiffusionSchedule& schedule) {
  if (x0.size() != model.data_dim()) throw ShapeError("sample dimension does not match the model");
  const Eigen::VectorXd out = model.forward(forward_noise(x0, t, eps, schedule), t);
  return (out - eps).squaredNorm();
}

Eigen::VectorXd loss_gradient(const NoisePredictor& model, const Eigen::VectorXd& x0, int t,
                              const Eigen::VectorXd& eps, const DiffusionSchedule& schedule) {
  const auto trace = trace_at(model, x0, t, eps, schedule);
  const Eigen::MatrixXd seed = 2.0 * (trace.output.col(0) - eps);
  return model.param_gradient(trace, model.backprop(trace, seed));
}

Eigen::MatrixXd output_jacobian(const NoisePredictor& model, const Eigen::VectorXd& x0, int t,
                                const Eigen::VectorXd& eps, const DiffusionSchedule& schedule) {
  const auto trace = trace_at(model, x0, t, eps, schedule);
  const Eigen::MatrixXd seeds = Eigen::MatrixXd::Identity(model.data_dim(), model.data_dim());
  return model.param_jacobian(trace, model.backprop(trace, seeds));
}

}  // namespace das::ddpm
