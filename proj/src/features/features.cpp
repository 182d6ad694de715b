#include "das/features/features.hpp"

#include <cmath>
#include <string>

#include "das/ddpm/train.hpp"
#include "das/errors.hpp"
#include "das/parallel.hpp"

namespace das::features {
namespace {

// Seed of the output backprop for the chosen mode: identity columns for the
// Jacobian, d(scalar)/d(eps_theta) otherwise.
Eigen::MatrixXd output_seed(const Eigen::VectorXd& out, const Eigen::VectorXd& eps, FeatureMode mode) {
  const auto d = out.size();
  if (mode.kind == FeatureKind::kExactJacobian) return Eigen::MatrixXd::Identity(d, d);
  switch (mode.scalarizer) {
    case Scalarizer::kSimpleLoss:
      return 2.0 * (out - eps);
    case Scalarizer::kSquareNorm:
      return 2.0 * out;
    case Scalarizer::kOutputSum:
      return Eigen::VectorXd::Ones(d);
    case Scalarizer::kOutputMean:
      return Eigen::VectorXd::Constant(d, 1.0 / static_cast<double>(d));
  }
  throw ParameterError("unknown scalarizer");
}

// P^T J^T computed layer by layer without forming J: for layer l with input
// activation a, Q_l[o, :] = sum_b a[b] P[w(o, b), :] + P[bias(o), :], and the
// projected rows are sum_l deltas_l^T Q_l.
Eigen::MatrixXd projected_rows(const ddpm::NoisePredictor& model, const ddpm::NoisePredictor::Trace& trace,
                               const std::vector<Eigen::MatrixXd>& deltas, const Eigen::MatrixXd& P) {
  const Eigen::Index k = P.cols();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(deltas.back().cols(), k);
  const auto& layers = model.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    const Eigen::VectorXd& act = trace.inputs[l].col(0);
    Eigen::MatrixXd Q(layer.out, k);
    for (int o = 0; o < layer.out; ++o) {
      Q.row(o) = act.transpose() * P.middleRows(layer.weight_offset + static_cast<Eigen::Index>(o) * layer.in, layer.in);
      Q.row(o) += P.row(layer.bias_offset + o);
    }
    out.noalias() += deltas[l].transpose() * Q;
  }
  return out;
}

}  // namespace

bool operator==(const SampleFeatures& a, const SampleFeatures& b) {
  if (a.id != b.id || a.timesteps != b.timesteps || a.blocks.size() != b.blocks.size() ||
      a.residuals.size() != b.residuals.size()) {
    return false;
  }
  for (std::size_t j = 0; j < a.blocks.size(); ++j) {
    if (a.blocks[j].rows() != b.blocks[j].rows() || a.blocks[j].cols() != b.blocks[j].cols()) return false;
    if (a.blocks[j] != b.blocks[j]) return false;
  }
  for (std::size_t j = 0; j < a.residuals.size(); ++j) {
    if (a.residuals[j].size() != b.residuals[j].size() || a.residuals[j] != b.residuals[j]) return false;
  }
  return true;
}

std::string to_string(FeatureMode mode) {
  if (mode.kind == FeatureKind::kExactJacobian) return "jacobian";
  switch (mode.scalarizer) {
    case Scalarizer::kSimpleLoss:
      return "loss";
    case Scalarizer::kSquareNorm:
      return "square-norm";
    case Scalarizer::kOutputSum:
      return "output-sum";
    case Scalarizer::kOutputMean:
      return "output-mean";
  }
  return "?";
}

FeatureMode parse_feature_mode(const std::string& name) {
  if (name == "jacobian") return kJacobianMode;
  if (name == "loss") return kLossGradientMode;
  if (name == "square-norm") return {FeatureKind::kScalarizedGradient, Scalarizer::kSquareNorm};
  if (name == "output-sum") return {FeatureKind::kScalarizedGradient, Scalarizer::kOutputSum};
  if (name == "output-mean") return {FeatureKind::kScalarizedGradient, Scalarizer::kOutputMean};
  throw ParameterError("unknown feature mode '" + name +
                       "' (expected jacobian, loss, square-norm, output-sum or output-mean)");
}

Eigen::MatrixXd feature_block(const ddpm::NoisePredictor& model, const Eigen::VectorXd& x_t, int t,
                              const Eigen::VectorXd& eps, FeatureMode mode, const Projection& projection,
                              Eigen::VectorXd* residual) {
  if (projection.input_dim() != model.num_params()) {
    throw ShapeError("projection was built for " + std::to_string(projection.input_dim()) + " parameters, model has " +
                     std::to_string(model.num_params()));
  }
  if (eps.size() != model.data_dim()) throw ShapeError("noise vector has the wrong dimension");
  const int ts[1] = {t};
  const auto trace = model.forward_trace(x_t, ts);
  const Eigen::VectorXd out = trace.output.col(0);
  if (residual) *residual = out - eps;
  const auto deltas = model.backprop(trace, output_seed(out, eps, mode));

  if (projection.has_dense()) return projected_rows(model, trace, deltas, projection.dense());
  const Eigen::MatrixXd jac = model.param_jacobian(trace, deltas);
  if (projection.identity()) {
    if (projection.effective_dim() == model.num_params()) return jac;
    Eigen::MatrixXd sel(jac.rows(), projection.effective_dim());
    for (std::size_t e = 0; e < projection.selected().size(); ++e) {
      sel.col(static_cast<Eigen::Index>(e)) = jac.col(projection.selected()[e]);
    }
    return sel;
  }
  return projection.project_rows(jac);
}

std::vector<SampleFeatures> extract_features(const ddpm::NoisePredictor& model, const ddpm::DiffusionSchedule& schedule,
                                             const ddpm::Dataset& data, const std::vector<int>& timesteps,
                                             FeatureMode mode, const Projection& projection,
                                             const ExtractOptions& options) {
  if (timesteps.empty()) throw ParameterError("feature extraction needs at least one timestep");
  for (int t : timesteps) {
    if (t < 1 || t > schedule.num_timesteps()) {
      throw ParameterError("timestep " + std::to_string(t) + " outside [1, " +
                           std::to_string(schedule.num_timesteps()) + "]");
    }
  }
  if (options.draws_per_timestep < 1) throw ParameterError("draws_per_timestep must be positive");
  if (data.dim != model.data_dim()) throw ShapeError("dataset dimension does not match the model");

  const int d = model.data_dim();
  const auto rows = static_cast<std::size_t>(mode.rows(d));
  const auto workers = static_cast<std::size_t>(std::max(1, options.jobs));
  if (mode.kind == FeatureKind::kExactJacobian) {
    const std::size_t jac_bytes = sizeof(double) * static_cast<std::size_t>(d) *
                                  static_cast<std::size_t>(model.num_params()) * workers;
    if (jac_bytes > options.memory_budget) {
      throw CapacityError("exact Jacobian needs " + std::to_string(jac_bytes) + " bytes, budget is " +
                          std::to_string(options.memory_budget));
    }
  }
  const std::size_t entries = timesteps.size() * static_cast<std::size_t>(options.draws_per_timestep);
  const std::size_t store_bytes =
      sizeof(double) * data.size() * entries * (rows * static_cast<std::size_t>(projection.k()) + static_cast<std::size_t>(d));
  if (store_bytes > options.memory_budget) {
    throw CapacityError("features would take " + std::to_string(store_bytes) + " bytes, budget is " +
                        std::to_string(options.memory_budget));
  }

  std::vector<SampleFeatures> out(data.size());
  parallel_for(data.size(), options.jobs, [&](std::size_t i) {
    const auto& point = data.points[i];
    const auto draws = ddpm::sample_noise_draws(options.noise_seed, point.id, timesteps, options.draws_per_timestep, d);
    SampleFeatures& f = out[i];
    f.id = point.id;
    f.timesteps.reserve(draws.size());
    f.blocks.reserve(draws.size());
    f.residuals.reserve(draws.size());
    for (const auto& draw : draws) {
      const Eigen::VectorXd x_t = ddpm::forward_noise(point.x0, draw.t, draw.eps, schedule);
      Eigen::VectorXd r;
      f.blocks.push_back(feature_block(model, x_t, draw.t, draw.eps, mode, projection, &r));
      f.residuals.push_back(std::move(r));
      f.timesteps.push_back(draw.t);
    }
  });
  return out;
}

namespace {

Eigen::MatrixXd normalized_mean(const std::vector<Eigen::MatrixXd>& blocks) {
  Eigen::MatrixXd energy = Eigen::MatrixXd::Zero(blocks[0].rows(), blocks[0].cols());
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(blocks[0].rows(), blocks[0].cols());
  for (const auto& b : blocks) {
    energy.array() += b.array().square();
    sum += b;
  }
  const double count = static_cast<double>(blocks.size());
  return (energy.array() > 0.0).select(sum.array() / (energy.array().sqrt() * count), 0.0).matrix();
}

Eigen::MatrixXd mean(const std::vector<Eigen::MatrixXd>& blocks) {
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(blocks[0].rows(), blocks[0].cols());
  for (const auto& b : blocks) sum += b;
  return sum / static_cast<double>(blocks.size());
}

std::vector<Eigen::MatrixXd> as_matrices(const std::vector<Eigen::VectorXd>& vs) {
  return {vs.begin(), vs.end()};
}

void require_entries(const SampleFeatures& f) {
  if (f.blocks.empty() || f.blocks.size() != f.residuals.size()) {
    throw ShapeError("sample " + std::to_string(f.id) + " has no feature entries or mismatched residuals");
  }
}

}  // namespace

AveragedFeatures normalize_and_average(const SampleFeatures& features) {
  require_entries(features);
  return {features.id, normalized_mean(features.blocks), normalized_mean(as_matrices(features.residuals)).col(0), true};
}

AveragedFeatures plain_average(const SampleFeatures& features) {
  require_entries(features);
  return {features.id, mean(features.blocks), mean(as_matrices(features.residuals)).col(0), false};
}

std::vector<AveragedFeatures> average_all(const std::vector<SampleFeatures>& features, bool normalize) {
  std::vector<AveragedFeatures> out;
  out.reserve(features.size());
  for (const auto& f : features) out.push_back(normalize ? normalize_and_average(f) : plain_average(f));
  return out;
}

SampleFeatures select_entries(const SampleFeatures& features, const std::vector<std::size_t>& entries) {
  SampleFeatures out;
  out.id = features.id;
  for (std::size_t e : entries) {
    if (e >= features.blocks.size()) throw IndexError("feature entry " + std::to_string(e) + " out of range");
    out.timesteps.push_back(features.timesteps[e]);
    out.blocks.push_back(features.blocks[e]);
    out.residuals.push_back(features.residuals[e]);
  }
  return out;
}

}  // namespace das::features
