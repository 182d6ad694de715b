#include "das/ddpm/predictor.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "das/errors.hpp"
#include "das/rng.hpp"

namespace das::ddpm {
namespace {

// Timesteps are measured in units of this many steps before embedding.
constexpr double kTimeScale = 1000.0;

}  // namespace

Eigen::VectorXd timestep_embedding(int t, int dim) {
  if (dim % 2 != 0) throw ParameterError("timestep embedding dimension must be even");
  Eigen::VectorXd e(dim);
  const int half = dim / 2;
  for (int j = 0; j < half; ++j) {
    const double phase = std::numbers::pi * std::ldexp(1.0, j) * static_cast<double>(t) / kTimeScale;
    e[2 * j] = std::sin(phase);
    e[2 * j + 1] = std::cos(phase);
  }
  return e;
}

NoisePredictor::NoisePredictor(int data_dim, std::vector<int> hidden_sizes, int embed_dim)
    : data_dim_(data_dim), embed_dim_(embed_dim) {
  if (data_dim < 1) throw ParameterError("data dimension must be positive");
  if (embed_dim < 0 || embed_dim % 2 != 0) throw ParameterError("embedding dimension must be even");
  sizes_.push_back(data_dim + embed_dim);
  for (int h : hidden_sizes) {
    if (h < 1) throw ParameterError("hidden layer sizes must be positive");
    sizes_.push_back(h);
  }
  sizes_.push_back(data_dim);

  Eigen::Index offset = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    Layer layer{sizes_[l], sizes_[l + 1], offset, 0};
    offset += static_cast<Eigen::Index>(layer.in) * layer.out;
    layer.bias_offset = offset;
    offset += layer.out;
    layers_.push_back(layer);
  }
  params_ = Eigen::VectorXd::Zero(offset);
}

void NoisePredictor::set_params(const Eigen::VectorXd& params) {
  if (params.size() != params_.size()) {
    throw ShapeError("parameter vector has length " + std::to_string(params.size()) + ", model expects " +
                     std::to_string(params_.size()));
  }
  params_ = params;
}

void NoisePredictor::init_params(std::uint64_t seed) {
  Rng rng(seed, 0x1417);
  params_.setZero();
  for (const auto& layer : layers_) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(layer.in));
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(layer.in) * layer.out; ++i) {
      params_[layer.weight_offset + i] = scale * rng.normal();
    }
  }
}

void NoisePredictor::set_skip(const DiffusionSchedule& schedule, double data_variance) {
  skip_.clear();
  skip_variance_ = 0.0;
  if (!(data_variance > 0.0)) return;
  skip_variance_ = data_variance;
  skip_.assign(static_cast<std::size_t>(schedule.num_timesteps()) + 1, 0.0);
  for (int t = 1; t <= schedule.num_timesteps(); ++t) {
    const double ab = schedule.alpha_bar(t);
    skip_[static_cast<std::size_t>(t)] = std::sqrt(1.0 - ab) / (ab * data_variance + 1.0 - ab);
  }
}

double NoisePredictor::skip_coefficient(int t) const {
  if (skip_.empty()) return 0.0;
  if (t < 1 || static_cast<std::size_t>(t) >= skip_.size()) {
    throw ParameterError("timestep " + std::to_string(t) + " outside the skip schedule");
  }
  return skip_[static_cast<std::size_t>(t)];
}

void NoisePredictor::add_skip(Eigen::MatrixXd& out, const Eigen::MatrixXd& x_t, std::span<const int> ts) const {
  if (skip_.empty()) return;
  for (Eigen::Index b = 0; b < out.cols(); ++b) out.col(b) += skip_coefficient(ts[b]) * x_t.col(b);
}

Eigen::Map<const NoisePredictor::RowMajor> NoisePredictor::weight(std::size_t l) const {
  const auto& layer = layers_[l];
  return {params_.data() + layer.weight_offset, layer.out, layer.in};
}

Eigen::Map<const Eigen::VectorXd> NoisePredictor::bias(std::size_t l) const {
  const auto& layer = layers_[l];
  return {params_.data() + layer.bias_offset, layer.out};
}

Eigen::MatrixXd NoisePredictor::embed_inputs(const Eigen::MatrixXd& x_t, std::span<const int> ts) const {
  if (x_t.rows() != data_dim_) {
    throw ShapeError("predictor input has dimension " + std::to_string(x_t.rows()) + ", expected " +
                     std::to_string(data_dim_));
  }
  if (static_cast<Eigen::Index>(ts.size()) != x_t.cols()) {
    throw ShapeError("timestep count does not match batch size");
  }
  Eigen::MatrixXd in(data_dim_ + embed_dim_, x_t.cols());
  in.topRows(data_dim_) = x_t;
  for (Eigen::Index b = 0; b < x_t.cols(); ++b) {
    if (embed_dim_ > 0) in.col(b).tail(embed_dim_) = timestep_embedding(ts[b], embed_dim_);
  }
  return in;
}

NoisePredictor::Trace NoisePredictor::forward_trace(const Eigen::MatrixXd& x_t, std::span<const int> ts) const {
  Trace trace;
  trace.inputs.reserve(layers_.size());
  Eigen::MatrixXd a = embed_inputs(x_t, ts);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Eigen::MatrixXd z = weight(l) * a;
    z.colwise() += bias(l);
    trace.inputs.push_back(std::move(a));
    if (l + 1 < layers_.size()) {
      a = z.array().tanh().matrix();
    } else {
      add_skip(z, x_t, ts);
      trace.output = std::move(z);
    }
  }
  return trace;
}

Eigen::MatrixXd NoisePredictor::forward_batch(const Eigen::MatrixXd& x_t, std::span<const int> ts) const {
  Eigen::MatrixXd a = embed_inputs(x_t, ts);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Eigen::MatrixXd z = weight(l) * a;
    z.colwise() += bias(l);
    if (l + 1 < layers_.size()) {
      a = z.array().tanh().matrix();
    } else {
      add_skip(z, x_t, ts);
      return z;
    }
  }
  return a;
}

Eigen::VectorXd NoisePredictor::forward(const Eigen::VectorXd& x_t, int t) const {
  const int ts[1] = {t};
  return forward_batch(x_t, ts).col(0);
}

std::vector<Eigen::MatrixXd> NoisePredictor::backprop(const Trace& trace, const Eigen::MatrixXd& grad_out) const {
  if (grad_out.rows() != data_dim_) throw ShapeError("output seed has wrong dimension");
  const Eigen::Index batch = trace.output.cols();
  const bool shared = batch == 1;
  if (!shared && grad_out.cols() != batch) throw ShapeError("seed count must match batch size");

  std::vector<Eigen::MatrixXd> deltas(layers_.size());
  Eigen::MatrixXd g = grad_out;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    deltas[l] = g;
    if (l == 0) break;
    g = weight(l).transpose() * deltas[l];
    const auto& a = trace.inputs[l];  // tanh output of layer l-1
    if (shared) {
      const Eigen::VectorXd slope = (1.0 - a.col(0).array().square()).matrix();
      g = g.array().colwise() * slope.array();
    } else {
      g.array() *= (1.0 - a.array().square());
    }
  }
  return deltas;
}

Eigen::VectorXd NoisePredictor::param_gradient(const Trace& trace, const std::vector<Eigen::MatrixXd>& deltas) const {
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(params_.size());
  const bool shared = trace.output.cols() == 1;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    RowMajor gw;
    if (shared) {
      gw = deltas[l].rowwise().sum() * trace.inputs[l].col(0).transpose();
    } else {
      gw = deltas[l] * trace.inputs[l].transpose();
    }
    Eigen::Map<RowMajor>(grad.data() + layer.weight_offset, layer.out, layer.in) = gw;
    grad.segment(layer.bias_offset, layer.out) = deltas[l].rowwise().sum();
  }
  return grad;
}

Eigen::MatrixXd NoisePredictor::param_jacobian(const Trace& trace, const std::vector<Eigen::MatrixXd>& deltas) const {
  if (trace.output.cols() != 1) throw ShapeError("param_jacobian needs a single-sample trace");
  const Eigen::Index rows = deltas.back().cols();
  Eigen::MatrixXd jac(rows, params_.size());
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    const Eigen::VectorXd& act = trace.inputs[l].col(0);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (int o = 0; o < layer.out; ++o) {
        jac.row(r).segment(layer.weight_offset + static_cast<Eigen::Index>(o) * layer.in, layer.in) =
            deltas[l](o, r) * act.transpose();
      }
      jac.row(r).segment(layer.bias_offset, layer.out) = deltas[l].col(r).transpose();
    }
  }
  return jac;
}

}  // namespace das::ddpm
