#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "das/ddpm/schedule.hpp"

namespace das::ddpm {

/// Sinusoidal embedding of an integer timestep: pairs (sin(w_j), cos(w_j))
/// with w_j = pi 2^j t / 1000, j < dim/2. `dim` must be even.
Eigen::VectorXd timestep_embedding(int t, int dim);

/// Fully connected noise predictor eps_theta(x_t, t). The input is x_t
/// concatenated with a sinusoidal timestep embedding; hidden layers use tanh,
/// the output layer is linear. All parameters live in one flat vector laid
/// out layer by layer as [W (row-major, out x in), b].
///
/// An optional parameter-free skip adds c(t) x_t to the output, where
/// c(t) = sqrt(1 - ab_t) / (ab_t v + 1 - ab_t) is the posterior-mean noise
/// predictor for data with per-coordinate variance v. Without it a narrow
/// network has to carry x_t through its hidden layers.
class NoisePredictor {
 public:
  struct Layer {
    int in = 0;
    int out = 0;
    Eigen::Index weight_offset = 0;
    Eigen::Index bias_offset = 0;
  };

  /// Activations recorded by a forward pass. `inputs[l]` is the input of
  /// layer l with one column per batch element.
  struct Trace {
    std::vector<Eigen::MatrixXd> inputs;
    Eigen::MatrixXd output;
  };

  NoisePredictor() = default;
  NoisePredictor(int data_dim, std::vector<int> hidden_sizes, int embed_dim = 8);

  int data_dim() const { return data_dim_; }
  int embed_dim() const { return embed_dim_; }
  /// Full layer-size list: [data_dim + embed_dim, hidden..., data_dim].
  const std::vector<int>& layer_sizes() const { return sizes_; }
  const std::vector<Layer>& layers() const { return layers_; }
  Eigen::Index num_params() const { return params_.size(); }

  const Eigen::VectorXd& params() const { return params_; }
  Eigen::VectorXd& params() { return params_; }
  void set_params(const Eigen::VectorXd& params);

  /// Enables the skip term for timesteps 1..T of `schedule`; v <= 0 disables it.
  void set_skip(const DiffusionSchedule& schedule, double data_variance);
  bool has_skip() const { return !skip_.empty(); }
  double skip_variance() const { return skip_variance_; }
  double skip_coefficient(int t) const;

  /// Scaled normal weights (std 1/sqrt(fan_in)) and zero biases.
  void init_params(std::uint64_t seed);

  Eigen::VectorXd forward(const Eigen::VectorXd& x_t, int t) const;
  /// Column b of `x_t` is evaluated at timestep `ts[b]`.
  Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& x_t, std::span<const int> ts) const;
  Trace forward_trace(const Eigen::MatrixXd& x_t, std::span<const int> ts) const;

  /// Back-propagates output seeds through the network. `grad_out` is
  /// (data_dim x R). When the trace holds a single sample, all R seeds share
  /// its activations (Jacobian rows); otherwise R must equal the batch size.
  /// Returns one (out_l x R) delta matrix per layer.
  std::vector<Eigen::MatrixXd> backprop(const Trace& trace, const Eigen::MatrixXd& grad_out) const;

  /// Sum over columns of the per-column parameter gradients.
  Eigen::VectorXd param_gradient(const Trace& trace, const std::vector<Eigen::MatrixXd>& deltas) const;

  /// Per-seed parameter gradients for a single-sample trace, one row per seed.
  Eigen::MatrixXd param_jacobian(const Trace& trace, const std::vector<Eigen::MatrixXd>& deltas) const;

  friend bool operator==(const NoisePredictor& a, const NoisePredictor& b) {
    return a.sizes_ == b.sizes_ && a.embed_dim_ == b.embed_dim_ && a.skip_ == b.skip_ &&
           a.params_.size() == b.params_.size() && a.params_ == b.params_;
  }

 private:
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const RowMajor> weight(std::size_t l) const;
  Eigen::Map<const Eigen::VectorXd> bias(std::size_t l) const;
  Eigen::MatrixXd embed_inputs(const Eigen::MatrixXd& x_t, std::span<const int> ts) const;
  void add_skip(Eigen::MatrixXd& out, const Eigen::MatrixXd& x_t, std::span<const int> ts) const;

  int data_dim_ = 0;
  int embed_dim_ = 0;
  std::vector<int> sizes_;
  std::vector<Layer> layers_;
  Eigen::VectorXd params_;
  double skip_variance_ = 0.0;
  std::vector<double> skip_;  // indexed by t, empty when disabled
};

}  // namespace das::ddpm
