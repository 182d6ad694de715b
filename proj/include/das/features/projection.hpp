#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

namespace das::features {

struct ProjectionSpec {
  int k = 0;
  std::uint64_t seed = 0;
  bool scale = true;      // multiply entries by 1/sqrt(k)
  bool identity = false;  // debug: P = I on the selected coordinates, needs k = p_effective
  /// Optional parameter subset; empty selects every parameter.
  std::vector<std::uint8_t> mask;
};

/// Random Gaussian sketch P (p_effective x k). Entry (e, j) is a function of
/// (seed, e, j) only, so blocks are regenerated on demand instead of stored.
/// Small sketches are additionally kept as a dense p x k matrix with zero
/// rows for parameters outside the mask.
class Projection {
 public:
  Projection() = default;
  Projection(ProjectionSpec spec, Eigen::Index num_params);

  const ProjectionSpec& spec() const { return spec_; }
  int k() const { return spec_.k; }
  Eigen::Index input_dim() const { return p_; }
  Eigen::Index effective_dim() const { return static_cast<Eigen::Index>(selected_.size()); }
  /// Parameter index of each effective coordinate, increasing.
  const std::vector<Eigen::Index>& selected() const { return selected_; }

  bool identity() const { return spec_.identity; }
  bool has_dense() const { return dense_.size() > 0; }
  /// p x k, zero rows outside the mask. Only valid when has_dense().
  const Eigen::MatrixXd& dense() const { return dense_; }

  /// Rows [first, first + count) of P over effective coordinates, count x k.
  Eigen::MatrixXd block(Eigen::Index first, Eigen::Index count) const;

  /// P^T V for V of shape p x m.
  Eigen::MatrixXd apply(const Eigen::MatrixXd& V) const;
  Eigen::VectorXd apply(const Eigen::VectorXd& v) const;
  /// Projects each row of an R x p matrix, giving R x k.
  Eigen::MatrixXd project_rows(const Eigen::MatrixXd& rows) const;

 private:
  Eigen::MatrixXd gather(const Eigen::MatrixXd& V) const;

  ProjectionSpec spec_;
  Eigen::Index p_ = 0;
  std::uint64_t stream_ = 0;
  double scale_ = 1.0;
  std::vector<Eigen::Index> selected_;
  Eigen::MatrixXd dense_;
};

/// Validates the spec against p and builds the handle. Throws
/// ParameterError when k is outside [1, p_effective], when the mask length
/// differs from p, or when identity mode is requested with k != p_effective.
Projection make_projection(const ProjectionSpec& spec, Eigen::Index num_params);

}  // namespace das::features
