#pragma once

#include <vector>

#include <Eigen/Dense>

namespace das::attribution {

/// Damped Gram matrix H = sum_i U_i^T U_i + lambda I, factorized once.
class Kernel {
 public:
  Kernel() = default;

  /// Each block is one sample's feature rows (rows x k). Throws
  /// SingularityError when H has a non-positive or negligible pivot.
  static Kernel build(const std::vector<Eigen::MatrixXd>& blocks, double lambda);
  static Kernel from_matrix(Eigen::MatrixXd H, double lambda);

  Eigen::Index dim() const { return H_.rows(); }
  double lambda() const { return lambda_; }
  const Eigen::MatrixXd& matrix() const { return H_; }
  double smallest_pivot() const { return smallest_pivot_; }

  /// H^{-1} B with one step of iterative refinement.
  Eigen::MatrixXd solve(const Eigen::MatrixXd& B) const;
  Eigen::VectorXd solve(const Eigen::VectorXd& b) const;

 private:
  void factorize();

  Eigen::MatrixXd H_;
  double lambda_ = 0.0;
  double smallest_pivot_ = 0.0;
  Eigen::LDLT<Eigen::MatrixXd> ldlt_;
};

/// Sum of outer products accumulated into a k x k matrix plus lambda I.
Eigen::MatrixXd gram(const std::vector<Eigen::MatrixXd>& blocks, double lambda);

}  // namespace das::attribution
