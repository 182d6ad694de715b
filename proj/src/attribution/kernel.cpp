#include "das/attribution/kernel.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "das/errors.hpp"

namespace das::attribution {

Eigen::MatrixXd gram(const std::vector<Eigen::MatrixXd>& blocks, double lambda) {
  if (blocks.empty()) throw ShapeError("kernel needs at least one feature block");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ParameterError("damping lambda must be finite and >= 0");
  const Eigen::Index k = blocks[0].cols();
  Eigen::Index total_rows = 0;
  for (const auto& b : blocks) {
    if (b.cols() != k) throw ShapeError("feature blocks disagree on k");
    total_rows += b.rows();
  }
  // Stack once so the product runs as a single rank update.
  Eigen::MatrixXd stacked(total_rows, k);
  Eigen::Index row = 0;
  for (const auto& b : blocks) {
    stacked.middleRows(row, b.rows()) = b;
    row += b.rows();
  }
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(k, k);
  H.selfadjointView<Eigen::Lower>().rankUpdate(stacked.transpose());
  H.triangularView<Eigen::StrictlyUpper>() = H.transpose();
  H.diagonal().array() += lambda;
  return H;
}

Kernel Kernel::build(const std::vector<Eigen::MatrixXd>& blocks, double lambda) {
  return from_matrix(gram(blocks, lambda), lambda);
}

Kernel Kernel::from_matrix(Eigen::MatrixXd H, double lambda) {
  if (H.rows() != H.cols() || H.rows() == 0) throw ShapeError("kernel matrix must be square and non-empty");
  Kernel kernel;
  kernel.H_ = std::move(H);
  kernel.lambda_ = lambda;
  kernel.factorize();
  return kernel;
}

void Kernel::factorize() {
  ldlt_.compute(H_);
  const Eigen::VectorXd pivots = ldlt_.vectorD();
  smallest_pivot_ = pivots.minCoeff();
  const double largest = pivots.cwiseAbs().maxCoeff();
  const double floor = largest * static_cast<double>(H_.rows()) * std::numeric_limits<double>::epsilon();
  if (ldlt_.info() != Eigen::Success || !(smallest_pivot_ > floor)) {
    std::ostringstream msg;
    msg << "kernel matrix is singular at lambda = " << lambda_ << " (smallest pivot " << smallest_pivot_
        << ", largest " << largest << "); increase lambda";
    throw SingularityError(msg.str(), smallest_pivot_);
  }
}

Eigen::MatrixXd Kernel::solve(const Eigen::MatrixXd& B) const {
  if (B.rows() != H_.rows()) throw ShapeError("right-hand side has the wrong length for the kernel");
  Eigen::MatrixXd X = ldlt_.solve(B);
  X += ldlt_.solve(B - H_ * X);
  return X;
}

Eigen::VectorXd Kernel::solve(const Eigen::VectorXd& b) const { return solve(Eigen::MatrixXd(b)).col(0); }

}  // namespace das::attribution
