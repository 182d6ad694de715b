#pragma once

#include <vector>

#include <Eigen/Dense>

namespace das::eval {

/// Average ranks (1-based); tied values share the mean of their positions.
Eigen::VectorXd mid_ranks(const Eigen::VectorXd& v);

/// Throws UndefinedCorrelationError if either input is constant, ShapeError
/// on length mismatch or fewer than two values.
double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b);
double spearman(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

struct Summary {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation, 0 for a single value
  double sem = 0.0;
  std::size_t count = 0;
};
Summary summarize(const std::vector<double>& values);

}  // namespace das::eval
