#include "das/eval/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "das/errors.hpp"

namespace das::eval {

Eigen::VectorXd mid_ranks(const Eigen::VectorXd& v) {
  const auto n = static_cast<std::size_t>(v.size());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return v[static_cast<Eigen::Index>(a)] < v[static_cast<Eigen::Index>(b)];
  });
  Eigen::VectorXd ranks(v.size());
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i + 1;
    while (j < n && v[static_cast<Eigen::Index>(order[j])] == v[static_cast<Eigen::Index>(order[i])]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j + 1);  // mean of positions i+1 .. j
    for (std::size_t m = i; m < j; ++m) ranks[static_cast<Eigen::Index>(order[m])] = avg;
    i = j;
  }
  return ranks;
}

double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) throw ShapeError("correlation inputs differ in length");
  if (a.size() < 2) throw ShapeError("correlation needs at least two values");
  const Eigen::ArrayXd x = a.array() - a.mean();
  const Eigen::ArrayXd y = b.array() - b.mean();
  const double sxx = x.square().sum();
  const double syy = y.square().sum();
  if (!(sxx > 0.0) || !(syy > 0.0)) throw UndefinedCorrelationError("correlation of a constant sequence is undefined");
  const double r = (x * y).sum() / std::sqrt(sxx * syy);
  return std::clamp(r, -1.0, 1.0);
}

double spearman(const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return pearson(mid_ranks(a), mid_ranks(b)); }

Summary summarize(const std::vector<double>& values) {
  Summary s;
  s.count = values.size();
  if (values.empty()) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
    s.sem = s.stddev / std::sqrt(static_cast<double>(values.size()));
  }
  return s;
}

}  // namespace das::eval
