#include "das/features/projection.hpp"

#include <cmath>
#include <string>

#include "das/errors.hpp"
#include "das/rng.hpp"

namespace das::features {
namespace {

// Keep a dense copy of P when it fits in 64 MiB.
constexpr Eigen::Index kDenseEntries = Eigen::Index{1} << 23;
constexpr Eigen::Index kBlockRows = 256;

}  // namespace

Projection::Projection(ProjectionSpec spec, Eigen::Index num_params) : spec_(std::move(spec)), p_(num_params) {
  if (num_params < 1) throw ParameterError("projection needs a positive parameter count");
  if (!spec_.mask.empty() && static_cast<Eigen::Index>(spec_.mask.size()) != num_params) {
    throw ParameterError("parameter mask has length " + std::to_string(spec_.mask.size()) + ", model has " +
                         std::to_string(num_params) + " parameters");
  }
  for (Eigen::Index i = 0; i < num_params; ++i) {
    if (spec_.mask.empty() || spec_.mask[static_cast<std::size_t>(i)]) selected_.push_back(i);
  }
  const auto p_eff = effective_dim();
  if (spec_.k < 1 || spec_.k > p_eff) {
    throw ParameterError("projection dimension k = " + std::to_string(spec_.k) + " must lie in [1, " +
                         std::to_string(p_eff) + "]");
  }
  if (spec_.identity && spec_.k != p_eff) {
    throw ParameterError("identity projection needs k equal to the number of selected parameters (" +
                         std::to_string(p_eff) + ")");
  }
  stream_ = stream_seed(spec_.seed, 0x9a0c);
  scale_ = spec_.scale ? 1.0 / std::sqrt(static_cast<double>(spec_.k)) : 1.0;

  if (!spec_.identity && p_ * spec_.k <= kDenseEntries) {
    dense_ = Eigen::MatrixXd::Zero(p_, spec_.k);
    for (Eigen::Index first = 0; first < p_eff; first += kBlockRows) {
      const Eigen::Index count = std::min(kBlockRows, p_eff - first);
      const Eigen::MatrixXd b = block(first, count);
      for (Eigen::Index e = 0; e < count; ++e) dense_.row(selected_[static_cast<std::size_t>(first + e)]) = b.row(e);
    }
  }
}

Eigen::MatrixXd Projection::block(Eigen::Index first, Eigen::Index count) const {
  const Eigen::Index k = spec_.k;
  if (spec_.identity) {
    Eigen::MatrixXd b = Eigen::MatrixXd::Zero(count, k);
    for (Eigen::Index e = 0; e < count; ++e) b(e, first + e) = 1.0;
    return b;
  }
  // Row-major generation order: entry (e, j) has counter e * k + j.
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> b(count, k);
  counter_normals(stream_, static_cast<std::uint64_t>(first * k), static_cast<std::size_t>(count * k), b.data());
  b *= scale_;
  return b;
}

Eigen::MatrixXd Projection::gather(const Eigen::MatrixXd& V) const {
  if (V.rows() != p_) {
    throw ShapeError("projection input has " + std::to_string(V.rows()) + " rows, expected " + std::to_string(p_));
  }
  if (static_cast<Eigen::Index>(selected_.size()) == p_) return V;
  Eigen::MatrixXd out(effective_dim(), V.cols());
  for (std::size_t e = 0; e < selected_.size(); ++e) out.row(static_cast<Eigen::Index>(e)) = V.row(selected_[e]);
  return out;
}

Eigen::MatrixXd Projection::apply(const Eigen::MatrixXd& V) const {
  if (has_dense()) {
    if (V.rows() != p_) throw ShapeError("projection input has the wrong length");
    return dense_.transpose() * V;
  }
  const Eigen::MatrixXd sel = gather(V);
  if (spec_.identity) return sel;
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(spec_.k, V.cols());
  const Eigen::Index p_eff = effective_dim();
  for (Eigen::Index first = 0; first < p_eff; first += kBlockRows) {
    const Eigen::Index count = std::min(kBlockRows, p_eff - first);
    out.noalias() += block(first, count).transpose() * sel.middleRows(first, count);
  }
  return out;
}

Eigen::VectorXd Projection::apply(const Eigen::VectorXd& v) const {
  return apply(Eigen::MatrixXd(v)).col(0);
}

Eigen::MatrixXd Projection::project_rows(const Eigen::MatrixXd& rows) const {
  return apply(Eigen::MatrixXd(rows.transpose())).transpose();
}

Projection make_projection(const ProjectionSpec& spec, Eigen::Index num_params) {
  return Projection(spec, num_params);
}

}  // namespace das::features
