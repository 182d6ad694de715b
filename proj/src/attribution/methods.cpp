#include "das/attribution/methods.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "das/binary_io.hpp"
#include "das/errors.hpp"
#include "das/parallel.hpp"

namespace das::attribution {
namespace {

// Smallest eigenvalue of I - U H^{-1} U^T treated as zero.
constexpr double kLeverageTol = 1e-12;

struct NameEntry {
  const char* name;
  Method method;
  features::Scalarizer output;
};

constexpr NameEntry kNames[] = {
    {"das", Method::kDas, features::Scalarizer::kSimpleLoss},
    {"das-t", Method::kDasPerTimestep, features::Scalarizer::kSimpleLoss},
    {"trak", Method::kTrak, features::Scalarizer::kSimpleLoss},
    {"dtrak-loss", Method::kDtrak, features::Scalarizer::kSimpleLoss},
    {"dtrak-square-norm", Method::kDtrak, features::Scalarizer::kSquareNorm},
    {"dtrak-output-avg", Method::kDtrak, features::Scalarizer::kOutputMean},
    {"journey-trak", Method::kJourneyTrak, features::Scalarizer::kSimpleLoss},
    {"relative-if", Method::kRelativeIf, features::Scalarizer::kSimpleLoss},
    {"renormalized-if", Method::kRenormalizedIf, features::Scalarizer::kSimpleLoss},
    {"grad-dot", Method::kGradientDot, features::Scalarizer::kSimpleLoss},
    {"grad-cos", Method::kGradientCos, features::Scalarizer::kSimpleLoss},
    {"tracincp", Method::kTracInCp, features::Scalarizer::kSimpleLoss},
    {"gas", Method::kGas, features::Scalarizer::kSimpleLoss},
    {"raw-dot", Method::kRawDot, features::Scalarizer::kSimpleLoss},
    {"raw-cos", Method::kRawCos, features::Scalarizer::kSimpleLoss},
};

// Solves (I - U A) x = r for symmetric I - U A; returns false at leverage one.
bool solve_denominator(const Eigen::MatrixXd& D, const Eigen::VectorXd& r, Eigen::VectorXd& x) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (D + D.transpose()));
  const Eigen::VectorXd& w = eig.eigenvalues();
  if (!(w.minCoeff() > kLeverageTol)) return false;
  x = eig.eigenvectors() * ((eig.eigenvectors().transpose() * r).array() / w.array()).matrix();
  return true;
}

std::vector<Eigen::MatrixXd> blocks_of(const std::vector<NewtonRows>& train) {
  std::vector<Eigen::MatrixXd> blocks;
  blocks.reserve(train.size());
  for (const auto& t : train) {
    if (t.U.rows() != t.r.size()) throw ShapeError("Newton rows and residual lengths differ");
    blocks.push_back(t.U);
  }
  return blocks;
}

}  // namespace

std::string method_name(const MethodSpec& spec) {
  if (spec.das_scalarized && spec.method == Method::kDas) return "das-loss";
  if (spec.das_scalarized && spec.method == Method::kDasPerTimestep) return "das-t-loss";
  for (const auto& e : kNames) {
    if (e.method == spec.method && (spec.method != Method::kDtrak || e.output == spec.dtrak_output)) return e.name;
  }
  if (spec.method == Method::kDtrak) return "dtrak-output-sum";
  return "?";
}

MethodSpec parse_method(const std::string& name) {
  for (const auto& e : kNames) {
    if (name == e.name) {
      MethodSpec spec;
      spec.method = e.method;
      spec.dtrak_output = e.output;
      return spec;
    }
  }
  if (name == "das-loss" || name == "das-t-loss") {
    MethodSpec spec;
    spec.method = name == "das-loss" ? Method::kDas : Method::kDasPerTimestep;
    spec.das_scalarized = true;
    return spec;
  }
  if (name == "dtrak-output-sum") {
    MethodSpec spec;
    spec.method = Method::kDtrak;
    spec.dtrak_output = features::Scalarizer::kOutputSum;
    return spec;
  }
  std::string known;
  for (const auto& e : kNames) known += std::string(known.empty() ? "" : ", ") + e.name;
  known += ", das-loss, das-t-loss, dtrak-output-sum";
  throw ParameterError("unknown method '" + name + "' (known: " + known + ")");
}

FeatureMode required_mode(const MethodSpec& spec) {
  switch (spec.method) {
    case Method::kDas:
    case Method::kDasPerTimestep:
      return spec.das_scalarized ? features::kLossGradientMode : features::kJacobianMode;
    case Method::kDtrak:
      return {features::FeatureKind::kScalarizedGradient, spec.dtrak_output};
    default:
      return features::kLossGradientMode;
  }
}

bool uses_kernel(Method method) {
  switch (method) {
    case Method::kDas:
    case Method::kDasPerTimestep:
    case Method::kTrak:
    case Method::kDtrak:
    case Method::kJourneyTrak:
    case Method::kRelativeIf:
    case Method::kRenormalizedIf:
      return true;
    default:
      return false;
  }
}

std::vector<int> ranks(const Eigen::VectorXd& scores) {
  std::vector<std::size_t> order(static_cast<std::size_t>(scores.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[static_cast<Eigen::Index>(a)] > scores[static_cast<Eigen::Index>(b)];
  });
  std::vector<int> out(order.size());
  for (std::size_t pos = 0; pos < order.size(); ++pos) out[order[pos]] = static_cast<int>(pos) + 1;
  return out;
}

std::uint64_t fingerprint(const std::vector<AveragedFeatures>& fs) {
  ByteWriter w;
  w.u64(fs.size());
  for (const auto& f : fs) {
    w.i64(f.id);
    w.u64(static_cast<std::uint64_t>(f.g.rows()));
    w.u64(static_cast<std::uint64_t>(f.g.cols()));
    w.f64s(f.g.data(), static_cast<std::size_t>(f.g.size()));
    w.f64s(f.r.data(), static_cast<std::size_t>(f.r.size()));
    w.u32(f.normalized ? 1 : 0);
  }
  return fnv1a(w.bytes());
}

NewtonRows newton_rows(const AveragedFeatures& f, FeatureMode mode) {
  if (mode.kind == features::FeatureKind::kExactJacobian) {
    if (f.g.rows() != f.r.size()) throw ShapeError("Jacobian features need one row per residual coordinate");
    return {f.g, f.r};
  }
  if (f.g.rows() != 1) throw ShapeError("scalarized features must have one row");
  return {f.g, Eigen::VectorXd::Constant(1, f.r.norm())};
}

NewtonRows stacked_rows(const SampleFeatures& f) {
  if (f.blocks.empty()) throw ShapeError("sample has no feature entries");
  Eigen::Index rows = 0;
  for (const auto& b : f.blocks) rows += b.rows();
  NewtonRows out{Eigen::MatrixXd(rows, f.blocks[0].cols()), Eigen::VectorXd(rows)};
  Eigen::Index at = 0;
  for (std::size_t j = 0; j < f.blocks.size(); ++j) {
    const auto& b = f.blocks[j];
    out.U.middleRows(at, b.rows()) = b;
    if (f.residuals[j].size() == b.rows()) {
      out.r.segment(at, b.rows()) = f.residuals[j];
    } else if (b.rows() == 1) {
      out.r[at] = f.residuals[j].norm();
    } else {
      throw ShapeError("residual length does not match feature rows");
    }
    at += b.rows();
  }
  return out;
}

Eigen::VectorXd newton_loo_delta(const std::vector<NewtonRows>& train, double lambda, std::size_t i) {
  if (i >= train.size()) throw IndexError("sample index " + std::to_string(i) + " out of range");
  const Kernel kernel = Kernel::build(blocks_of(train), lambda);
  const auto& t = train[i];
  const Eigen::MatrixXd A = kernel.solve(Eigen::MatrixXd(t.U.transpose()));
  const Eigen::MatrixXd D = Eigen::MatrixXd::Identity(t.U.rows(), t.U.rows()) - t.U * A;
  Eigen::VectorXd x;
  if (!solve_denominator(D, t.r, x)) {
    throw SingularityError("sample " + std::to_string(i) + " has leverage one: removing it leaves the damped kernel "
                           "singular at lambda = " + std::to_string(lambda), 0.0);
  }
  return A * x;
}

DasScorer::DasScorer(const std::vector<NewtonRows>& train, double lambda, int jobs)
    : kernel_(Kernel::build(blocks_of(train), lambda)),
      deltas_(Eigen::MatrixXd::Zero(kernel_.dim(), static_cast<Eigen::Index>(train.size()))),
      leverage_one_(train.size(), 0) {
  parallel_for(train.size(), jobs, [&](std::size_t i) {
    const auto& t = train[i];
    const Eigen::MatrixXd A = kernel_.solve(Eigen::MatrixXd(t.U.transpose()));
    const Eigen::MatrixXd D = Eigen::MatrixXd::Identity(t.U.rows(), t.U.rows()) - t.U * A;
    Eigen::VectorXd x;
    if (solve_denominator(D, t.r, x)) {
      deltas_.col(static_cast<Eigen::Index>(i)) = A * x;
    } else {
      leverage_one_[i] = 1;
    }
  });
}

Eigen::VectorXd DasScorer::score(const Eigen::MatrixXd& target) const {
  if (target.cols() != deltas_.rows()) throw ShapeError("target features have the wrong k");
  return (target * deltas_).colwise().squaredNorm().transpose();
}

AttributionResult das_score(const AveragedFeatures& target, const std::vector<AveragedFeatures>& train,
                            FeatureMode mode, double lambda) {
  std::vector<NewtonRows> rows;
  rows.reserve(train.size());
  for (const auto& f : train) rows.push_back(newton_rows(f, mode));
  const DasScorer scorer(rows, lambda);
  AttributionResult result;
  result.target_id = target.id;
  result.scores = scorer.score(target.g);
  result.method = "das";
  result.lambda = lambda;
  result.fingerprint = fingerprint(train);
  result.leverage_one = scorer.leverage_one();
  return result;
}

AttributionResult das_per_timestep(const SampleFeatures& target, const std::vector<SampleFeatures>& train, int t,
                                   double lambda) {
  std::vector<std::size_t> entries;
  for (std::size_t j = 0; j < target.timesteps.size(); ++j) {
    if (target.timesteps[j] == t) entries.push_back(j);
  }
  if (entries.empty()) throw ConfigError("timestep " + std::to_string(t) + " is not among the extracted timesteps");

  AttributionResult result;
  result.target_id = target.id;
  result.scores = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(train.size()));
  result.method = "das-t";
  result.lambda = lambda;
  result.timestep_budget = 1;
  result.leverage_one.assign(train.size(), 0);
  for (std::size_t j : entries) {
    std::vector<NewtonRows> rows;
    rows.reserve(train.size());
    for (const auto& f : train) {
      if (j >= f.timesteps.size() || f.timesteps[j] != t) {
        throw ShapeError("training sample " + std::to_string(f.id) + " does not share the target's timestep list");
      }
      rows.push_back(stacked_rows(features::select_entries(f, {j})));
    }
    const DasScorer scorer(rows, lambda);
    result.scores += scorer.score(target.blocks[j]);
    for (std::size_t i = 0; i < train.size(); ++i) result.leverage_one[i] |= scorer.leverage_one()[i];
  }
  result.scores /= static_cast<double>(entries.size());
  return result;
}

KernelScorer::KernelScorer(const std::vector<Eigen::VectorXd>& phi, double lambda) {
  if (phi.empty()) throw ShapeError("kernel needs at least one training feature");
  std::vector<Eigen::MatrixXd> rows;
  rows.reserve(phi.size());
  Eigen::MatrixXd Phi_t(phi[0].size(), static_cast<Eigen::Index>(phi.size()));
  for (std::size_t i = 0; i < phi.size(); ++i) {
    if (phi[i].size() != phi[0].size()) throw ShapeError("training features disagree on k");
    rows.emplace_back(phi[i].transpose());
    Phi_t.col(static_cast<Eigen::Index>(i)) = phi[i];
  }
  kernel_ = Kernel::build(rows, lambda);
  solved_ = kernel_.solve(Phi_t);
  solved_norms_ = solved_.colwise().norm().transpose();
  feature_norms_ = Phi_t.colwise().norm().transpose();
}

Eigen::VectorXd feature_vector(const AveragedFeatures& f) {
  if (f.g.rows() != 1) {
    throw ConfigError("sample " + std::to_string(f.id) + " has " + std::to_string(f.g.rows()) +
                      "-row features; this method needs scalarized-gradient features");
  }
  return f.g.row(0).transpose();
}

std::vector<Eigen::VectorXd> feature_vectors(const std::vector<AveragedFeatures>& fs) {
  std::vector<Eigen::VectorXd> out;
  out.reserve(fs.size());
  for (const auto& f : fs) out.push_back(feature_vector(f));
  return out;
}

Eigen::VectorXd trak_residuals(const std::vector<AveragedFeatures>& train) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(train.size()));
  for (std::size_t i = 0; i < train.size(); ++i) out[static_cast<Eigen::Index>(i)] = train[i].r.norm();
  return out;
}

void require_mode(const std::string& method, FeatureMode have, FeatureMode want) {
  if (have.kind != want.kind || (want.kind == features::FeatureKind::kScalarizedGradient &&
                                 have.scalarizer != want.scalarizer)) {
    throw ConfigError(method + " needs '" + features::to_string(want) + "' features, got '" +
                      features::to_string(have) + "'");
  }
}

Eigen::VectorXd trak(const KernelScorer& k, const Eigen::VectorXd& target, const Eigen::VectorXd& residuals) {
  return k.inner(target).cwiseProduct(residuals);
}

Eigen::VectorXd dtrak(const KernelScorer& k, const Eigen::VectorXd& target) { return k.inner(target); }

namespace {

Eigen::VectorXd safe_divide(const Eigen::VectorXd& num, const Eigen::VectorXd& den) {
  return (den.array() > 0.0).select(num.array() / den.array(), 0.0).matrix();
}

}  // namespace

Eigen::VectorXd relative_if(const KernelScorer& k, const Eigen::VectorXd& target, const Eigen::VectorXd& residuals) {
  return safe_divide(trak(k, target, residuals), k.solved_norms());
}

Eigen::VectorXd renormalized_if(const KernelScorer& k, const Eigen::VectorXd& target,
                                const Eigen::VectorXd& residuals) {
  return safe_divide(trak(k, target, residuals), k.feature_norms());
}

Eigen::VectorXd journey_trak(const KernelScorer& k, const std::vector<Eigen::VectorXd>& trajectory_targets,
                             const Eigen::VectorXd& residuals) {
  if (trajectory_targets.empty()) throw ConfigError("journey-trak needs a recorded sampling trajectory");
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(residuals.size());
  for (const auto& t : trajectory_targets) sum += trak(k, t, residuals);
  return sum / static_cast<double>(trajectory_targets.size());
}

Eigen::VectorXd dot_scores(const Eigen::VectorXd& target, const std::vector<Eigen::VectorXd>& train) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(train.size()));
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (train[i].size() != target.size()) throw ShapeError("feature length mismatch");
    out[static_cast<Eigen::Index>(i)] = target.dot(train[i]);
  }
  return out;
}

Eigen::VectorXd cos_scores(const Eigen::VectorXd& target, const std::vector<Eigen::VectorXd>& train) {
  Eigen::VectorXd out = dot_scores(target, train);
  const double tn = target.norm();
  for (std::size_t i = 0; i < train.size(); ++i) {
    const double den = tn * train[i].norm();
    out[static_cast<Eigen::Index>(i)] = den > 0.0 ? out[static_cast<Eigen::Index>(i)] / den : 0.0;
  }
  return out;
}

namespace {

template <typename Fn>
Eigen::VectorXd checkpoint_mean(const std::vector<Eigen::VectorXd>& target,
                                const std::vector<std::vector<Eigen::VectorXd>>& train, Fn&& fn) {
  if (target.empty() || target.size() != train.size()) {
    throw ConfigError("checkpoint methods need the same non-empty checkpoint list for target and training features");
  }
  Eigen::VectorXd sum = fn(target[0], train[0]);
  for (std::size_t c = 1; c < target.size(); ++c) sum += fn(target[c], train[c]);
  return sum / static_cast<double>(target.size());
}

}  // namespace

Eigen::VectorXd tracincp(const std::vector<Eigen::VectorXd>& target_per_ckpt,
                         const std::vector<std::vector<Eigen::VectorXd>>& train_per_ckpt) {
  return checkpoint_mean(target_per_ckpt, train_per_ckpt, dot_scores);
}

Eigen::VectorXd gas(const std::vector<Eigen::VectorXd>& target_per_ckpt,
                    const std::vector<std::vector<Eigen::VectorXd>>& train_per_ckpt) {
  return checkpoint_mean(target_per_ckpt, train_per_ckpt, cos_scores);
}

std::vector<Eigen::VectorXd> raw_vectors(const ddpm::Dataset& data) {
  std::vector<Eigen::VectorXd> out;
  out.reserve(data.size());
  for (const auto& p : data.points) out.push_back(p.x0);
  return out;
}

std::vector<std::size_t> candidate_filter(const Eigen::VectorXd& target, const ddpm::Dataset& train, std::size_t m) {
  if (m < 1 || m > train.size()) {
    throw ParameterError("candidate count must lie in [1, " + std::to_string(train.size()) + "]");
  }
  const Eigen::VectorXd sim = cos_scores(target, raw_vectors(train));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return sim[static_cast<Eigen::Index>(a)] > sim[static_cast<Eigen::Index>(b)];
  });
  order.resize(m);
  return order;
}

Eigen::VectorXd apply_filter(const Eigen::VectorXd& scores, const std::vector<std::size_t>& candidates) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(scores.size());
  for (std::size_t i : candidates) {
    if (static_cast<Eigen::Index>(i) >= scores.size()) throw IndexError("candidate index out of range");
    out[static_cast<Eigen::Index>(i)] = scores[static_cast<Eigen::Index>(i)];
  }
  return out;
}

ddpm::NoisePredictor true_loo_oracle(const ddpm::Dataset& data, std::size_t i, const ddpm::TrainConfig& config) {
  if (i >= data.size()) {
    throw IndexError("sample index " + std::to_string(i) + " out of range for " + std::to_string(data.size()) +
                     " training points");
  }
  return ddpm::train(ddpm::without(data, i), config).model;
}

}  // namespace das::attribution
