#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "das/attribution/kernel.hpp"
#include "das/ddpm/dataset.hpp"
#include "das/ddpm/predictor.hpp"
#include "das/ddpm/train.hpp"
#include "das/features/features.hpp"

namespace das::attribution {

using features::AveragedFeatures;
using features::FeatureMode;
using features::SampleFeatures;

enum class Method {
  kDas,
  kDasPerTimestep,
  kTrak,
  kDtrak,
  kJourneyTrak,
  kRelativeIf,
  kRenormalizedIf,
  kGradientDot,
  kGradientCos,
  kTracInCp,
  kGas,
  kRawDot,
  kRawCos,
};

struct MethodSpec {
  Method method = Method::kDas;
  features::Scalarizer dtrak_output = features::Scalarizer::kSquareNorm;  // D-TRAK only
  bool das_scalarized = false;  // DAS on simple-loss gradients instead of Jacobians
  double lambda = 1e-2;
  int inference_steps = 50;  // Journey TRAK
  int num_checkpoints = 4;   // TracInCP, GAS
};

/// Stable names: das, das-t, das-loss, das-t-loss, trak, dtrak-loss, dtrak-square-norm,
/// dtrak-output-avg, journey-trak, relative-if, renormalized-if, grad-dot,
/// grad-cos, tracincp, gas, raw-dot, raw-cos.
std::string method_name(const MethodSpec& spec);
MethodSpec parse_method(const std::string& name);

/// Feature mode a method consumes (ignored by the raw-similarity methods).
FeatureMode required_mode(const MethodSpec& spec);
bool uses_kernel(Method method);

struct AttributionResult {
  int target_id = 0;
  Eigen::VectorXd scores;  // one per training sample, in training order
  std::string method;
  double lambda = 0.0;
  int timestep_budget = 0;
  std::uint64_t fingerprint = 0;
  /// DAS only: samples whose Woodbury denominator is singular; their score is 0.
  std::vector<std::uint8_t> leverage_one;
};

/// 1-based ranks by decreasing score, ties broken by training index.
std::vector<int> ranks(const Eigen::VectorXd& scores);

/// Fingerprint of averaged features (ids, shapes and values).
std::uint64_t fingerprint(const std::vector<AveragedFeatures>& features);

// ---------------------------------------------------------------------------
// DAS

/// One training sample as seen by the Newton step: feature rows U (m x k)
/// and the matching residual (m).
struct NewtonRows {
  Eigen::MatrixXd U;
  Eigen::VectorXd r;
};

/// Averaged features as Newton rows. In ExactJacobian mode U = g (d x k) and
/// r = r_bar; in ScalarizedGradient mode U = g (1 x k) and r = ||r_bar||.
NewtonRows newton_rows(const AveragedFeatures& f, FeatureMode mode);
/// Every entry of a sample stacked into one block (per-draw Newton step).
NewtonRows stacked_rows(const SampleFeatures& f);

/// Leave-one-out parameter change theta* - theta*_{-i} of one damped Newton
/// step, via Woodbury on the full kernel:
///   delta_i = H^{-1} U_i^T (I - U_i H^{-1} U_i^T)^{-1} r_i.
/// Throws SingularityError when sample i has leverage one.
Eigen::VectorXd newton_loo_delta(const std::vector<NewtonRows>& train, double lambda, std::size_t i);

/// Precomputes every delta_i once; scoring a target is then one product.
class DasScorer {
 public:
  DasScorer(const std::vector<NewtonRows>& train, double lambda, int jobs = 1);

  const Kernel& kernel() const { return kernel_; }
  /// k x n, column i = delta_i (zero for leverage-one samples).
  const Eigen::MatrixXd& deltas() const { return deltas_; }
  const std::vector<std::uint8_t>& leverage_one() const { return leverage_one_; }

  /// ||G_target delta_i||^2 for every i; G_target is (rows x k).
  Eigen::VectorXd score(const Eigen::MatrixXd& target) const;

 private:
  Kernel kernel_;
  Eigen::MatrixXd deltas_;
  std::vector<std::uint8_t> leverage_one_;
};

AttributionResult das_score(const AveragedFeatures& target, const std::vector<AveragedFeatures>& train,
                            FeatureMode mode, double lambda);

/// DAS restricted to one timestep: kernel, targets and residuals come from
/// the entries at timestep t only. With several draws at t, the scores of
/// the matching draws are averaged.
AttributionResult das_per_timestep(const SampleFeatures& target, const std::vector<SampleFeatures>& train, int t,
                                   double lambda);

// ---------------------------------------------------------------------------
// Single-row kernel methods (TRAK family)

/// H = Phi^T Phi + lambda I over one feature vector per training sample, with
/// W = H^{-1} Phi^T cached.
class KernelScorer {
 public:
  KernelScorer(const std::vector<Eigen::VectorXd>& phi, double lambda);

  const Kernel& kernel() const { return kernel_; }
  /// phi_target^T H^{-1} phi_i for every i.
  Eigen::VectorXd inner(const Eigen::VectorXd& target) const { return solved_.transpose() * target; }
  const Eigen::VectorXd& solved_norms() const { return solved_norms_; }
  const Eigen::VectorXd& feature_norms() const { return feature_norms_; }

 private:
  Kernel kernel_;
  Eigen::MatrixXd solved_;  // k x n
  Eigen::VectorXd solved_norms_;
  Eigen::VectorXd feature_norms_;
};

/// Row vector of a single-row averaged feature; throws ConfigError otherwise.
Eigen::VectorXd feature_vector(const AveragedFeatures& f);
std::vector<Eigen::VectorXd> feature_vectors(const std::vector<AveragedFeatures>& fs);
/// TRAK's per-sample residual factor: ||r_bar||.
Eigen::VectorXd trak_residuals(const std::vector<AveragedFeatures>& train);

/// Mode check shared by the scorers: throws ConfigError naming the method.
void require_mode(const std::string& method, FeatureMode have, FeatureMode want);

Eigen::VectorXd trak(const KernelScorer& k, const Eigen::VectorXd& target, const Eigen::VectorXd& residuals);
Eigen::VectorXd dtrak(const KernelScorer& k, const Eigen::VectorXd& target);
Eigen::VectorXd relative_if(const KernelScorer& k, const Eigen::VectorXd& target, const Eigen::VectorXd& residuals);
Eigen::VectorXd renormalized_if(const KernelScorer& k, const Eigen::VectorXd& target,
                                const Eigen::VectorXd& residuals);
/// Mean of trak() over the targets of a sampling trajectory.
Eigen::VectorXd journey_trak(const KernelScorer& k, const std::vector<Eigen::VectorXd>& trajectory_targets,
                             const Eigen::VectorXd& residuals);

// ---------------------------------------------------------------------------
// Similarity baselines

Eigen::VectorXd dot_scores(const Eigen::VectorXd& target, const std::vector<Eigen::VectorXd>& train);
/// Cosine similarity; pairs involving a zero vector score 0.
Eigen::VectorXd cos_scores(const Eigen::VectorXd& target, const std::vector<Eigen::VectorXd>& train);

/// Mean over checkpoints of the dot (TracInCP) or cosine (GAS) scores.
/// Index c of both arguments refers to checkpoint c.
Eigen::VectorXd tracincp(const std::vector<Eigen::VectorXd>& target_per_ckpt,
                         const std::vector<std::vector<Eigen::VectorXd>>& train_per_ckpt);
Eigen::VectorXd gas(const std::vector<Eigen::VectorXd>& target_per_ckpt,
                    const std::vector<std::vector<Eigen::VectorXd>>& train_per_ckpt);

std::vector<Eigen::VectorXd> raw_vectors(const ddpm::Dataset& data);

/// Indices of the m training points with the highest raw-feature cosine to
/// the target, best first, ties by index.
std::vector<std::size_t> candidate_filter(const Eigen::VectorXd& target, const ddpm::Dataset& train, std::size_t m);
/// Zeroes every score outside the candidate set.
Eigen::VectorXd apply_filter(const Eigen::VectorXd& scores, const std::vector<std::size_t>& candidates);

/// Retrains from the same initialization without sample i.
ddpm::NoisePredictor true_loo_oracle(const ddpm::Dataset& data, std::size_t i, const ddpm::TrainConfig& config);

}  // namespace das::attribution
