#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "das/ddpm/dataset.hpp"
#include "das/ddpm/predictor.hpp"
#include "das/ddpm/schedule.hpp"
#include "das/features/projection.hpp"

namespace das::features {

using ddpm::timestep_grid;

enum class FeatureKind { kExactJacobian = 0, kScalarizedGradient = 1 };

/// Scalar output whose gradient is taken in ScalarizedGradient mode.
enum class Scalarizer {
  kSimpleLoss = 0,  // ||eps_theta - eps||^2
  kSquareNorm = 1,  // ||eps_theta||^2
  kOutputSum = 2,   // sum_c eps_theta_c
  kOutputMean = 3,  // mean_c eps_theta_c
};

struct FeatureMode {
  FeatureKind kind = FeatureKind::kExactJacobian;
  Scalarizer scalarizer = Scalarizer::kSimpleLoss;  // ignored for ExactJacobian

  /// Rows of one feature block: d for ExactJacobian, 1 otherwise.
  int rows(int data_dim) const { return kind == FeatureKind::kExactJacobian ? data_dim : 1; }
  friend bool operator==(const FeatureMode&, const FeatureMode&) = default;
};

inline constexpr FeatureMode kJacobianMode{FeatureKind::kExactJacobian, Scalarizer::kSimpleLoss};
inline constexpr FeatureMode kLossGradientMode{FeatureKind::kScalarizedGradient, Scalarizer::kSimpleLoss};

/// Names: "jacobian", "loss", "square-norm", "output-sum", "output-mean".
std::string to_string(FeatureMode mode);
FeatureMode parse_feature_mode(const std::string& name);

/// Per-timestep gradient features of one sample. Entry j pairs the block
/// g (rows x k) with the residual r = eps_theta(x_t, t) - eps at
/// timesteps[j]; a timestep appears once per noise draw.
struct SampleFeatures {
  int id = 0;
  std::vector<int> timesteps;
  std::vector<Eigen::MatrixXd> blocks;
  std::vector<Eigen::VectorXd> residuals;
};

/// Exact (bitwise for finite values) equality of ids, timesteps and entries.
bool operator==(const SampleFeatures& a, const SampleFeatures& b);

struct AveragedFeatures {
  int id = 0;
  Eigen::MatrixXd g;  // rows x k
  Eigen::VectorXd r;  // d
  bool normalized = false;
};

struct ExtractOptions {
  int draws_per_timestep = 1;
  std::uint64_t noise_seed = 0;
  int jobs = 1;
  /// Upper bound on the bytes of one dense d x p Jacobian times the worker
  /// count, and on the bytes of the returned features.
  std::size_t memory_budget = std::size_t{1} << 30;
};

/// Feature block and residual for one (x_t, t, eps) triple. `eps` is only
/// used for the residual and for the SimpleLoss scalarizer.
Eigen::MatrixXd feature_block(const ddpm::NoisePredictor& model, const Eigen::VectorXd& x_t, int t,
                              const Eigen::VectorXd& eps, FeatureMode mode, const Projection& projection,
                              Eigen::VectorXd* residual = nullptr);

/// Features of every sample in `data` at the given timesteps. Noise for a
/// sample comes from the stream (noise_seed, sample id), so the result does
/// not depend on the worker count or on which other samples are present.
std::vector<SampleFeatures> extract_features(const ddpm::NoisePredictor& model, const ddpm::DiffusionSchedule& schedule,
                                             const ddpm::Dataset& data, const std::vector<int>& timesteps,
                                             FeatureMode mode, const Projection& projection,
                                             const ExtractOptions& options = {});

/// Per-coordinate energy normalization across timesteps, then the mean.
/// Coordinates with zero energy map to 0.
AveragedFeatures normalize_and_average(const SampleFeatures& features);
AveragedFeatures plain_average(const SampleFeatures& features);

std::vector<AveragedFeatures> average_all(const std::vector<SampleFeatures>& features, bool normalize);

/// Keeps only the entries at the given positions (e.g. one timestep).
SampleFeatures select_entries(const SampleFeatures& features, const std::vector<std::size_t>& entries);

}  // namespace das::features
